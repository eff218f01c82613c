"""Portfolio condensation: when the Kelly portfolio keeps only a few assets.

Covers the two-asset phase diagram, the equal-volatility selection rule, the
typical portfolio size for uniformly distributed ``m``, the inverse
participation ratio and the single-asset condensation threshold for a
power-law tail of ``m``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import rng

LN2 = math.log(2.0)
#: large-n limit constant for the median of the second largest draw
SECOND_MEDIAN_CONSTANT = 1.68
# raw fractions this close to 1 count as fully invested (grid points on boundary lines)
BOUNDARY_TOL = 1e-12


class PhaseRegion(str, enum.Enum):
    A = "A"      # cash only
    B1 = "B1"    # part asset 1, rest cash
    B2 = "B2"
    C = "C"      # both assets, rest cash
    D1 = "D1"    # all in asset 1, asset 2 unprofitable
    D2 = "D2"
    E = "E"      # fully invested in both
    F1 = "F1"    # all in asset 1 although asset 2 is profitable
    F2 = "F2"


def condensation_thresholds(m2: float, D1: float, D2: float) -> tuple[float, float]:
    """``(m1'', m1')``: below/above these, the portfolio holds only asset 2/asset 1."""
    if D1 <= 0 or D2 <= 0:
        raise ValueError("variances must be positive")
    half = (D1 + D2) / 2
    return m2 - half, m2 + half


def two_asset_phase(m1: float, m2: float, D1: float, D2: float) -> PhaseRegion:
    """Region of the two-asset phase diagram containing ``(m1, m2)``.

    Boundaries follow the constrained small-parameter solution: an asset whose
    raw fraction ``1/2 + m/D`` is exactly zero is left out, and a raw fraction
    (or raw sum) within ``BOUNDARY_TOL`` of one counts as fully invested.  On the two
    condensation lines the less condensed region (E) wins.
    """
    if D1 <= 0 or D2 <= 0:
        raise ValueError("variances must be positive")
    u1, u2 = 0.5 + m1 / D1, 0.5 + m2 / D2
    p1, p2 = u1 > 0, u2 > 0
    full = 1 - BOUNDARY_TOL
    if not p1 and not p2:
        return PhaseRegion.A
    if p1 and not p2:
        return PhaseRegion.D1 if u1 >= full else PhaseRegion.B1
    if p2 and not p1:
        return PhaseRegion.D2 if u2 >= full else PhaseRegion.B2
    if u1 + u2 <= 1:
        return PhaseRegion.E if u1 + u2 >= full else PhaseRegion.C
    low, high = condensation_thresholds(m2, D1, D2)
    if m1 > high:
        return PhaseRegion.F1
    if m1 < low:
        return PhaseRegion.F2
    return PhaseRegion.E


def phase_grid(m_values, D1: float = 0.1, D2: float = 0.2) -> list[tuple[float, float, PhaseRegion]]:
    return [(float(a), float(b), two_asset_phase(a, b, D1, D2)) for b in m_values for a in m_values]


# --- equal volatility ---------------------------------------------------------


@dataclass(frozen=True)
class CondensationReport:
    M: int
    ipr: float
    M_T: float | None = None
    gamma_M: float | None = None


@dataclass(frozen=True)
class EqualVolResult:
    fractions: np.ndarray
    report: CondensationReport

    @property
    def active_set(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.fractions > 0))


def ipr(fractions) -> float:
    """Inverse participation ratio ``(sum q)^2 / sum(q^2)``.

    For a fully invested portfolio this is ``1 / sum(q^2)``; normalising by
    the invested total keeps it at most the number of held assets otherwise.
    """
    q = np.asarray(fractions, float)
    s = float(np.sum(q**2))
    if s == 0:
        raise ValueError("inverse participation ratio of an empty portfolio")
    return float(np.sum(q)) ** 2 / s


def equal_vol_portfolio(ms, D: float) -> EqualVolResult:
    """Kelly portfolio for assets sharing the variance ``D``.

    ``ms`` may come in any order; assets are ranked by decreasing ``m`` (ties
    by index) and the result is returned in the input order.  With a binding
    budget the portfolio grows from the best asset while
    ``m_M + D/M > mean(m_1..m_M)``.
    """
    if D <= 0:
        raise ValueError("D must be positive")
    ms = np.asarray(ms, float)
    order = np.argsort(-ms, kind="stable")
    srt = ms[order]
    raw = 0.5 + srt / D
    clipped = np.where(raw > 0, raw, 0.0)
    q_sorted = np.zeros(len(ms))
    gamma = None
    if clipped.sum() <= 1:
        q_sorted = clipped
        M = int(np.count_nonzero(clipped))
    else:
        M = 0
        csum = 0.0
        for k, mk in enumerate(srt, start=1):
            csum += mk
            if not mk + D / k > csum / k:
                break
            M = k
        top = srt[:M]
        gamma = float(D * (1 / M - 0.5) - top.mean())
        q_sorted[:M] = 0.5 + (top + gamma) / D
    q = np.empty(len(ms))
    q[order] = q_sorted
    R = ipr(q) if M else 0.0
    return EqualVolResult(q, CondensationReport(M, R, None, gamma))


def equal_vol_batch(ms_sorted: np.ndarray, D: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`equal_vol_portfolio` for rows already sorted descending.

    Returns ``(M, fractions, ipr)`` per row; all-cash rows get ``ipr = 0``.
    """
    reps, n = ms_sorted.shape
    raw = 0.5 + ms_sorted / D
    clipped = np.where(raw > 0, raw, 0.0)
    free = clipped.sum(axis=1) <= 1
    k = np.arange(1, n + 1)
    csum = np.cumsum(ms_sorted, axis=1)
    fails = ~(ms_sorted + D / k > csum / k)
    Mb = np.where(fails.any(axis=1), fails.argmax(axis=1), n)
    Mb1 = np.maximum(Mb, 1)
    gamma = D * (1 / Mb1 - 0.5) - csum[np.arange(reps), Mb1 - 1] / Mb1
    qb = np.where(k <= Mb[:, None], 0.5 + (ms_sorted + gamma[:, None]) / D, 0.0)
    q = np.where(free[:, None], clipped, qb)
    M = np.where(free, np.count_nonzero(clipped, axis=1), Mb)
    s2 = np.sum(q**2, axis=1)
    R = np.divide(np.sum(q, axis=1) ** 2, s2, out=np.zeros(reps), where=s2 > 0)
    return M, q, R


def equal_vol_enumerate(ms, D: float) -> tuple[int, ...]:
    """Brute-force active set: best feasible subset under the quadratic growth."""
    from .kelly import kelly_enumerate
    from .model import AssetUniverse

    ms = np.asarray(ms, float)
    return kelly_enumerate(AssetUniverse.from_params(ms, np.full(len(ms), D))).active_set


# --- uniform distribution of m --------------------------------------------------


@dataclass(frozen=True)
class UniformSpec:
    N: int
    D: float
    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("need b > a")
        if self.N < 1 or self.D <= 0:
            raise ValueError("need N >= 1 and D > 0")

    @classmethod
    def centered(cls, N: int, D: float, x: float, L: float) -> "UniformSpec":
        return cls(N, D, x - L, x + L)

    def mean_order_statistic(self, i):
        """Expected ``i``-th largest of ``N`` uniform draws."""
        return self.b - (self.b - self.a) * np.asarray(i, float) / (self.N + 1)


def typical_size_uniform(spec: UniformSpec) -> float:
    """Typical portfolio size ``M_T`` (real valued)."""
    N, D, a, b = spec.N, spec.D, spec.a, spec.b
    if b + D / 2 < 0:
        return 0.0
    saturated = math.sqrt(2 * N * D / (b - a))
    if spec.mean_order_statistic(saturated) + D / 2 > 0:
        return saturated
    return N * (b + D / 2) / (b - a)


def typical_ipr(M_T: float, spec: UniformSpec) -> tuple[float, float]:
    """Typical inverse participation ratio: ``(full expression, 3 M_T / 4)``."""
    B = (spec.b - spec.a) / (spec.D * (spec.N + 1))
    full = 1.0 / (B**2 * M_T * (M_T + 1) * (2 * M_T + 1) / 6)
    return full, 0.75 * M_T


def typical_return_uniform(spec: UniformSpec) -> float:
    """``sum(q mu)`` of the portfolio built on the mean order statistics."""
    ms = spec.mean_order_statistic(np.arange(1, spec.N + 1))
    q = equal_vol_portfolio(ms, spec.D).fractions
    return float(q @ np.expm1(ms + spec.D / 2))


@dataclass(frozen=True)
class UniformMonteCarlo:
    mean_M: float
    mean_ipr: float
    mean_mu_P: float
    n_reps: int


def mc_uniform(spec: UniformSpec, n_reps: int, seed: int) -> UniformMonteCarlo:
    """Average realised size, IPR and return over draws of ``m ~ U[a, b]``."""
    tot_M = tot_R = tot_mu = 0.0
    for blk, start, stop in rng.blocks(n_reps, 1024):
        g = rng.stream(seed, rng.PURPOSE_CONDENSATION, blk)
        ms = -np.sort(-g.uniform(spec.a, spec.b, (stop - start, spec.N)), axis=1)
        M, q, R = equal_vol_batch(ms, spec.D)
        tot_M += M.sum()
        tot_R += R.sum()
        tot_mu += np.sum(q * np.expm1(ms + spec.D / 2))
    return UniformMonteCarlo(tot_M / n_reps, tot_R / n_reps, tot_mu / n_reps, n_reps)


# --- power-law tail -------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawSpec:
    N: int
    r: float
    m_min: float
    alpha: float | None = None

    def __post_init__(self):
        if not 0 < self.r <= 1:
            raise ValueError("r must lie in (0, 1]")
        if self.m_min <= 0:
            raise ValueError("m_min must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def n_tail(self) -> int:
        return int(round(self.N * self.r))


def top_two_median_constants(n: int) -> tuple[float, float]:
    """Exact ``c1, c2`` with median of the k-th largest Pareto draw ``m_min (n/c_k)^(1/alpha)``.

    For the largest, ``(1 - s)^n = 1/2``; for the second largest
    ``(1 - s)^n + n s (1 - s)^(n-1) = 1/2``, with ``s`` the tail probability.
    As ``n`` grows, ``c1 -> ln 2`` and ``c2 -> 1.678...``.
    """
    if n < 2:
        raise ValueError("need at least two tail assets")
    s1 = -math.expm1(math.log(0.5) / n)

    def second(s):
        return math.exp(n * math.log1p(-s)) + n * s * math.exp((n - 1) * math.log1p(-s)) - 0.5

    s2 = brentq(second, 1e-15, 1 - 1e-15, xtol=1e-16)
    return n * s1, n * s2


def median_gap(alpha: float, n: int, m_min: float, c1: float = LN2, c2: float = SECOND_MEDIAN_CONSTANT) -> float:
    """``m_min ((n/c1)^(1/alpha) - (n/c2)^(1/alpha))``, evaluated in log space."""
    l1, l2 = math.log(n / c1) / alpha, math.log(n / c2) / alpha
    if l2 > 700:
        return math.inf
    return m_min * math.exp(l2) * math.expm1(l1 - l2)


def powerlaw_alpha1(spec: PowerLawSpec, D: float, exact_constants: bool = False,
                    bracket: tuple[float, float] = (0.01, 100.0)) -> float | None:
    """Exponent below which the portfolio typically holds only the top asset.

    Solves ``median(m_1) - median(m_2) = D``; returns ``None`` when no root
    lies inside ``bracket``.
    """
    n = spec.n_tail
    if n < 2:
        raise ValueError("need N r >= 2")
    if D <= 0:
        raise ValueError("D must be positive")
    c1, c2 = top_two_median_constants(n) if exact_constants else (LN2, SECOND_MEDIAN_CONSTANT)

    def f(a):
        return median_gap(a, n, spec.m_min, c1, c2) - D

    lo, hi = bracket
    if not (f(lo) > 0 > f(hi)):
        return None
    return brentq(f, lo, hi, xtol=1e-12)


def _top_two_uniforms(spec: PowerLawSpec, n_trials: int, seed: int) -> np.ndarray:
    """Per trial, the two smallest of ``N r`` uniforms (they map to the two
    largest Pareto draws for every ``alpha``)."""
    out = np.empty((n_trials, 2))
    for blk, start, stop in rng.blocks(n_trials):
        U = rng.stream(seed, rng.PURPOSE_POWERLAW, blk).random((stop - start, spec.n_tail))
        out[start:stop] = np.sort(np.partition(U, 1, axis=1)[:, :2], axis=1)
    return out


def _pareto_gaps(u: np.ndarray, alpha: float, m_min: float) -> np.ndarray:
    # inverse transform m = m_min U^(-1/alpha)
    return m_min * (u[:, 0] ** (-1 / alpha) - u[:, 1] ** (-1 / alpha))


def mc_condensation_prob(spec: PowerLawSpec, D: float, n_trials: int, seed: int) -> tuple[float, float]:
    """Monte Carlo ``P(m_1 - m_2 > D)`` and its binomial standard error."""
    if spec.alpha is None:
        raise ValueError("spec.alpha is required")
    if n_trials < 1000:
        raise ValueError("need at least 1000 trials")
    gaps = _pareto_gaps(_top_two_uniforms(spec, n_trials, seed), spec.alpha, spec.m_min)
    p = float(np.mean(gaps > D))
    return p, math.sqrt(max(p * (1 - p), 0.0) / n_trials)


def mc_alpha1(spec: PowerLawSpec, D: float, n_trials: int, seed: int,
              bracket: tuple[float, float] = (0.05, 100.0)) -> float | None:
    """Root of ``P(m_1 - m_2 > D) = 1/2`` in ``alpha``.

    The same uniforms are reused for every ``alpha``, so the estimate is the
    ``alpha`` at which the sample median gap equals ``D``.
    """
    u = _top_two_uniforms(spec, n_trials, seed)

    def f(a):
        return float(np.median(_pareto_gaps(u, a, spec.m_min))) - D

    lo, hi = bracket
    with np.errstate(over="ignore", invalid="ignore"):
        while not np.isfinite(f(lo)) and lo < hi:
            lo *= 1.5
        if not f(lo) > 0 > f(hi):
            return None
        return brentq(f, lo, hi, xtol=1e-10)
