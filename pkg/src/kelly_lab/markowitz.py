"""Mean-variance frontiers for uncorrelated lognormal assets.

Includes the Capital Market Line (zero-rate cash available), the fully
invested Efficient Frontier, its no-short-selling version and the
small-parameter frontier built from ``m + D/2`` and ``D``.  The Kelly point of
the constrained small-parameter portfolio lies exactly on that last frontier.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .kelly import kelly_constrained
from .model import AssetUniverse

DEGENERACY_TOL = 1e-14


class DegenerateUniverse(ValueError):
    pass


@dataclass(frozen=True)
class MomentSums:
    """``C[k] = sum(mu^k / sigma^2)`` and ``C_tilde[k] = sum((m + D/2)^k / D)``."""

    C: tuple[float, float, float]
    C_tilde: tuple[float, float, float]


def power_sums(mean, var) -> tuple[float, float, float]:
    mean = np.asarray(mean, float)
    var = np.asarray(var, float)
    if np.any(var <= 0):
        raise ValueError("every asset needs positive variance")
    return tuple(float(np.sum(mean**k / var)) for k in range(3))


def moment_sums(universe: AssetUniverse, idx=None) -> MomentSums:
    u = universe if idx is None else universe.subset(idx)
    return MomentSums(power_sums(u.mu, u.sigma2), power_sums(u.m + u.D / 2, u.D))


def mv_fractions(universe: AssetUniverse, mu_P: float) -> np.ndarray:
    """Minimum-variance fractions for target return ``mu_P`` with cash available."""
    if mu_P < 0:
        raise ValueError("target return must be non-negative")
    C2 = moment_sums(universe).C[2]
    if C2 <= 0:
        raise DegenerateUniverse("C_2 vanishes: no asset has a non-zero mean return")
    return mu_P * universe.mu / (C2 * universe.sigma2)


def cml_sigma(universe: AssetUniverse, mu_P):
    C2 = moment_sums(universe).C[2]
    if C2 <= 0:
        raise DegenerateUniverse("C_2 vanishes")
    return np.asarray(mu_P) / math.sqrt(C2)


def _hyperbola(C, mu_P):
    C0, C1, C2 = C
    det = C0 * C2 - C1**2
    if det <= DEGENERACY_TOL * max(1.0, C0 * C2):
        raise DegenerateUniverse("frontier is degenerate (single or proportional assets)")
    mu_P = np.asarray(mu_P, float)
    return np.sqrt((C0 * mu_P**2 - 2 * C1 * mu_P + C2) / det)


def efficient_frontier(universe: AssetUniverse, mu_P):
    """Fully invested minimum ``sigma_P`` at expected return ``mu_P`` (shorting allowed)."""
    return _hyperbola(moment_sums(universe).C, mu_P)


def approx_frontier(universe: AssetUniverse, mu_P, idx=None):
    """:func:`efficient_frontier` with ``mu -> m + D/2`` and ``sigma^2 -> D``."""
    return _hyperbola(moment_sums(universe, idx).C_tilde, mu_P)


def ef_fractions(universe: AssetUniverse, mu_P: float) -> np.ndarray:
    """Fractions generating the fully invested frontier point at ``mu_P``."""
    C0, C1, C2 = moment_sums(universe).C
    det = C0 * C2 - C1**2
    a = (C2 - C1 * mu_P) / det
    b = (C0 * mu_P - C1) / det
    return (a + b * universe.mu) / universe.sigma2


@dataclass(frozen=True)
class FrontierPoint:
    mu_P: float
    sigma_P: float
    fractions: np.ndarray | None = None


def _subset_solution(mu, var, target):
    """Equality-constrained minimiser on a fixed asset subset.

    Returns fractions ``(a + b mu)/var`` and the pair ``(a, b)``; when the
    subset's returns are all equal only the budget constraint is kept.
    """
    C0, C1, C2 = power_sums(mu, var)
    w = 1 / var
    # pairwise forms of C0 C2 - C1^2 and of a + b mu avoid cancellation
    # when the returns are close to each other
    diff = mu[None, :] - mu[:, None]
    det = 0.5 * float(w @ diff**2 @ w)
    if det <= DEGENERACY_TOL * max(1.0, C0 * C2):
        a, b = 1 / C0, 0.0
        return w / C0, a, b
    a, b = (C2 - C1 * target) / det, (C0 * target - C1) / det
    num = (diff * (mu - target)[None, :]) @ w
    return w * num / det, a, b


def _min_variance_qp(mu: np.ndarray, var: np.ndarray, target: float, q0: np.ndarray,
                     max_iter: int = 500) -> np.ndarray:
    """Primal active-set method for ``min sum(var q^2)`` subject to
    ``sum(q) = 1``, ``mu @ q = target``, ``q >= 0``, from the feasible ``q0``."""
    q = q0.copy()
    at_zero = q <= 0
    for _ in range(max_iter):
        free = np.flatnonzero(~at_zero)
        q_new, a, b = _subset_solution(mu[free], var[free], target)
        p = q_new - q[free]
        if np.max(np.abs(p)) <= 1e-12 * max(1.0, np.max(np.abs(q))):
            q[free] = q_new
            fixed = np.flatnonzero(at_zero)
            if not len(fixed):
                return q
            # multipliers of the q_j >= 0 bounds (stationarity: 2 var q = a + b mu + nu)
            nu = -(a + b * mu[fixed]) * 2
            j = int(np.argmin(nu))
            if nu[j] >= -1e-13:
                return q
            at_zero[fixed[j]] = False
            continue
        alpha, block = 1.0, None
        for k, i in enumerate(free):
            if p[k] < 0 and -q[i] / p[k] < alpha:
                alpha, block = -q[i] / p[k], i
        q[free] += alpha * p
        if block is not None:
            q[block] = 0.0
            at_zero[block] = True
    raise RuntimeError("active-set iteration did not terminate")


def _feasible_start(mu: np.ndarray, target: float) -> np.ndarray:
    lo, hi = int(np.argmin(mu)), int(np.argmax(mu))
    q = np.zeros(len(mu))
    if mu[hi] == mu[lo]:
        q[hi] = 1.0
        return q
    t = (target - mu[lo]) / (mu[hi] - mu[lo])
    q[hi], q[lo] = t, 1 - t
    return q


def constrained_frontier_point(universe: AssetUniverse, target: float, tol: float = 1e-12) -> FrontierPoint:
    mu, var = universe.mu, universe.sigma2
    lo, hi = float(mu.min()), float(mu.max())
    if target < lo - tol or target > hi + tol:
        raise ValueError(f"target {target} outside the attainable range [{lo}, {hi}]")
    target = min(max(target, lo), hi)
    if target in (lo, hi) and np.count_nonzero(mu == target) == 1:
        q = (mu == target).astype(float)
        return FrontierPoint(target, float(math.sqrt(var[mu == target][0])), q)
    q = _min_variance_qp(mu, var, target, _feasible_start(mu, target))
    q = np.where(q > 0, q, 0.0)
    return FrontierPoint(float(q @ mu), float(math.sqrt(np.sum(q**2 * var))), q)


def constrained_frontier(universe: AssetUniverse, mu_grid) -> list[FrontierPoint]:
    """No-short-selling fully invested frontier evaluated at each target return."""
    return [constrained_frontier_point(universe, float(t)) for t in mu_grid]


def constrained_enumerate(universe: AssetUniverse, target: float) -> FrontierPoint:
    """Brute-force oracle: best non-negative closed-form solution over all subsets."""
    mu, var = universe.mu, universe.sigma2
    best = None
    n = len(mu)
    for size in range(1, n + 1):
        for s in itertools.combinations(range(n), size):
            s = list(s)
            C = power_sums(mu[s], var[s])
            det = C[0] * C[2] - C[1] ** 2
            if size == 1 or det <= 1e-14:
                if np.allclose(mu[s], target, rtol=0, atol=1e-12):
                    qs = (1 / var[s]) / np.sum(1 / var[s])
                else:
                    continue
            else:
                a = (C[2] - C[1] * target) / det
                b = (C[0] * target - C[1]) / det
                qs = (a + b * mu[s]) / var[s]
            if np.any(qs < -1e-12):
                continue
            q = np.zeros(n)
            q[s] = np.maximum(qs, 0)
            sig = math.sqrt(np.sum(q**2 * var))
            if best is None or sig < best.sigma_P - 1e-15:
                best = FrontierPoint(float(q @ mu), sig, q)
    return best


@dataclass(frozen=True)
class KellyPoint:
    mu_K: float
    sigma_K: float
    active_set: tuple[int, ...]


def kelly_point(universe: AssetUniverse) -> KellyPoint:
    """Small-parameter coordinates of the constrained Kelly portfolio."""
    active = kelly_constrained(universe).active_set
    if not active:
        raise ValueError("the constrained Kelly portfolio holds no risky asset")
    C0, C1, C2 = moment_sums(universe, active).C_tilde
    det = C0 * C2 - C1**2
    return KellyPoint((det + C1) / C0, math.sqrt((det + 1) / C0), active)


def on_frontier_residual(universe: AssetUniverse) -> float:
    """``|sigma_K^2 - sigma_approx(mu_K)^2|`` on the Kelly active set."""
    kp = kelly_point(universe)
    if len(kp.active_set) == 1:
        # the frontier of one asset is the single point (m + D/2, sqrt(D))
        a = universe.assets[kp.active_set[0]]
        return abs(kp.sigma_K**2 - a.D) + abs(kp.mu_K - (a.m + a.D / 2))
    s = float(approx_frontier(universe, kp.mu_K, kp.active_set))
    return abs(kp.sigma_K**2 - s**2)


def distance_to_constrained_frontier(universe: AssetUniverse, sigma: float, mu: float) -> float:
    """Euclidean distance in the ``(sigma, mu)`` plane to the no-short frontier."""
    lo, hi = float(universe.mu.min()), float(universe.mu.max())

    def dist(t):
        p = constrained_frontier_point(universe, t)
        return math.hypot(p.sigma_P - sigma, p.mu_P - mu)

    grid = np.linspace(lo, hi, 201)
    d = np.array([dist(t) for t in grid])
    k = int(np.argmin(d))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(dist, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    return float(min(res.fun, d[k]))
