"""Kelly-optimal investment fractions.

Three routes to the optimum of ``v(q) = E[ln(1 + q @ R)]`` under
``q >= 0, sum(q) <= 1``:

* closed forms valid for small ``m``, ``D`` (``q = 1/2 + m/D``),
* the constrained small-parameter solution ``q_i = 1/2 + (m_i + gamma)/D_i``
  with greedy elimination of assets that come out non-positive,
* a numerical projected-gradient maximiser on quadrature nodes, used as the
  ground truth.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .expectation import ExpectationMethod, GaussianNodes, growth_stats, universe_nodes
from .model import AssetUniverse


class ConvergenceError(RuntimeError):
    """The numerical solver ran out of iterations; carries the best iterate."""

    def __init__(self, message: str, fractions: np.ndarray, residual: float):
        super().__init__(message)
        self.fractions = fractions
        self.residual = residual


def profitability_thresholds(D: float) -> tuple[float, float]:
    """``(m_<, m_>)``: investing starts at ``m = -D/2`` and is total at ``m = D/2``."""
    if D < 0:
        raise ValueError("D must be non-negative")
    return -D / 2, D / 2


def kelly_fraction_single(m: float, D: float) -> float:
    if D < 0:
        raise ValueError("D must be non-negative")
    if D == 0:
        # riskless "risky" asset: all in when it beats cash, otherwise nothing
        return 1.0 if m > 0 else 0.0
    return min(max(0.5 + m / D, 0.0), 1.0)


def first_order_correction(m: float, D: float) -> float:
    if D <= 0:
        raise ValueError("D must be positive")
    return m * (4 * m**2 - D**2) / (4 * D**2)


def _require_risky(universe: AssetUniverse) -> None:
    if np.any(universe.D <= 0):
        raise ValueError("every asset needs D > 0 (a zero-variance asset duplicates cash)")


def kelly_unconstrained(universe: AssetUniverse) -> np.ndarray:
    _require_risky(universe)
    return 0.5 + universe.m / universe.D


@dataclass(frozen=True)
class ConstrainedSolution:
    fractions: np.ndarray
    active_set: tuple[int, ...]
    gamma: float | None
    binding: bool

    def to_dict(self) -> dict:
        return {
            "fractions": self.fractions.tolist(),
            "gamma": self.gamma,
            "active_set": list(self.active_set),
            "binding": self.binding,
        }


def _binding_fractions(m: np.ndarray, D: np.ndarray, active: list[int]) -> tuple[np.ndarray, float]:
    """Fractions on ``active`` with ``sum(q) = 1`` imposed through gamma."""
    ma, Da = m[active], D[active]
    gamma = (1 - np.sum(0.5 + ma / Da)) / np.sum(1 / Da)
    return 0.5 + (ma + gamma) / Da, float(gamma)


def kelly_constrained(universe: AssetUniverse) -> ConstrainedSolution:
    """Small-parameter Kelly portfolio without shorting or borrowing.

    If the clipped unconstrained fractions fit in the budget they are the
    answer.  Otherwise ``sum(q) = 1`` is imposed and the asset with the most
    negative fraction is dropped until every remaining fraction is positive.
    """
    _require_risky(universe)
    m, D = universe.m, universe.D
    raw = 0.5 + m / D
    clipped = np.where(raw > 0, raw, 0.0)
    if np.sum(clipped) <= 1:
        active = tuple(int(i) for i in np.flatnonzero(clipped > 0))
        return ConstrainedSolution(clipped, active, None, False)

    active = list(range(len(m)))
    while True:
        qa, gamma = _binding_fractions(m, D, active)
        worst = int(np.argmin(qa))
        if qa[worst] > 0:
            break
        del active[worst]
        if not active:
            raise RuntimeError("elimination emptied the active set although the budget was binding")
    q = np.zeros(len(m))
    q[active] = qa
    return ConstrainedSolution(q, tuple(active), gamma, True)


def approx_growth(q, universe: AssetUniverse) -> float:
    """Quadratic small-parameter growth ``sum(q (m + D/2)) - sum(q^2 D)/2``."""
    q = np.asarray(q, float)
    return float(q @ (universe.m + universe.D / 2) - 0.5 * np.sum(q**2 * universe.D))


def kelly_enumerate(universe: AssetUniverse) -> ConstrainedSolution:
    """Brute-force counterpart of :func:`kelly_constrained`.

    Every non-empty subset is solved in closed form, both without the budget
    constraint and with ``sum(q) = 1``; among feasible candidates the one with
    the largest quadratic growth wins (smallest subset, then lexicographic
    order on ties).
    """
    _require_risky(universe)
    m, D = universe.m, universe.D
    n = len(m)
    best = ConstrainedSolution(np.zeros(n), (), None, False)
    best_v = 0.0
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            s = list(subset)
            free = 0.5 + m[s] / D[s]
            cands = []
            if np.all(free > 0) and free.sum() <= 1:
                cands.append((free, None, False))
            qb, gamma = _binding_fractions(m, D, s)
            if np.all(qb > 0):
                cands.append((qb, gamma, True))
            for qa, g, binding in cands:
                q = np.zeros(n)
                q[s] = qa
                val = approx_growth(q, universe)
                if val > best_v + 1e-15:
                    best, best_v = ConstrainedSolution(q, subset, g, binding), val
    return best


# --- numerical maximiser ---------------------------------------------------


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-10
    max_iterations: int = 5000
    method: ExpectationMethod | None = None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class NumericalSolution:
    fractions: np.ndarray
    v: float
    residual: float
    iterations: int
    grad: np.ndarray = field(repr=False)


def project_capped_simplex(y) -> np.ndarray:
    """Euclidean projection onto ``{q >= 0, sum(q) <= 1}``.

    Clipping suffices when the clipped point fits the budget; otherwise the
    point is projected onto the unit simplex by the sort-and-threshold rule.
    """
    y = np.asarray(y, float)
    clipped = np.maximum(y, 0.0)
    if clipped.sum() <= 1:
        return clipped
    return project_simplex(y)


def project_simplex(y) -> np.ndarray:
    """Euclidean projection onto ``{q >= 0, sum(q) = 1}``."""
    y = np.asarray(y, float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1
    k = np.arange(1, len(y) + 1)
    rho = np.count_nonzero(u - css / k > 0)
    return np.maximum(y - css[rho - 1] / rho, 0.0)


def kkt_residual(q, grad, projection=project_capped_simplex) -> float:
    """Sup-norm of the projected-gradient map ``q - P(q + grad)``."""
    return float(np.max(np.abs(q - projection(q + grad))))


def kelly_numerical(universe: AssetUniverse, options: SolverOptions | None = None,
                    start=None, nodes: GaussianNodes | None = None,
                    fully_invested: bool = False) -> NumericalSolution:
    """Maximise ``E[ln W1]`` over the feasible set by projected gradient ascent.

    The feasible set is ``{q >= 0, sum(q) <= 1}``, or the unit simplex when
    ``fully_invested``.  Steps use a Barzilai-Borwein length with Armijo
    backtracking along the projection arc.  Raises :class:`ConvergenceError`
    when the KKT residual is still above ``options.tolerance`` after
    ``max_iterations``.
    """
    proj = project_simplex if fully_invested else project_capped_simplex
    options = options or SolverOptions()
    _require_risky(universe)
    nodes = nodes or universe_nodes(universe, options.method)
    if start is None:
        start = kelly_constrained(universe).fractions
    q = proj(start)
    stats = growth_stats(q, universe, nodes=nodes)
    step = 1.0 / max(float(np.max(universe.D)), 1e-12)
    best = (kkt_residual(q, stats.grad, proj), q, stats)
    for it in range(1, options.max_iterations + 1):
        res = kkt_residual(q, stats.grad, proj)
        if res < best[0]:
            best = (res, q, stats)
        if res <= options.tolerance:
            return NumericalSolution(q, stats.v, res, it - 1, stats.grad)
        while True:
            cand = proj(q + step * stats.grad)
            d = cand - q
            new = growth_stats(cand, universe, nodes=nodes)
            if new.v >= stats.v + 1e-4 * (stats.grad @ d) or np.max(np.abs(d)) < 1e-15:
                break
            step *= 0.5
        s = cand - q
        y = new.grad - stats.grad
        curv = -(s @ y)
        step = (s @ s) / curv if curv > 1e-300 else step * 2
        step = min(max(step, 1e-6), 1e12)
        q, stats = cand, new
    res, q, stats = best
    if res <= options.tolerance:
        return NumericalSolution(q, stats.v, res, options.max_iterations, stats.grad)
    raise ConvergenceError(f"no convergence after {options.max_iterations} iterations (residual {res:.3g})", q, res)


def active_set_of(q, tol: float = 0.0) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(np.asarray(q) > tol))


def single_asset_numerical(m: float, D: float, options: SolverOptions | None = None) -> float:
    """Convenience wrapper: numerical optimum for one asset."""
    u = AssetUniverse.from_params([m], [D])
    return float(kelly_numerical(u, options, start=[0.5]).fractions[0])

