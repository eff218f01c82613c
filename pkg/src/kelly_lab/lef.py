"""Logarithmic Efficient Frontier.

For a target growth ``v_P = E[ln W1]`` and full investment ``sum(q) = 1`` the
LEF portfolio minimises ``Var(ln W1)``.  :func:`lef_point` does this directly
on quadrature nodes; :func:`lef_approx_system` solves the small-parameter
stationarity equations instead, which needs no integration at all.

Short positions are allowed unless ``no_short`` is requested.  A short
position gives ``W1 <= 0`` with positive probability, so expectations are
then taken over ``W1 > 0`` only and the dropped probability mass is reported;
points losing more than ``NONPHYSICAL_MASS`` are flagged.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize

from .expectation import ExpectationMethod, GaussianNodes, log_wealth_terms, universe_nodes
from .kelly import SolverOptions, kelly_numerical, project_simplex
from .markowitz import FrontierPoint
from .model import AssetUniverse

NONPHYSICAL_MASS = 1e-8
CONSTRAINT_TOL = 1e-8
SMALL_PARAMETER_WARN = 0.3


class LefError(RuntimeError):
    pass


@dataclass(frozen=True)
class LefSolution:
    fractions: np.ndarray
    v_P: float
    var_log: float
    gamma1: float
    gamma2: float
    truncated_mass: float = 0.0
    residual: float = 0.0

    @property
    def nonphysical(self) -> bool:
        return self.truncated_mass > NONPHYSICAL_MASS

    @property
    def has_short(self) -> bool:
        return bool(np.any(self.fractions < 0))


@dataclass(frozen=True)
class _Moments:
    v: float
    v2: float
    g1: np.ndarray      # dv/dq = E[R/W]
    g2: np.ndarray      # dE[(ln W)^2]/dq = E[2 ln W R/W]
    truncated_mass: float


def _moments(q, nodes: GaussianNodes, hessians: bool = False):
    t = log_wealth_terms(q, nodes)
    X = t.R / t.W[:, None]
    w = t.weights
    out = _Moments(float(w @ t.lnW), float(w @ t.lnW**2), w @ X, 2 * (w * t.lnW) @ X, t.truncated_mass)
    if not hessians:
        return out
    wX = X * w[:, None]
    H1 = -(wX.T @ X)
    H2 = 2 * ((wX * (1 - t.lnW)[:, None]).T @ X)
    return out, H1, H2


def log_moments(q, universe: AssetUniverse, method: ExpectationMethod | None = None) -> tuple[float, float, float]:
    """``(E[ln W1], E[(ln W1)^2], truncated mass)`` for any fraction vector."""
    m = _moments(q, universe_nodes(universe, method))
    return m.v, m.v2, m.truncated_mass


def _multipliers(g1, g2, free) -> tuple[float, float, float]:
    """Least-squares ``gamma1, gamma2`` for ``g2 + gamma1 g1 + gamma2 = 0`` on
    the free components; also returns the worst stationarity residual."""
    A = np.column_stack([g1[free], np.ones(len(free))])
    sol = np.linalg.lstsq(A, -g2[free], rcond=None)[0]
    res = g2[free] + A @ sol
    return float(sol[0]), float(sol[1]), float(np.max(np.abs(res))) if len(res) else 0.0


def _kkt_system(q, v_P, nodes, free, gamma1, gamma2):
    mom, H1, H2 = _moments(q, nodes, hessians=True)
    F = np.concatenate([
        mom.g2[free] + gamma1 * mom.g1[free] + gamma2,
        [mom.v - v_P, q.sum() - 1],
    ])
    k = len(free)
    J = np.zeros((k + 2, k + 2))
    J[:k, :k] = (H2 + gamma1 * H1)[np.ix_(free, free)]
    J[:k, k] = mom.g1[free]
    J[:k, k + 1] = 1.0
    J[k, :k] = mom.g1[free]
    J[k + 1, :k] = 1.0
    return F, J


def _polish(q, v_P, nodes, free, gamma1, gamma2, iters: int = 30):
    """Newton iterations on the KKT system restricted to the ``free`` assets.

    A step is kept only if it shrinks the residual, so the polish never makes
    the optimiser's answer worse.
    """
    k = len(free)
    F, J = _kkt_system(q, v_P, nodes, free, gamma1, gamma2)
    for _ in range(iters):
        norm = np.max(np.abs(F))
        if norm < 1e-14:
            break
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        q_new = q.copy()
        q_new[free] += step[:k]
        g1_new, g2_new = gamma1 + step[k], gamma2 + step[k + 1]
        F_new, J_new = _kkt_system(q_new, v_P, nodes, free, g1_new, g2_new)
        if not np.max(np.abs(F_new)) < norm:
            break
        q, gamma1, gamma2, F, J = q_new, g1_new, g2_new, F_new, J_new
    return q, gamma1, gamma2


def _initial_guess(universe: AssetUniverse, v_P: float, no_short: bool) -> np.ndarray:
    """Small-parameter LEF fractions at ``v_P``, or equal weights if that fails."""
    n = len(universe)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            q = lef_approx_system(universe, v_P, no_short=no_short).fractions
    except LefError:
        q = np.full(n, 1.0 / n)
    if no_short:
        q = project_simplex(q)
    return q


def max_fully_invested_growth(universe: AssetUniverse, method: ExpectationMethod | None = None) -> tuple[float, np.ndarray]:
    """Largest ``E[ln W1]`` over the unit simplex and its maximiser."""
    if len(universe) == 1:
        return float(universe.m[0]), np.ones(1)
    sol = kelly_numerical(universe, SolverOptions(method=method), fully_invested=True)
    return sol.v, sol.fractions


def lef_point(universe: AssetUniverse, v_P: float, method: ExpectationMethod | None = None,
              no_short: bool = False, start=None) -> LefSolution:
    """Minimise ``E[(ln W1)^2] - v_P^2`` subject to ``E[ln W1] = v_P``, ``sum(q) = 1``."""
    nodes = universe_nodes(universe, method)
    n = len(universe)
    m = universe.m
    if n == 1:
        if abs(m[0] - v_P) > CONSTRAINT_TOL:
            raise LefError(f"a single asset only attains v_P = {m[0]}")
        mom = _moments(np.ones(1), nodes)
        g1, g2, _ = _multipliers(mom.g1, mom.g2, [0])
        return LefSolution(np.ones(1), v_P, mom.v2 - mom.v**2, g1, g2, mom.truncated_mass)
    if no_short:
        if v_P < m.min() - CONSTRAINT_TOL:
            raise LefError(f"v_P = {v_P} below the smallest asset growth {m.min()}")
        v_max, _ = max_fully_invested_growth(universe, method)
        if v_P > v_max + CONSTRAINT_TOL:
            raise LefError(f"v_P = {v_P} above the attainable maximum {v_max}")
        lows = np.flatnonzero(np.abs(m - m.min()) <= CONSTRAINT_TOL)
        if v_P <= m.min() + CONSTRAINT_TOL and len(lows) == 1:
            # concavity of v leaves the worst single asset as the only feasible point
            q = np.zeros(n)
            q[lows[0]] = 1.0
            mom = _moments(q, nodes)
            return LefSolution(q, v_P, mom.v2 - mom.v**2, math.nan, math.nan, mom.truncated_mass)

    q0 = np.asarray(start, float) if start is not None else _initial_guess(universe, v_P, no_short)

    def obj(q):
        mom = _moments(q, nodes)
        return mom.v2, mom.g2

    cons = [
        {"type": "eq", "fun": lambda q: _moments(q, nodes).v - v_P, "jac": lambda q: _moments(q, nodes).g1},
        {"type": "eq", "fun": lambda q: q.sum() - 1, "jac": lambda q: np.ones_like(q)},
    ]
    bounds = [(0.0, 1.0)] * n if no_short else None
    res = minimize(obj, q0, jac=True, method="SLSQP", constraints=cons, bounds=bounds,
                   options={"ftol": 1e-15, "maxiter": 500})
    q = np.asarray(res.x, float)
    if no_short:
        q = np.where(q > 1e-10, q, 0.0)
    free = np.flatnonzero(q > 0) if no_short else np.arange(n)
    mom = _moments(q, nodes)
    g1, g2, _ = _multipliers(mom.g1, mom.g2, free)
    q, g1, g2 = _polish(q, v_P, nodes, free, g1, g2)
    mom = _moments(q, nodes)
    g1, g2, stat = _multipliers(mom.g1, mom.g2, free)
    cres = max(abs(mom.v - v_P), abs(q.sum() - 1))
    if cres > CONSTRAINT_TOL or (no_short and np.any(q < -1e-12)):
        raise LefError(f"LEF optimisation failed at v_P = {v_P} (constraint residual {cres:.3g})")
    return LefSolution(q, v_P, mom.v2 - mom.v**2, g1, g2, mom.truncated_mass, stat)


def return_moments(q, universe: AssetUniverse) -> tuple[float, float]:
    """Exact ``(mu_P, sigma_P)`` of the portfolio return from lognormal moments."""
    q = np.asarray(q, float)
    mu = universe.mu
    a = universe.m + universe.D / 2
    cov = np.exp(a[:, None] + a[None, :]) * np.expm1(universe.cov)
    return float(q @ mu), float(math.sqrt(max(q @ cov @ q, 0.0)))


@dataclass(frozen=True)
class LefPoint:
    point: FrontierPoint
    solution: LefSolution


def lef_frontier(universe: AssetUniverse, v_grid, method: ExpectationMethod | None = None,
                 no_short: bool = False) -> list[LefPoint]:
    """LEF solutions along ``v_grid`` mapped to the ``(sigma_P, mu_P)`` plane.

    Each grid point is warm-started from the previous solution.
    """
    out = []
    prev = None
    for v in v_grid:
        start = prev.fractions if prev is not None and not np.isnan(prev.gamma1) else None
        sol = lef_point(universe, float(v), method, no_short, start)
        mu_P, sigma_P = return_moments(sol.fractions, universe)
        out.append(LefPoint(FrontierPoint(mu_P, sigma_P, sol.fractions), sol))
        prev = sol
    return out


# --- small-parameter system ----------------------------------------------------


def lef_equations(x, universe: AssetUniverse, v_P: float) -> np.ndarray:
    """Residuals of the N + 2 small-parameter LEF equations at ``x = (q, gamma1, gamma2)``."""
    m, D = universe.m, universe.D
    n = len(m)
    q, g1, g2 = x[:n], x[n], x[n + 1]
    a = m + D / 2
    cross = a * (q @ a - q * a)
    F = 2 * q * D + 2 * cross + g1 * (m + D / 2 * (1 - 2 * q)) + g2
    return np.concatenate([F, [q @ a - v_P, q.sum() - 1]])


def _lef_jacobian(x, universe: AssetUniverse) -> np.ndarray:
    m, D = universe.m, universe.D
    n = len(m)
    q, g1 = x[:n], x[n]
    a = m + D / 2
    J = np.zeros((n + 2, n + 2))
    J[:n, :n] = 2 * np.outer(a, a)
    J[:n, :n][np.diag_indices(n)] = 2 * D - g1 * D
    J[:n, n] = m + D / 2 * (1 - 2 * q)
    J[:n, n + 1] = 1.0
    J[n, :n] = a
    J[n + 1, :n] = 1.0
    return J


def _approx_single(universe: AssetUniverse, v_P: float) -> LefSolution:
    m, D = universe.m, universe.D
    a = m + D / 2
    if abs(a[0] - v_P) > CONSTRAINT_TOL:
        raise LefError(f"a single asset only attains v_P = {a[0]}")
    F0 = lef_equations(np.array([1.0, 0.0, 0.0]), universe, v_P)[0]
    # one stationarity equation, two multipliers: minimum-norm choice
    c = np.array([m[0] - D[0] / 2, 1.0])
    g = -F0 * c / (c @ c)
    return LefSolution(np.ones(1), v_P, float(D[0] - a[0] ** 2), float(g[0]), float(g[1]))


def _approx_pair(universe: AssetUniverse, v_P: float) -> LefSolution:
    """Two assets: both constraints fix ``q``; multipliers by least squares.

    At the end of the frontier the multiplier equations become singular
    (``gamma1`` diverges), so ``residual`` reports the stationarity mismatch.
    """
    m, D = universe.m, universe.D
    a = m + D / 2
    if a[0] == a[1]:
        raise LefError("degenerate universe: the two constraints coincide")
    t = (v_P - a[1]) / (a[0] - a[1])
    q = np.array([t, 1 - t])
    A = np.column_stack([m + D / 2 * (1 - 2 * q), np.ones(2)])
    b = -(2 * q * D + 2 * a * (q @ a - q * a))
    g = np.linalg.lstsq(A, b, rcond=None)[0]
    res = float(np.max(np.abs(A @ g - b)))
    return LefSolution(q, v_P, float(np.sum(q**2 * (D - a**2))), float(g[0]), float(g[1]), 0.0, res)


def _approx_newton(universe: AssetUniverse, v_P: float, tol: float, max_iter: int) -> LefSolution:
    m, D = universe.m, universe.D
    n = len(m)
    a = m + D / 2
    C0, C1, C2 = (float(np.sum(a**k / D)) for k in range(3))
    det = C0 * C2 - C1**2
    if det <= 1e-14 * max(1.0, C0 * C2):
        raise LefError("degenerate universe: the two constraints coincide")
    q = ((C2 - C1 * v_P) + (C0 * v_P - C1) * a) / det / D
    g = np.linalg.lstsq(np.column_stack([m + D / 2 * (1 - 2 * q), np.ones(n)]),
                        -(2 * q * D + 2 * a * (q @ a - q * a)), rcond=None)[0]
    x = np.concatenate([q, g])
    F = lef_equations(x, universe, v_P)
    for _ in range(max_iter):
        norm = np.max(np.abs(F))
        if norm < tol:
            break
        try:
            dx = np.linalg.solve(_lef_jacobian(x, universe), -F)
        except np.linalg.LinAlgError as exc:
            raise LefError("singular Jacobian in the LEF equations") from exc
        t = 1.0
        while t > 1e-8:
            x_new = x + t * dx
            F_new = lef_equations(x_new, universe, v_P)
            if np.max(np.abs(F_new)) < (1 - 1e-4 * t) * norm:
                break
            t *= 0.5
        x, F = x_new, F_new
    norm = float(np.max(np.abs(F)))
    if norm > 1e-9:
        raise LefError(f"LEF equations did not converge (residual {norm:.3g})")
    q = x[:n]
    # the quadratic model of E[(ln W)^2] minus v_P^2
    var = float(np.sum(q**2 * (D - a**2)))
    return LefSolution(q, v_P, var, float(x[n]), float(x[n + 1]), 0.0, norm)


def lef_approx_system(universe: AssetUniverse, v_P: float, no_short: bool = False,
                      tol: float = 1e-13, max_iter: int = 100) -> LefSolution:
    """Solve the small-parameter LEF equations by damped Newton iteration.

    ``v_P`` enters through ``sum(q (m + D/2)) = v_P``.  The start is the
    minimum-variance portfolio of the same small-parameter problem.  With
    ``no_short`` the most negative fraction is removed and the system re-solved
    on the remaining assets until every fraction is non-negative.

    ``var_log`` is the quadratic model ``sum(q^2 (D - (m + D/2)^2))``, which
    can come out negative when some ``(m + D/2)^2 > D``.
    """
    m, D = universe.m, universe.D
    n = len(m)
    if np.any(np.abs(m) > SMALL_PARAMETER_WARN) or np.any(D > SMALL_PARAMETER_WARN):
        warnings.warn("small-parameter LEF equations used outside m, D << 1", stacklevel=2)
    active = list(range(n))
    while True:
        sub = universe.subset(active)
        if len(active) == 1:
            sol = _approx_single(sub, v_P)
        elif len(active) == 2:
            sol = _approx_pair(sub, v_P)
        else:
            sol = _approx_newton(sub, v_P, tol, max_iter)
        worst = int(np.argmin(sol.fractions))
        if not no_short or sol.fractions[worst] >= 0:
            break
        del active[worst]
    q = np.zeros(n)
    q[active] = sol.fractions
    return LefSolution(q, v_P, sol.var_log, sol.gamma1, sol.gamma2, 0.0, sol.residual)


def lef_approx_matched(universe: AssetUniverse, v_P: float, no_short: bool = False,
                       method: ExpectationMethod | None = None, n_scan: int = 60) -> LefSolution:
    """Small-parameter LEF point whose exact growth ``E[ln W1]`` equals ``v_P``.

    The small-parameter constraint ``sum(q (m + D/2)) = t`` differs from the
    exact one by about ``sum(q^2 D)/2``, so the two frontiers are compared at
    equal exact growth.  Along the approximate frontier the exact growth first
    rises and then falls; the first upward crossing of ``v_P`` is returned.
    """
    nodes = universe_nodes(universe, method)
    a = universe.m + universe.D / 2
    if no_short:
        lo, hi = float(a.min()), float(a.max())
    else:
        span = float(a.max() - a.min() + universe.D.max())
        lo, hi = v_P - span, v_P + 2 * span

    def solve(t):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return lef_approx_system(universe, t, no_short=no_short)

    def gap(t):
        return _moments(solve(t).fractions, nodes).v - v_P

    grid = np.linspace(lo, hi, n_scan)
    vals = []
    for t in grid:
        try:
            vals.append(gap(t))
        except LefError:
            vals.append(math.nan)
    vals = np.array(vals)
    if no_short and abs(vals[0]) <= CONSTRAINT_TOL:
        return solve(grid[0])
    for k in range(n_scan - 1):
        if vals[k] < 0 <= vals[k + 1]:
            t = brentq(gap, grid[k], grid[k + 1], xtol=1e-14)
            return solve(t)
    raise LefError(f"no small-parameter LEF point reaches exact growth {v_P}")
