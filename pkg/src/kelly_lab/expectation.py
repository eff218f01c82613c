"""Gaussian expectations: exact integrators and small-variance expansions.

Exact values come from tensor Gauss-Hermite quadrature (up to four assets) or
seeded Monte Carlo with antithetic pairs.  The approximate routines implement
the second-order expansion ``E[g(eta)] ~ g(m) + D/2 g''(m)`` and its
multivariate form ``g(m) + Tr(S V)/2``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Union

import numpy as np

from . import rng
from .model import AssetUniverse, Portfolio, validate_portfolio

DEFAULT_ORDER = 64
MIN_ORDER = 16
MIN_MC_SAMPLES = 10_000
MAX_TENSOR_DIM = 4
DEFAULT_MC_SAMPLES = 200_000
# product weights below this are dropped from multi-dimensional grids
PRUNE_WEIGHT = 1e-22


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussHermite:
    order: int = DEFAULT_ORDER

    def __post_init__(self):
        if self.order < MIN_ORDER:
            raise ValueError(f"quadrature order must be >= {MIN_ORDER}")


@dataclass(frozen=True)
class MonteCarlo:
    n_samples: int
    seed: int
    antithetic: bool = True

    def __post_init__(self):
        if self.n_samples < MIN_MC_SAMPLES:
            raise ValueError(f"Monte Carlo needs at least {MIN_MC_SAMPLES} samples")
        if self.antithetic and self.n_samples % 2:
            raise ValueError("antithetic sampling needs an even sample count")


ExpectationMethod = Union[GaussHermite, MonteCarlo]


def default_method(n_assets: int, seed: int | None = None) -> ExpectationMethod:
    if n_assets <= MAX_TENSOR_DIM:
        return GaussHermite()
    if seed is None:
        raise ValueError(f"{n_assets} assets need Monte Carlo expectations; pass a seed")
    return MonteCarlo(DEFAULT_MC_SAMPLES, seed)


@lru_cache(maxsize=32)
def _hermite_1d(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.hermite.hermgauss(order)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


@dataclass(frozen=True)
class GaussianNodes:
    """Weighted sample of ``eta`` (rows) representing N(mean, L L^T)."""

    eta: np.ndarray
    weights: np.ndarray
    # set for Monte Carlo: the estimator's standard error is available
    paired: bool | None = None

    @cached_property
    def returns(self) -> np.ndarray:
        """Simple returns ``exp(eta) - 1`` at every node (computed once)."""
        return np.expm1(self.eta)

    def mean(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))

    def stderr(self, values: np.ndarray) -> float:
        """Monte Carlo standard error of ``mean(values)`` (0 for quadrature)."""
        if self.paired is None:
            return 0.0
        v = np.asarray(values, float)
        if self.paired:
            half = len(v) // 2
            v = 0.5 * (v[:half] + v[half:])
        return float(v.std(ddof=1) / math.sqrt(len(v)))


def gaussian_nodes(mean, factor, method: ExpectationMethod) -> GaussianNodes:
    """Nodes for ``eta = mean + factor @ z`` with ``z`` standard normal."""
    mean = np.atleast_1d(np.asarray(mean, float))
    factor = np.atleast_2d(np.asarray(factor, float))
    r = factor.shape[1]
    if isinstance(method, GaussHermite):
        if r > MAX_TENSOR_DIM:
            raise ValueError(f"tensor quadrature is limited to {MAX_TENSOR_DIM} dimensions")
        x, w = _hermite_1d(method.order)
        if r == 1:
            z, wz = x[:, None], w
        else:
            idx = np.array(list(itertools.product(range(len(x)), repeat=r)))
            wz = np.prod(w[idx], axis=1)
            keep = wz > PRUNE_WEIGHT
            z, wz = x[idx[keep]], wz[keep]
        return GaussianNodes(mean + z @ factor.T, wz)
    if isinstance(method, MonteCarlo):
        n = method.n_samples // 2 if method.antithetic else method.n_samples
        z = rng.standard_normals(method.seed, rng.PURPOSE_EXPECTATION, n, (r,))
        if method.antithetic:
            z = np.concatenate([z, -z])
        return GaussianNodes(mean + z @ factor.T, np.full(len(z), 1.0 / len(z)), method.antithetic)
    raise TypeError(f"unknown expectation method {method!r}")


def universe_nodes(universe: AssetUniverse, method: ExpectationMethod | None = None) -> GaussianNodes:
    method = method or default_method(len(universe))
    return gaussian_nodes(universe.m, universe.noise_factor(), method)


# --- one-dimensional expectations ------------------------------------------


def gauss_expectation_1d(g: Callable, m: float, D: float, method: ExpectationMethod | None = None) -> float:
    """``E[g(eta)]`` for ``eta ~ N(m, D)``; ``g`` must accept numpy arrays."""
    if D < 0:
        raise ValueError("variance must be non-negative")
    nodes = gaussian_nodes([m], [[math.sqrt(D)]], method or GaussHermite())
    vals = np.asarray(g(nodes.eta[:, 0]), float)
    vals = np.broadcast_to(vals, nodes.weights.shape)
    if not np.all(np.isfinite(vals)):
        raise IntegrationError("integrand is not finite on the Gaussian support")
    return float(nodes.mean(vals))


def approx_expectation(g: Callable, m: float, D: float, g2: Callable | None = None) -> float:
    """Second-order expansion ``g(m) + (D/2) g''(m)``.

    Without ``g2`` the second derivative is a central difference with step
    ``max(1e-5, sqrt(D)/100)``.
    """
    if g2 is not None:
        curv = float(g2(m))
    else:
        h = max(1e-5, math.sqrt(D) / 100)
        curv = (float(g(m + h)) - 2 * float(g(m)) + float(g(m - h))) / h**2
    return float(g(m)) + 0.5 * D * curv


def approx_error_bound(fourth_derivative_max: float, D: float) -> float:
    """Bound ``M D^2 / 8`` on the dropped fourth-order term."""
    if fourth_derivative_max < 0:
        raise ValueError("M must be non-negative")
    return fourth_derivative_max * D**2 / 8


def fourth_derivative_max(g: Callable, lo: float, hi: float, n: int = 2001, h: float = 1e-2) -> float:
    """Estimate ``max |g''''|`` on ``[lo, hi]`` by dense sampling.

    Uses the five-point stencil, whose truncation error is ``O(h^2)``.
    """
    x = np.linspace(lo, hi, n)
    d4 = (g(x - 2 * h) - 4 * g(x - h) + 6 * g(x) - 4 * g(x + h) + g(x + 2 * h)) / h**4
    return float(np.max(np.abs(d4)))


def approx_expectation_correlated(g: Callable, m_vec, S, hessian=None) -> float:
    """Multivariate expansion ``g(m) + Tr(S V)/2``.

    ``hessian`` may be a matrix, a callable returning one at ``m_vec``, or
    ``None`` for a central-difference estimate.
    """
    m_vec = np.asarray(m_vec, float)
    S = np.atleast_2d(np.asarray(S, float))
    n = len(m_vec)
    if S.shape != (n, n):
        raise ValueError(f"covariance shape {S.shape} does not match {n} means")
    if hessian is None:
        V = finite_difference_hessian(g, m_vec)
    elif callable(hessian):
        V = np.asarray(hessian(m_vec), float)
    else:
        V = np.asarray(hessian, float)
    if V.shape != (n, n):
        raise ValueError(f"hessian shape {V.shape} does not match {n} means")
    return float(g(m_vec)) + 0.5 * float(np.trace(S @ V))


def finite_difference_hessian(g: Callable, x) -> np.ndarray:
    x = np.asarray(x, float)
    n = len(x)
    h = np.finfo(float).eps ** 0.25 * np.maximum(1.0, np.abs(x))
    f0 = float(g(x))
    V = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        V[i, i] = (float(g(x + ei)) - 2 * f0 + float(g(x - ei))) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h[j]
            V[i, j] = V[j, i] = (
                float(g(x + ei + ej)) - float(g(x + ei - ej)) - float(g(x - ei + ej)) + float(g(x - ei - ej))
            ) / (4 * h[i] * h[j])
    return V


# --- growth rate -------------------------------------------------------------


@dataclass(frozen=True)
class GrowthStats:
    """``v = E[ln W1]``, ``v2 = E[(ln W1)^2]`` and ``grad_i = E[R_i / W1]``."""

    v: float
    v2: float
    grad: np.ndarray
    v_stderr: float = 0.0

    @property
    def var(self) -> float:
        return max(self.v2 - self.v**2, 0.0)


@dataclass(frozen=True)
class LogWealthTerms:
    """Per-node quantities for one fraction vector (truncated to ``W1 > 0``)."""

    R: np.ndarray
    W: np.ndarray
    lnW: np.ndarray
    weights: np.ndarray
    truncated_mass: float


def log_wealth_terms(q, nodes: GaussianNodes) -> LogWealthTerms:
    q = np.asarray(q, float)
    R = nodes.returns
    RP = R @ q
    ok = RP > -1
    w = np.where(ok, nodes.weights, 0.0)
    W = np.where(ok, 1 + RP, 1.0)
    lnW = np.where(ok, np.log1p(np.where(ok, RP, 0.0)), 0.0)
    return LogWealthTerms(R, W, lnW, w, float(nodes.weights[~ok].sum()))


def growth_stats(portfolio, universe: AssetUniverse, method: ExpectationMethod | None = None,
                 nodes: GaussianNodes | None = None) -> GrowthStats:
    """Growth rate, its second moment and gradient on a shared set of nodes."""
    q = portfolio.fractions if isinstance(portfolio, Portfolio) else validate_portfolio(portfolio).fractions
    if len(q) != len(universe):
        raise ValueError("portfolio and universe sizes differ")
    nodes = nodes or universe_nodes(universe, method)
    R = nodes.returns
    RP = R @ q
    lnW = np.log1p(RP)
    if not np.all(np.isfinite(lnW)):
        raise IntegrationError("log-wealth is not finite on the integration nodes")
    grad = nodes.mean(R / (1 + RP)[:, None])
    return GrowthStats(float(nodes.mean(lnW)), float(nodes.mean(lnW**2)), np.asarray(grad), nodes.stderr(lnW))


def growth_rate(q, universe: AssetUniverse, nodes: GaussianNodes | None = None) -> float:
    return growth_stats(q, universe, nodes=nodes).v


def growth_hessian(q, universe: AssetUniverse, nodes: GaussianNodes | None = None) -> np.ndarray:
    """``d^2 v / dq_i dq_j = -E[R_i R_j / W1^2]``."""
    nodes = nodes or universe_nodes(universe)
    R = nodes.returns
    W = 1 + R @ np.asarray(q, float)
    X = R / W[:, None]
    return -(X * nodes.weights[:, None]).T @ X
