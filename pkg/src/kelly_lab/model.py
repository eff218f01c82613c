"""Assets, portfolios and the multiplicative price model.

Each asset price follows ``p(t) = p(t-1) * exp(eta(t))`` with ``eta`` Gaussian
of mean ``m`` and variance ``D`` (optionally jointly Gaussian with covariance
``S``).  One-step returns ``R = exp(eta) - 1`` are therefore lognormal.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import rng

EQUALITY_TOL = 1e-12
NONNEG_SLACK = 1e-15


class Policy(str, enum.Enum):
    NO_SHORT_NO_BORROW = "no-short-no-borrow"
    FULLY_INVESTED = "fully-invested"


@dataclass(frozen=True)
class Asset:
    name: str
    m: float
    D: float

    def __post_init__(self):
        if not math.isfinite(self.m):
            raise ValueError(f"asset {self.name!r}: m must be finite")
        if not math.isfinite(self.D) or self.D < 0:
            raise ValueError(f"asset {self.name!r}: D must be finite and >= 0")

    @property
    def mu(self) -> float:
        return asset_moments(self)[0]

    @property
    def sigma2(self) -> float:
        return asset_moments(self)[1]


def asset_moments(asset: Asset) -> tuple[float, float]:
    """Mean and variance of the lognormal return ``exp(eta) - 1``."""
    mu = math.expm1(asset.m + asset.D / 2)
    sigma2 = math.expm1(asset.D) * math.exp(2 * asset.m + asset.D)
    return mu, sigma2


def lognormal_moments(m, D) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`asset_moments`."""
    m = np.asarray(m, dtype=float)
    D = np.asarray(D, dtype=float)
    return np.expm1(m + D / 2), np.expm1(D) * np.exp(2 * m + D)


@dataclass(frozen=True)
class AssetUniverse:
    assets: tuple[Asset, ...]
    covariance: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "assets", tuple(self.assets))
        if not self.assets:
            raise ValueError("universe needs at least one asset")
        if self.covariance is not None:
            S = np.array(self.covariance, dtype=float)
            n = len(self.assets)
            if S.shape != (n, n):
                raise ValueError(f"covariance must be {n}x{n}, got {S.shape}")
            if not np.allclose(S, S.T, rtol=0, atol=EQUALITY_TOL):
                raise ValueError("covariance must be symmetric")
            if not np.allclose(np.diag(S), self.D, rtol=0, atol=EQUALITY_TOL):
                raise ValueError("covariance diagonal must equal each asset's D")
            evals = np.linalg.eigvalsh(S)
            if evals.min() < -1e-12 * max(1.0, np.abs(S).max()):
                raise ValueError("covariance is not positive semi-definite")
            S.setflags(write=False)
            object.__setattr__(self, "covariance", S)

    @classmethod
    def from_params(cls, m: Sequence[float], D: Sequence[float], names=None, covariance=None):
        names = names or [f"a{i + 1}" for i in range(len(m))]
        return cls(tuple(Asset(n, float(mi), float(di)) for n, mi, di in zip(names, m, D)), covariance)

    def __len__(self) -> int:
        return len(self.assets)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.assets]

    @property
    def m(self) -> np.ndarray:
        return np.array([a.m for a in self.assets])

    @property
    def D(self) -> np.ndarray:
        return np.array([a.D for a in self.assets])

    @property
    def mu(self) -> np.ndarray:
        return lognormal_moments(self.m, self.D)[0]

    @property
    def sigma2(self) -> np.ndarray:
        return lognormal_moments(self.m, self.D)[1]

    @property
    def cov(self) -> np.ndarray:
        """Log-return covariance (diagonal when no matrix was given)."""
        return np.diag(self.D) if self.covariance is None else np.array(self.covariance)

    def subset(self, idx) -> "AssetUniverse":
        idx = list(idx)
        cov = None if self.covariance is None else self.cov[np.ix_(idx, idx)]
        return AssetUniverse(tuple(self.assets[i] for i in idx), cov)

    def scaled(self, eps: float) -> "AssetUniverse":
        """Same universe with every ``m``, ``D`` (and ``S``) multiplied by ``eps``."""
        cov = None if self.covariance is None else eps * self.cov
        return AssetUniverse(tuple(Asset(a.name, eps * a.m, eps * a.D) for a in self.assets), cov)

    def noise_factor(self) -> np.ndarray:
        """Matrix ``L`` (N x rank) with ``L @ L.T == S``.

        A symmetric eigen-factorisation is used so that singular (but PSD)
        covariance matrices yield a reduced-rank factor.
        """
        if self.covariance is None:
            return np.diag(np.sqrt(self.D))
        evals, evecs = np.linalg.eigh(self.cov)
        keep = evals > 1e-14 * max(1.0, evals.max())
        return evecs[:, keep] * np.sqrt(evals[keep])

    def to_dict(self) -> dict:
        out = {"assets": [{"name": a.name, "m": a.m, "D": a.D} for a in self.assets]}
        if self.covariance is not None:
            out["covariance"] = self.cov.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AssetUniverse":
        assets = data.get("assets")
        if not isinstance(assets, list) or not assets:
            raise ValueError("'assets' must be a non-empty list")
        parsed = []
        for i, a in enumerate(assets):
            try:
                parsed.append(Asset(str(a.get("name", f"a{i + 1}")), float(a["m"]), float(a["D"])))
            except (KeyError, TypeError, AttributeError) as exc:
                raise ValueError(f"asset #{i}: expected object with numeric 'm' and 'D'") from exc
        return cls(tuple(parsed), data.get("covariance"))

    @classmethod
    def load(cls, path: str | Path) -> "AssetUniverse":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --- portfolios ------------------------------------------------------------


class PortfolioViolation(ValueError):
    """A fraction vector breaks the no-short / no-borrow constraints."""

    def __init__(self, kind: str, message: str, index: int | None = None, excess: float | None = None):
        super().__init__(message)
        self.kind = kind
        self.index = index
        self.excess = excess


@dataclass(frozen=True)
class Portfolio:
    fractions: np.ndarray
    policy: Policy = Policy.NO_SHORT_NO_BORROW

    def __post_init__(self):
        q = np.array(self.fractions, dtype=float)
        q.setflags(write=False)
        object.__setattr__(self, "fractions", q)

    def __len__(self) -> int:
        return len(self.fractions)


def validate_portfolio(fractions, policy: Policy = Policy.NO_SHORT_NO_BORROW) -> Portfolio:
    """Check the constraints and return a :class:`Portfolio`.

    Raises :class:`PortfolioViolation` naming the first broken constraint.
    """
    q = np.asarray(fractions, dtype=float)
    if q.ndim != 1 or q.size == 0:
        raise PortfolioViolation("shape", "fractions must be a non-empty vector")
    if not np.all(np.isfinite(q)):
        raise PortfolioViolation("non-finite", "fractions must be finite")
    for i, qi in enumerate(q):
        if qi < -NONNEG_SLACK:
            raise PortfolioViolation("short", f"short position at index {i}", index=i)
    total = float(q.sum())
    if total > 1 + EQUALITY_TOL:
        raise PortfolioViolation("borrow", f"sum {total:.12g} exceeds 1", excess=total - 1)
    if Policy(policy) is Policy.FULLY_INVESTED and abs(total - 1) > EQUALITY_TOL:
        raise PortfolioViolation("not-invested", f"sum {total:.12g} differs from 1", excess=total - 1)
    return Portfolio(q, Policy(policy))


def portfolio_wealth(portfolio: Portfolio | Sequence[float], returns) -> float:
    """Wealth after one step from unit capital: ``1 + sum(q_i R_i)``."""
    q = portfolio.fractions if isinstance(portfolio, Portfolio) else np.asarray(portfolio, float)
    R = np.asarray(returns, dtype=float)
    if R.shape != q.shape:
        raise ValueError(f"returns have shape {R.shape}, portfolio has {q.shape}")
    if np.any(R <= -1):
        raise ValueError("returns must exceed -1")
    return 1.0 + float(q @ R)


# --- simulation --------------------------------------------------------------


@dataclass(frozen=True)
class PricePaths:
    """Prices with shape ``(n_paths, horizon + 1, n_assets)``; ``p(0) = 1``."""

    paths: np.ndarray
    seed: int
    names: tuple[str, ...] = ()

    @property
    def horizon(self) -> int:
        return self.paths.shape[1] - 1

    def log_returns(self) -> np.ndarray:
        return np.diff(np.log(self.paths), axis=1)

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "t", "asset", "price"])
        names = self.names or tuple(str(i) for i in range(self.paths.shape[2]))
        for p, path in enumerate(self.paths):
            for t, row in enumerate(path):
                for a, price in zip(names, row):
                    w.writerow([p, t, a, f"{price:.12g}"])


def noise_blocks(universe: AssetUniverse, horizon: int, n_paths: int, seed: int) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield ``(start, stop, noise)`` with ``noise`` of shape ``(stop-start, horizon, N)``.

    ``eta = m + noise``.  Block ``b`` always draws from the same derived
    stream, so any consumer sees the same numbers for the same seed.
    """
    if horizon < 1 or n_paths < 1:
        raise ValueError("horizon and n_paths must be >= 1")
    L = universe.noise_factor()
    for b, start, stop in rng.blocks(n_paths):
        z = rng.stream(seed, rng.PURPOSE_PATHS, b).standard_normal((stop - start, horizon, L.shape[1]))
        yield start, stop, z @ L.T


def simulate_paths(universe: AssetUniverse, horizon: int, n_paths: int, seed: int) -> PricePaths:
    steps = np.arange(horizon + 1)[:, None] * universe.m
    out = np.empty((n_paths, horizon + 1, len(universe)))
    for start, stop, noise in noise_blocks(universe, horizon, n_paths, seed):
        cum = np.concatenate([np.zeros((stop - start, 1, len(universe))), np.cumsum(noise, axis=1)], axis=1)
        out[start:stop] = np.exp(steps + cum)
    return PricePaths(out, seed, tuple(universe.names))


@dataclass(frozen=True)
class GrowthEstimate:
    name: str
    fractions: np.ndarray
    mean: float
    stderr: float


def per_path_growth(universe: AssetUniverse, strategies: dict[str, Sequence[float]], horizon: int,
                    n_paths: int, seed: int) -> dict[str, np.ndarray]:
    """Per-path mean log-growth per step of constant-fraction strategies.

    Every strategy is evaluated on the same simulated returns (common random
    numbers); one step multiplies wealth by ``1 + q @ R(t)``, the remainder
    sitting in zero-rate cash.
    """
    qs = {}
    for name, q in strategies.items():
        qs[name] = validate_portfolio(q).fractions
        if len(qs[name]) != len(universe):
            raise ValueError(f"strategy {name!r} has {len(qs[name])} fractions, universe has {len(universe)}")
    out = {name: np.empty(n_paths) for name in qs}
    for start, stop, noise in noise_blocks(universe, horizon, n_paths, seed):
        R = np.expm1(universe.m + noise)
        for name, q in qs.items():
            out[name][start:stop] = np.log1p(R @ q).sum(axis=1) / horizon
    return out


def simulate_growth(universe: AssetUniverse, strategies: dict[str, Sequence[float]], horizon: int,
                    n_paths: int, seed: int) -> list[GrowthEstimate]:
    per_path = per_path_growth(universe, strategies, horizon, n_paths, seed)
    return [GrowthEstimate(name, np.asarray(strategies[name], float), float(g.mean()),
                           float(g.std(ddof=1) / math.sqrt(n_paths)))
            for name, g in per_path.items()]
