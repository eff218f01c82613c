"""Kelly-optimal portfolios: growth-rate maximisation, frontiers and condensation."""

from .model import Asset, AssetUniverse, Policy, Portfolio, validate_portfolio
from .kelly import kelly_constrained, kelly_fraction_single, kelly_numerical, kelly_unconstrained
from .markowitz import constrained_frontier, efficient_frontier, kelly_point
from .lef import lef_approx_system, lef_frontier, lef_point

__version__ = "0.1.0"
