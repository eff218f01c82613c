import numpy as np
import pytest

from kelly_lab.model import AssetUniverse

FIG1_M = [0.1, 0.15, 0.2]
FIG1_D = [0.04, 0.09, 0.25]


@pytest.fixture
def fig1():
    return AssetUniverse.from_params(FIG1_M, FIG1_D)


def random_universe(rng: np.random.Generator, n: int, m_scale=0.2, d_lo=0.01, d_hi=0.3) -> AssetUniverse:
    return AssetUniverse.from_params(rng.uniform(-m_scale, m_scale, n), rng.uniform(d_lo, d_hi, n))
