import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from varexp import checks
from varexp.energy import ProblemParams
from varexp.grid import build_grid
from varexp.lebesgue import ExponentField
from varexp.operators import MODELS

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_params(dim=2, n=7, lo=2.0, hi=2.4, lam=50.0, beta=1.3, gamma=1.7, operator="plaplace", stencil="corner"):
    grid = build_grid(dim, [n] * dim, [1.0] * dim)
    p = ExponentField.affine(grid, 0, lo, hi)
    return ProblemParams(lam, beta, gamma, MODELS[operator](p), p, grid, stencil)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def params3d():
    return checks.acceptance_params(lam=400.0)
