import pathlib

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import posteriorlens as pl

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

FIXTURE_DIR = pathlib.Path(__file__).parent / "fixtures" / "v1"
CONFIG_DIR = pathlib.Path(__file__).parent.parent / "configs"


@pytest.fixture
def bimodal_1d_prior():
    """Symmetric two-component mixture: the canonical bimodal fixture."""
    return pl.GmmPrior([0.5, 0.5], [[-2.0], [2.0]], [[0.25], [0.25]])


@pytest.fixture
def asym_1d_prior():
    return pl.GmmPrior([0.7, 0.3], [[-1.0], [3.0]], [[0.5], [0.5]])


@pytest.fixture
def gmm_2d_prior():
    """Anisotropic 2-D mixture used by the 2-D demos (at sigma = 2)."""
    return pl.GmmPrior(
        [0.5, 0.5], [[-2.0, -1.0], [2.0, 1.0]], [[0.7, 0.3], [0.4, 0.9]]
    )


@pytest.fixture
def identity_denoiser():
    return pl.DenoiserHandle(evaluate=lambda b, s: b, dimension=1, sigma_aware=False)


def load_golden_csv(name):
    rows = (FIXTURE_DIR / name).read_text().strip().splitlines()[1:]
    return [r.split(",") for r in rows]


def leggauss_quadrature(lo, hi, n=2000):
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return 0.5 * (hi + lo) + half * x, half * w
