import numpy as np
import pytest
from hypothesis import settings

from trivariate.model import ModelSpec, ParameterSet
from trivariate.simulation import Bernoulli, Normal, SimConfig, sample_dataset

settings.register_profile("default", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("default")

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


SMALL_SPEC = ModelSpec(
    covariates_eq1=("x1", "d1"),
    covariates_eq2=("x2", "d1"),
    covariates_eq3=("x3", "d2"),
    j2=4, j3=5,
)


def small_params(**overrides) -> ParameterSet:
    base = dict(
        gamma1=[1.0, 0.5, -0.3], gamma2=[0.4, 0.6, -0.4], gamma3=[0.2, -0.5, 0.3],
        theta12=-0.2, theta13=0.15, theta23=-0.5, sigma1=0.8,
        rho12=0.3, rho13=0.25, rho23=0.4,
        mu2=[0.0, 0.6, 1.3], mu3=[0.0, 0.5, 1.0, 1.6],
    )
    base.update(overrides)
    return ParameterSet(**base)


SMALL_RECIPES = {
    "x1": Normal(0.0, 1.0), "x2": Normal(0.0, 1.0), "x3": Normal(0.5, 0.8),
    "d1": Bernoulli(0.4), "d2": Bernoulli(0.6),
}


def small_config(n=2000, seed=0, **overrides) -> SimConfig:
    return SimConfig(n=n, seed=seed, true_params=small_params(**overrides), spec=SMALL_SPEC,
                     covariate_recipes=SMALL_RECIPES)


@pytest.fixture
def small_data():
    return sample_dataset(small_config())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
