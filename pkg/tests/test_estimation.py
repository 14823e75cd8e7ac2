import numpy as np
import pytest

from trivariate.estimation import (
    EstimationError,
    EstimationOptions,
    estimate,
    estimate_restricted,
    fit_ordered_probit,
)
from trivariate.inference import lr_test
from trivariate.likelihood import total_loglik
from trivariate.model import Dataset, build_design
from trivariate.simulation import generator, sample_dataset

from conftest import SMALL_SPEC, small_config


@pytest.fixture(scope="module")
def data():
    return sample_dataset(small_config(n=3000, seed=21))


@pytest.fixture(scope="module")
def full_fit(data):
    return estimate(data, SMALL_SPEC)


def test_full_fit_converges_and_loglik_recomputes(data, full_fit):
    assert full_fit.converged
    assert full_fit.k_free == SMALL_SPEC.n_params
    assert full_fit.gradient_norm <= 1e-6
    again = total_loglik(full_fit.params, build_design(data, SMALL_SPEC))
    assert abs(again - full_fit.loglik) <= 1e-9 * abs(full_fit.loglik)
    assert np.all(np.isfinite(full_fit.std_errors)) and np.all(full_fit.std_errors > 0)
    assert full_fit.std_error("theta23") == pytest.approx(full_fit.std_errors[full_fit.labels.index("theta23")])


def test_estimates_near_truth(full_fit):
    truth = small_config().true_params.natural_vector()
    z = (full_fit.estimates - truth) / full_fit.std_errors
    assert np.max(np.abs(z)) < 4.0


@pytest.mark.parametrize("restriction,pinned", [
    ("independent", ("rho12", "rho13", "rho23")),
    ("nonrecursive", ("theta12", "theta13", "theta23")),
])
def test_restrictions_pin_exactly_zero(data, full_fit, restriction, pinned):
    res = estimate_restricted(data, SMALL_SPEC, restriction=restriction)
    assert res.k_free == full_fit.k_free - 3
    for label in pinned:
        assert res.estimate(label) == 0.0
        assert res.std_error(label) is None
    assert res.loglik <= full_fit.loglik + 1e-6
    assert lr_test(full_fit.loglik, res.loglik, 3).statistic >= 0


def test_independent_restriction_is_rejected_when_false(data, full_fit):
    res = estimate_restricted(data, SMALL_SPEC, restriction="independent")
    assert lr_test(full_fit.loglik, res.loglik, 3).p_value < 1e-6


def test_constants_only_drops_covariates(data):
    res = estimate(data, SMALL_SPEC, EstimationOptions(std_errors=False), restriction="constants_only")
    assert res.spec.covariates_eq1 == ()
    assert res.k_free == 3 + 1 + 2 + 3
    assert res.std_errors is None


def test_estimate_restricted_refuses_full(data):
    with pytest.raises(ValueError):
        estimate_restricted(data, SMALL_SPEC, restriction="full")
    with pytest.raises(ValueError):
        estimate(data, SMALL_SPEC, restriction="bogus")


def test_numeric_gradient_option_agrees(data, full_fit):
    small = data.take(np.arange(800))
    a = estimate(small, SMALL_SPEC, EstimationOptions(std_errors=False))
    b = estimate(small, SMALL_SPEC, EstimationOptions(std_errors=False, gradient="numeric", gradient_tolerance=1e-5))
    assert b.loglik == pytest.approx(a.loglik, abs=1e-4)


def test_multistart_is_deterministic(data):
    small = data.take(np.arange(600))
    opts = EstimationOptions(multistart_count=3, seed=5, std_errors=False)
    a = estimate(small, SMALL_SPEC, opts)
    b = estimate(small, SMALL_SPEC, opts)
    assert a.start_logliks == b.start_logliks
    assert a.best_start_index == b.best_start_index
    assert np.array_equal(a.estimates, b.estimates)
    assert a.loglik == max(a.start_logliks)


def test_unobserved_level_is_an_error(data):
    y2 = data["y2"].copy()
    y2[y2 == 3] = 2
    with pytest.raises(EstimationError, match="levels \\[3\\]"):
        estimate(data.with_columns(y2=y2), SMALL_SPEC)


def test_collinear_columns_named(data):
    bad = data.with_columns(x2=2.0 * data["d1"])
    with pytest.raises(EstimationError, match="d1"):
        estimate(bad, SMALL_SPEC)


def test_too_few_rows(data):
    with pytest.raises(EstimationError, match="more observations"):
        estimate(data.take(np.arange(15)), SMALL_SPEC)


def test_empty_dataset_fails_cleanly():
    empty = Dataset({k: np.zeros(0) for k in ("x1", "d1", "x2", "x3", "d2", "y1", "y2", "y3")})
    with pytest.raises(EstimationError):
        estimate(empty, SMALL_SPEC)


def test_ordered_probit_recovers_thresholds():
    rng = generator(3, 0)
    n = 20_000
    x = np.column_stack([np.ones(n), rng.standard_normal(n)])
    latent = x @ [0.5, 1.0] + rng.standard_normal(n)
    y = np.searchsorted([0.0, 0.8, 1.5], latent) + 1
    beta, mu = fit_ordered_probit(x, y, 4)
    assert np.allclose(beta, [0.5, 1.0], atol=0.05)
    assert np.allclose(mu, [0.0, 0.8, 1.5], atol=0.05)
