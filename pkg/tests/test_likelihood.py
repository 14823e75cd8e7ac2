import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from trivariate.likelihood import (
    cell_grid,
    cell_probability,
    conditional_terms,
    loglik_and_gradient,
    loglik_gradient,
    obs_loglik,
    reduced_form_scales,
    total_loglik,
)
from trivariate.model import SpecError, build_design, unconstrain
from trivariate.simulation import reduced_form_covariance, sample_dataset

from conftest import SMALL_SPEC, small_config, small_params

X = np.array([1.0, 0.3, 1.0])


def _terms(p, y1=0.4):
    return conditional_terms(p, X, X, X, y1)


def test_grid_matches_single_cells_and_sums_to_one():
    p = small_params()
    t = _terms(p)
    grid = cell_grid(t, p)
    assert grid.shape == (4, 5)
    assert grid.sum() == pytest.approx(1.0, abs=1e-12)
    for j2 in range(1, 5):
        for j3 in range(1, 6):
            assert cell_probability(t, p, j2, j3) == pytest.approx(grid[j2 - 1, j3 - 1], abs=1e-15)


@given(
    st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(-0.9, 0.9),
    st.floats(-2, 2), st.floats(-4, 4),
)
def test_grid_is_a_distribution(r12, r13, r23, t23, y1):
    corr = np.array([[1, r12, r13], [r12, 1, r23], [r13, r23, 1]])
    if np.linalg.eigvalsh(corr).min() < 1e-3:
        return
    p = small_params(rho12=r12, rho13=r13, rho23=r23, theta23=t23)
    grid = cell_grid(_terms(p, y1), p)
    assert np.all(grid >= 0.0)
    assert grid.sum() == pytest.approx(1.0, abs=1e-10)


def test_scales_match_reduced_covariance():
    p = small_params()
    lam2, lam3, rt = reduced_form_scales(p.theta23, p.rho12, p.rho13, p.rho23)
    cov = reduced_form_covariance(p)
    assert lam2 == pytest.approx(cov[0, 0] ** -0.5, rel=1e-14)
    assert lam3 == pytest.approx(cov[1, 1] ** -0.5, rel=1e-14)
    assert rt == pytest.approx(cov[0, 1] / np.sqrt(cov[0, 0] * cov[1, 1]), rel=1e-14)


def test_independent_errors_factorise():
    p = small_params(rho12=0.0, rho13=0.0, rho23=0.0, theta23=0.0)
    t = _terms(p)
    c2, c3 = p.cut_points(2), p.cut_points(3)
    h2, h3 = float(t.h2), float(t.h3)
    p2 = np.diff(stats.norm.cdf(c2 - h2))
    p3 = np.diff(stats.norm.cdf(c3 - h3))
    assert np.allclose(cell_grid(t, p), np.outer(p2, p3), atol=1e-15)


def test_cell_probability_level_range():
    p = small_params()
    with pytest.raises(ValueError):
        cell_probability(_terms(p), p, 0, 1)
    with pytest.raises(ValueError):
        cell_probability(_terms(p), p, 1, 6)


def test_conditional_terms_checks_dimensions():
    with pytest.raises(SpecError):
        conditional_terms(small_params(), X[:2], X, X, 0.0)


def test_extreme_index_stays_finite():
    p = small_params()
    t = conditional_terms(p, X, np.array([60.0, 0, 0]), np.array([-60.0, 0, 0]), 0.0)
    grid = cell_grid(t, p)
    assert np.all(np.isfinite(grid)) and np.all(grid >= 0)
    assert grid[-1, 0] == pytest.approx(1.0, abs=1e-12)


def test_total_is_sum_of_rows_and_independent_of_workers(small_data):
    p = small_params()
    d = build_design(small_data, SMALL_SPEC)
    big = d.take(np.tile(np.arange(d.n), 10))  # spans several chunks
    rows = obs_loglik(p, big)
    one = total_loglik(p, big, workers=1)
    assert one == pytest.approx(float(np.sum(rows)), rel=1e-12)
    assert total_loglik(p, big, workers=3) == one
    u = unconstrain(p, SMALL_SPEC)
    ll1, g1 = loglik_and_gradient(u, big, SMALL_SPEC, workers=1)
    ll3, g3 = loglik_and_gradient(u, big, SMALL_SPEC, workers=3)
    assert ll1 == ll3 and np.array_equal(g1, g3)
    assert ll1 == pytest.approx(one, rel=1e-13)


def test_dataset_and_design_inputs_agree(small_data):
    p = small_params()
    assert total_loglik(p, small_data, SMALL_SPEC) == total_loglik(p, build_design(small_data, SMALL_SPEC))


def test_gradient_errors(small_data):
    with pytest.raises(SpecError):
        loglik_gradient(np.zeros(3), small_data, SMALL_SPEC)
    with pytest.raises(ValueError):
        loglik_gradient(np.zeros(SMALL_SPEC.n_params), small_data, SMALL_SPEC, method="bogus")


def test_analytic_gradient_near_boundary():
    # strong correlations and a large recursion effect
    cfg = small_config(n=300, seed=9, rho12=0.8, rho13=-0.7, rho23=-0.3, theta23=1.5)
    d = build_design(sample_dataset(cfg), SMALL_SPEC)
    u = unconstrain(cfg.true_params, SMALL_SPEC)
    ga = loglik_gradient(u, d, SMALL_SPEC)
    gn = loglik_gradient(u, d, SMALL_SPEC, method="numeric")
    assert np.allclose(ga, gn, rtol=1e-5, atol=1e-5)
