from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from trivariate.likelihood import cell_grid, conditional_terms
from trivariate.model import ModelSpec, ParameterSet, ValidationError
from trivariate.simulation import (
    Bernoulli,
    Categorical,
    ConfigError,
    Normal,
    SimConfig,
    discretize,
    generator,
    mc_cell_probability,
    paper_like_config,
    recipe_from_dict,
    recipe_to_dict,
    sample_dataset,
)

from conftest import SMALL_RECIPES, SMALL_SPEC, small_config, small_params


def test_same_seed_same_data():
    a = sample_dataset(small_config(n=500, seed=7))
    b = sample_dataset(small_config(n=500, seed=7))
    c = sample_dataset(small_config(n=500, seed=8))
    assert all(np.array_equal(a[k], b[k]) for k in a.names)
    assert not np.array_equal(a["y1"], c["y1"])


def test_generator_streams_differ():
    assert generator(1, 0).random() != generator(1, 1).random()
    assert generator(1, 0).random() == generator(1, 0).random()


def test_outcome_columns_and_levels(small_data):
    assert {"y1", "y2", "y3", "x1", "d1"} <= set(small_data.names)
    assert set(np.unique(small_data["y2"])) <= {1.0, 2.0, 3.0, 4.0}
    assert set(np.unique(small_data["y3"])) <= {1.0, 2.0, 3.0, 4.0, 5.0}


def test_error_correlations_recovered():
    cfg = small_config(n=100_000, seed=2)
    data = sample_dataset(replace(cfg, keep_latent=True))
    eps = np.column_stack([data["eps1"], data["eps2"], data["eps3"]])
    assert np.allclose(np.corrcoef(eps.T), cfg.true_params.correlation, atol=0.01)
    assert np.std(data["eps1"]) == pytest.approx(0.8, abs=0.01)


def test_independent_errors_are_uncorrelated():
    cfg = small_config(n=100_000, seed=3, rho12=0.0, rho13=0.0, rho23=0.0)
    data = sample_dataset(replace(cfg, keep_latent=True))
    corr = np.corrcoef([data["eps1"], data["eps2"], data["eps3"]])
    assert np.max(np.abs(corr - np.eye(3))) < 0.02


def test_recursion_holds_in_latent_columns():
    cfg = small_config(n=1000, seed=4)
    data = sample_dataset(replace(cfg, keep_latent=True))
    p = cfg.true_params
    y3s = (p.gamma3[0] + p.gamma3[1] * data["x3"] + p.gamma3[2] * data["d2"]
           + p.theta13 * data["y1"] + p.theta23 * data["y2_star"] + data["eps3"])
    assert np.allclose(y3s, data["y3_star"], atol=1e-12)
    assert np.array_equal(discretize(data["y2_star"], p.mu2).astype(float), data["y2"])


def test_paper_like_shares():
    data = sample_dataset(paper_like_config(n=400_000, seed=5))
    assert data["female"].mean() == pytest.approx(0.5039, abs=0.002)
    assert data["race_white"].mean() == pytest.approx(0.6623, abs=0.002)
    assert data["edu_postgrad"].mean() == pytest.approx(0.3186, abs=0.002)


def test_discretize_boundaries():
    mu = np.array([0.0, 1.0])
    assert discretize(np.array([-5.0, 0.0, 0.5, 1.0, 1.0001]), mu).tolist() == [1, 1, 2, 2, 3]


def test_config_errors():
    with pytest.raises(ConfigError):
        sample_dataset(small_config(n=0))
    with pytest.raises(ConfigError, match="x3"):
        recipes = {k: v for k, v in SMALL_RECIPES.items() if k != "x3"}
        sample_dataset(SimConfig(10, 0, small_params(), SMALL_SPEC, recipes))
    with pytest.raises(ValidationError):
        sample_dataset(small_config(rho12=0.9, rho13=0.9, rho23=-0.9))
    with pytest.raises(ConfigError):
        Categorical({"a": 0.5, "b": 0.4})
    with pytest.raises(ConfigError):
        recipe_from_dict({"kind": "poisson", "lam": 1})


@pytest.mark.parametrize("recipe", [
    Bernoulli(0.3), Normal(1.0, 2.0), Categorical({"a": 0.2, "b": 0.8}),
    Categorical({1.0: 0.5, 2.0: 0.5}, encode="value"),
])
def test_recipe_round_trip(recipe):
    assert recipe_from_dict(recipe_to_dict(recipe)) == recipe


def test_mc_degenerate_quadrants():
    p = ParameterSet(gamma1=[0.0], gamma2=[0.0], gamma3=[0.0], mu2=[0.0], mu3=[0.0])
    freq, se = mc_cell_probability(0.0, 0.0, p, draws=400_000, seed=1)
    assert np.all(np.abs(freq - 0.25) < 4 * se)
    with pytest.raises(ValueError):
        mc_cell_probability(0.0, 0.0, p, draws=100, seed=1)


def test_structural_and_reduced_forms_agree():
    p = small_params()
    pvals = []
    for seed in range(20):
        a, _ = mc_cell_probability(0.3, -0.2, p, draws=100_000, seed=seed, form="reduced")
        b, _ = mc_cell_probability(0.3, -0.2, p, draws=100_000, seed=1000 + seed, form="structural")
        table = np.round(np.vstack([a.ravel(), b.ravel()]) * 100_000)
        table = table[:, table.sum(axis=0) > 0]
        pvals.append(stats.chi2_contingency(table)[1])
    # homogeneity p-values should look uniform; a systematic difference drives them to 0
    assert min(pvals) > 1e-4
    assert stats.kstest(pvals, "uniform").pvalue > 1e-3


def test_simulated_frequencies_match_integrated_cells():
    # no covariates, so every row shares the same cell distribution
    spec = ModelSpec(j2=4, j3=5)
    p = small_params(gamma1=[1.0], gamma2=[0.4], gamma3=[0.2])
    n = 1_000_000
    data = sample_dataset(SimConfig(n=n, seed=11, true_params=p, spec=spec))
    counts = np.zeros((4, 5))
    np.add.at(counts, (data["y2"].astype(int) - 1, data["y3"].astype(int) - 1), 1)
    # integrate the conditional grid over y1 ~ N(gamma1, sigma1^2)
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    one = np.ones(1)
    expected = sum(
        w * cell_grid(conditional_terms(p, one, one, one, 1.0 + 0.8 * t), p)
        for t, w in zip(nodes, weights)
    ) / np.sqrt(2 * np.pi)
    assert expected.sum() == pytest.approx(1.0, abs=1e-10)
    freq = counts / n
    se = np.sqrt(expected * (1 - expected) / n)
    assert np.max(np.abs(freq - expected) / se) < 4.5
