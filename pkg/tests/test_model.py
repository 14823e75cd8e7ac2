import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trivariate.model import (
    DataError,
    Dataset,
    ModelSpec,
    ParameterSet,
    SpecError,
    ValidationError,
    angles_jacobian,
    angles_to_corr,
    build_design,
    constrain,
    constrain_jacobian,
    corr_to_angles,
    natural_labels,
    unconstrain,
)

from conftest import SMALL_SPEC, small_params

angle = st.floats(-6, 6, allow_nan=False)


def test_spec_counts_and_labels():
    assert SMALL_SPEC.k == (3, 3, 3)
    # 9 gammas, 3 thetas, sigma1, 3 angles, 2 + 3 free thresholds
    assert SMALL_SPEC.n_params == 21
    assert len(SMALL_SPEC.param_labels()) == 21
    assert len(natural_labels(SMALL_SPEC)) == 21
    assert SMALL_SPEC.columns_used() == ["x1", "d1", "x2", "x3", "d2"]
    assert natural_labels(SMALL_SPEC)[:3] == ["eq1:const", "eq1:x1", "eq1:d1"]


def test_spec_without_constant():
    spec = ModelSpec(("a",), ("b",), ("c",), j2=2, j3=2, include_constant_eq2=False)
    assert spec.coef_names(2) == ["b"]
    assert spec.n_params == 2 + 1 + 2 + 7


@pytest.mark.parametrize("kwargs", [
    dict(covariates_eq1=("a", "a")),
    dict(covariates_eq2=("const",)),
    dict(j2=1),
])
def test_spec_errors(kwargs):
    with pytest.raises(SpecError):
        ModelSpec(**kwargs)


def test_dataset_column_checks():
    with pytest.raises(DataError):
        Dataset({"a": np.zeros(3), "b": np.zeros(4)})
    with pytest.raises(DataError):
        Dataset({"a": np.zeros((3, 2))})
    d = Dataset({"a": [1.0, np.nan, 3.0], "b": [1.0, 2.0, 3.0]})
    assert d.dropna(["a"]).n == 2
    assert d.dropna(["b"]) is d
    with pytest.raises(SpecError, match="'zz'"):
        d["zz"]


def _rows(n=5):
    rng = np.random.default_rng(1)
    return {
        "x1": rng.normal(size=n), "d1": rng.integers(0, 2, n).astype(float),
        "x2": rng.normal(size=n), "x3": rng.normal(size=n),
        "d2": rng.integers(0, 2, n).astype(float),
        "y1": rng.normal(size=n), "y2": np.array([1, 2, 3, 4, 1.0])[:n],
        "y3": np.array([5, 4, 3, 2, 1.0])[:n],
    }


def test_build_design_layout():
    d = build_design(Dataset(_rows()), SMALL_SPEC)
    assert d.x1.shape == (5, 3)
    assert np.all(d.x1[:, 0] == 1.0)
    assert d.y2.dtype == np.int64


@pytest.mark.parametrize("bad", [0.0, 5.0, 2.5, np.nan])
def test_build_design_rejects_unobserved_levels(bad):
    rows = _rows()
    rows["y2"] = rows["y2"].copy()
    rows["y2"][2] = bad
    with pytest.raises(DataError, match="y2"):
        build_design(Dataset(rows), SMALL_SPEC)


def test_build_design_missing_column_named():
    rows = _rows()
    del rows["x3"]
    with pytest.raises(SpecError, match="x3"):
        build_design(Dataset(rows), SMALL_SPEC)


def test_parameter_validation():
    small_params().validate(SMALL_SPEC)
    with pytest.raises(ValidationError):
        small_params(sigma1=0.0).validate()
    with pytest.raises(ValidationError):
        small_params(mu2=[0.1, 0.6, 1.3]).validate()
    with pytest.raises(ValidationError):
        small_params(mu3=[0.0, 0.5, 0.5, 1.6]).validate()
    with pytest.raises(ValidationError):
        small_params(rho12=0.9, rho13=0.9, rho23=-0.9).validate()
    with pytest.raises(SpecError):
        small_params(gamma1=[1.0]).validate(SMALL_SPEC)


def test_parameter_dict_round_trip():
    p = small_params()
    q = ParameterSet.from_dict(p.as_dict())
    assert np.array_equal(p.natural_vector(), q.natural_vector())


def test_round_trip_constrain():
    p = small_params()
    q = constrain(unconstrain(p, SMALL_SPEC), SMALL_SPEC)
    assert np.allclose(p.natural_vector(), q.natural_vector(), atol=1e-14)


@given(st.lists(angle, min_size=3, max_size=3))
def test_angles_always_give_positive_definite_correlation(u):
    r12, r13, r23 = angles_to_corr(np.array(u))
    corr = np.array([[1, r12, r13], [r12, 1, r23], [r13, r23, 1]])
    assert np.linalg.eigvalsh(corr).min() > -1e-12


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_corr_angle_round_trip(u):
    u = np.array(u)
    back = corr_to_angles(*angles_to_corr(u))
    assert np.allclose(back, u, atol=1e-8 * (1 + np.abs(u).max() ** 3))


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_angles_jacobian_matches_differences(u):
    u = np.array(u)
    h = 1e-6
    fd = np.column_stack([
        (np.array(angles_to_corr(u + h * e)) - np.array(angles_to_corr(u - h * e))) / (2 * h)
        for e in np.eye(3)
    ])
    assert np.allclose(angles_jacobian(u), fd, atol=1e-8)


def test_constrain_jacobian_matches_differences():
    u = unconstrain(small_params(), SMALL_SPEC) + 0.1
    h = 1e-6
    fd = np.column_stack([
        (constrain(u + h * e, SMALL_SPEC).natural_vector()
         - constrain(u - h * e, SMALL_SPEC).natural_vector()) / (2 * h)
        for e in np.eye(u.size)
    ])
    assert np.allclose(constrain_jacobian(u, SMALL_SPEC), fd, atol=1e-8)


@given(st.lists(st.floats(-4, 4), min_size=21, max_size=21))
def test_constrain_is_always_valid(u):
    constrain(np.array(u), SMALL_SPEC).validate(SMALL_SPEC)


def test_constrain_checks_length():
    with pytest.raises(SpecError):
        constrain(np.zeros(3), SMALL_SPEC)


def test_corr_to_angles_rejects_non_pd():
    with pytest.raises(ValidationError):
        corr_to_angles(0.9, 0.9, -0.9)
    with pytest.raises(ValidationError):
        corr_to_angles(1.0, 0.0, 0.0)
