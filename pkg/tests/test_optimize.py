import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trivariate.optimize import bfgs, line_search, numeric_hessian


def rosenbrock(x):
    f = 100.0 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
    g = np.array([-400.0 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200.0 * (x[1] - x[0] ** 2)])
    return f, g


def test_rosenbrock():
    res = bfgs(rosenbrock, [-1.2, 1.0], gtol=1e-8)
    assert res.converged
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-6)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))
    assert res.iterations < 100


@given(st.lists(st.floats(0.1, 10), min_size=2, max_size=6), st.integers(0, 1000))
def test_quadratic_minimum(diag, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(len(diag), len(diag))))
    a = q @ np.diag(diag) @ q.T
    b = rng.normal(size=len(diag))
    res = bfgs(lambda x: (0.5 * x @ a @ x - b @ x, a @ x - b), np.zeros(len(diag)))
    assert res.converged
    # |x - x*| <= |grad| / smallest eigenvalue
    assert np.allclose(res.x, np.linalg.solve(a, b), atol=1e-6 / min(diag) * np.sqrt(len(diag)))


def test_seeded_curvature_converges_in_one_step():
    a = np.diag([1.0, 100.0])
    res = bfgs(lambda x: (0.5 * x @ a @ x, a @ x), [1.0, 1.0], inv_hessian=np.linalg.inv(a))
    assert res.iterations == 1 and res.converged


def test_strong_wolfe_conditions():
    x = np.array([-1.2, 1.0])
    f0, g0 = rosenbrock(x)
    d = -g0
    alpha, f, g, _ = line_search(rosenbrock, x, f0, g0, d, alpha0=1e-3)
    assert f <= f0 + 1e-4 * alpha * (g0 @ d)
    assert abs(g @ d) <= 0.9 * abs(g0 @ d)


def test_non_finite_trial_points_are_backed_off():
    def fg(x):
        if x[0] > 2.0:
            return np.inf, np.full(1, np.nan)
        return (x[0] - 1.5) ** 2, np.array([2 * (x[0] - 1.5)])

    res = bfgs(fg, [0.0])
    assert res.converged and res.x[0] == pytest.approx(1.5, abs=1e-6)


def test_non_finite_start_raises():
    with pytest.raises(FloatingPointError):
        bfgs(lambda x: (np.nan, x), [0.0])


def test_iteration_limit_reported():
    res = bfgs(rosenbrock, [-1.2, 1.0], max_iter=2)
    assert not res.converged and res.message == "iteration limit reached"


def test_callback_sees_every_iterate():
    seen = []
    res = bfgs(rosenbrock, [-1.2, 1.0], callback=lambda x, f, g: seen.append(f))
    assert seen == res.history[1:]


def test_numeric_hessian_of_quadratic():
    a = np.array([[3.0, 1.0], [1.0, 2.0]])
    assert np.allclose(numeric_hessian(lambda x: a @ x, np.array([0.5, -2.0])), a, atol=1e-9)
