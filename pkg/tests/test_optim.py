import numpy as np
import pytest
from scipy.optimize import minimize

from twinmodel.optim import ObjectiveError, projected_gradient, projected_lbfgs


def _quadratic(rng, n=8):
    M = rng.normal(size=(n, n))
    H = M @ M.T + n * np.eye(n)
    b = rng.normal(size=n) * 5
    return (lambda x: (0.5 * x @ H @ x - b @ x, H @ x - b)), H, b


def test_bound_constrained_quadratic_matches_reference(rng):
    fun, H, b = _quadratic(rng)
    lo, hi = np.zeros(8), np.full(8, 0.5)
    res = projected_lbfgs(fun, np.full(8, 0.25), lo, hi, gtol=1e-10)
    ref = minimize(fun, np.full(8, 0.25), jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   options={"gtol": 1e-12, "ftol": 1e-15})
    assert res.success
    assert np.allclose(res.x, ref.x, atol=1e-7)
    assert np.all(res.x >= lo) and np.all(res.x <= hi)


def test_rosenbrock_unconstrained():
    def rosen(x):
        f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
        g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
        return f, g

    res = projected_lbfgs(rosen, [-1.2, 1.0], gtol=1e-9, max_iter=500)
    assert res.success and np.allclose(res.x, 1.0, atol=1e-6)


def test_objective_monotone_along_accepted_steps(rng):
    fun, _, _ = _quadratic(rng, 12)
    res = projected_lbfgs(fun, rng.uniform(0, 1, 12), lower=np.zeros(12), gtol=1e-12)
    f = [h[1] for h in res.history]
    assert all(b <= a for a, b in zip(f, f[1:]))


def test_converged_start_takes_no_iterations():
    res = projected_lbfgs(lambda x: (float(x @ x), 2 * x), np.zeros(3))
    assert res.success and res.n_iter == 0


def test_projected_gradient_at_active_bound():
    x = np.array([0.0, 1.0])
    g = np.array([3.0, 3.0])
    assert np.allclose(projected_gradient(x, g, np.zeros(2), np.full(2, np.inf)), [0.0, 1.0])


def test_objective_error_is_backtracked():
    def fun(x):
        if x[0] > 2.0:
            raise ObjectiveError("outside the valid region")
        return float((x[0] - 1.5) ** 2), np.array([2 * (x[0] - 1.5)])

    res = projected_lbfgs(fun, [10.0 - 9.0], gtol=1e-10)
    assert res.success and res.x[0] == pytest.approx(1.5)


def test_line_search_failure_reports_status():
    # gradient points the wrong way, so no step satisfies the decrease condition
    res = projected_lbfgs(lambda x: (float(x @ x), -2 * x), np.ones(2), max_iter=5)
    assert res.status == "line_search_failed"
