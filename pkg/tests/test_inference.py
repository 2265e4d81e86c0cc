import numpy as np
import pytest

from twinmodel.eos import ReferenceEos, build_param_eos
from twinmodel.fields import Grid1D
from twinmodel.flux import BuckleyLeverettFlux, SigmoidFluxBasis, TwinFlux
from twinmodel.fv1d import initial_condition, run_forward
from twinmodel.inference import (CalibrationError, FluxData, InferenceProblem, SteadyEosData, WeightSet,
                                 calibrate_weights, eos_recovery_report, flux_recovery_report,
                                 gray_state_cloud, random_eos_guess, recovery_report, steady_sq_norms, train,
                                 training_objective, weights_from_norms)
from twinmodel.optim import ObjectiveError
from twinmodel.nozzle import BsplineArea, FlowBc, NozzleConfig, solve_steady

from conftest import OffsetFlux, central_fd, rel_l2

BASIS = SigmoidFluxBasis.default()
XI_STAR = np.array([0.0, 0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.6,
                    0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.0, 0.0, 0.0, 0.0])


@pytest.fixture(scope="module")
def twin_data():
    g = Grid1D.uniform(40, 40, horizon=0.3)
    u0 = initial_condition("sine", g.cell_centers, 0.2, 0.7)
    gray = run_forward(u0, TwinFlux(BASIS, XI_STAR), None, g).field
    return FluxData(gray, BASIS)


def test_exact_coefficients_give_zero_objective(twin_data):
    val, g = training_objective(XI_STAR, InferenceProblem(lam=0.0), twin_data)
    assert val == 0.0 and np.all(g == 0)


def test_start_at_truth_terminates_quickly(twin_data):
    res = train(InferenceProblem(lam=1e-8, initial_guess=XI_STAR, max_iter=20), twin_data)
    assert res.n_iter <= 2 and res.status == "converged"


def test_training_trace_monotone_and_deterministic(twin_data):
    prob = InferenceProblem(max_iter=15, initial_guess=np.full(20, 0.2))
    a = train(prob, twin_data)
    b = train(prob, twin_data)
    f = [r.objective for r in a.trace]
    assert all(y <= x for x, y in zip(f, f[1:]))
    assert np.array_equal(a.coeffs, b.coeffs)
    assert np.all(a.coeffs >= 0)


def test_lambda_scaling_rule(twin_data):
    x0 = np.full(20, 0.2)
    res = train(InferenceProblem(max_iter=0, initial_guess=x0, lam_rel=1e-2), twin_data)
    M0, _ = training_objective(x0, InferenceProblem(lam=0.0), twin_data)
    assert res.lam == pytest.approx(1e-2 * M0 / x0.sum())


def test_problem_validation():
    with pytest.raises(ValueError):
        InferenceProblem(mode="other")
    with pytest.raises(ValueError):
        InferenceProblem(p=2)
    with pytest.raises(ValueError):
        InferenceProblem(lam=-1.0)


def test_flux_report_identical_and_shift_invariant():
    m = TwinFlux(BASIS, XI_STAR)
    rep = flux_recovery_report(m, m, (0.2, 0.7))
    assert rep["in_rel_l2"] == 0 and rep["out_rel_l2"] == 0 and rep["in_rel_sup"] == 0
    bl = BuckleyLeverettFlux(2.0)
    a = flux_recovery_report(m, bl, (0.2, 0.7))
    b = flux_recovery_report(OffsetFlux(m, 5.0), OffsetFlux(bl, -1.0), (0.2, 0.7))
    assert a == b
    assert recovery_report(m, bl, (0.2, 0.7)) == a


@pytest.fixture(scope="module")
def steady_data():
    spline = BsplineArea.from_ordinates([1.0, 0.9, 0.75, 0.8, 0.95, 1.0])
    bc, cfg = FlowBc(), NozzleConfig(n_cells=50)
    st = solve_steady(ReferenceEos("ideal"), spline, bc, cfg)
    gray = {"rho": st.rho.copy(), "u": st.u.copy(), "E": st.E.copy()}
    rho, U = gray_state_cloud(gray)
    return SteadyEosData(gray, build_param_eos(rho, U, 4, 4), spline, bc, cfg)


def test_weights_from_norms_examples():
    w = weights_from_norms([[1.0, 2.0, 4.0], [3.0, 2.0, 4.0]])
    assert w.w_rho == pytest.approx(0.5) and w.w_u == pytest.approx(0.5) and w.w_E == pytest.approx(0.25)
    with pytest.raises(CalibrationError):
        weights_from_norms([[0.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
    with pytest.raises(ValueError):
        WeightSet(1.0, 0.0, 1.0)


def test_steady_norm_gradients_match_fd(steady_data, rng):
    gray = steady_data.gray
    Q = np.column_stack([gray["rho"], gray["rho"] * gray["u"], gray["rho"] * gray["E"]])
    Q = Q * (1 + 1e-3 * rng.normal(size=Q.shape))
    dx = np.full(Q.shape[0], 1 / Q.shape[0])
    _, grads = steady_sq_norms(Q, gray, dx)
    for q in range(3):
        z0 = Q.ravel()
        fd = np.zeros_like(z0)
        for j in range(z0.size):
            h = 1e-6 * abs(z0[j])
            zp, zm = z0.copy(), z0.copy()
            zp[j] += h
            zm[j] -= h
            fd[j] = (steady_sq_norms(zp.reshape(Q.shape), gray, dx)[0][q]
                     - steady_sq_norms(zm.reshape(Q.shape), gray, dx)[0][q]) / (2 * h)
        assert rel_l2(grads[q].ravel(), fd) < 1e-5


def test_steady_eos_gradient_matches_fd(steady_data):
    d = steady_data
    d.weights = WeightSet(1.0, 1.0, 1e-9)
    theta = d.initial_guess()
    theta[:-1] = np.maximum(theta[:-1], 0.05 * d.p_scale)  # keep every alpha off its bound
    _, g = d.mismatch_and_gradient(theta)
    h = 1e-6 * d.p_scale
    fd = central_fd(lambda t: d.mismatch_and_gradient(t)[0], theta, h)
    assert rel_l2(g, fd) < 1e-5


def test_calibrated_terms_comparable(steady_data):
    d = steady_data
    w = calibrate_weights(d, n_random=5, seed=3)
    again = calibrate_weights(d, n_random=5, seed=3)
    assert w == again
    # fresh draws from the calibration distribution under another seed; diverging draws are skipped
    rng = np.random.default_rng(99)
    d._warm = None
    for _ in range(20):
        try:
            st = d.solve_twin(random_eos_guess(d, rng))
            break
        except ObjectiveError:
            continue
    norms, _ = steady_sq_norms(st.Q, d.gray, st.grid.cell_widths)
    terms = np.array(w.as_tuple()) * norms
    assert terms.max() / terms.min() <= 10.0


def test_eos_report_identical_is_zero(steady_data):
    rho, U = gray_state_cloud(steady_data.gray)
    eos = steady_data.model_from_coeffs(steady_data.initial_guess())
    rep = eos_recovery_report(eos, eos, rho, U)
    assert rep["in_hull_rel_l2"] == 0 and rep["out_hull_rel_l2"] == 0
    assert rep["n_in"] > rho.size and rep["n_out"] > 0
