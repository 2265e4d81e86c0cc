"""Twin-model training: mismatch + L1 objective, projected L-BFGS, recovery reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .adjoint import ObjectiveSpec, reverse_sweep
from .fields import SpaceTimeField
from .flux import SigmoidFluxBasis, TwinFlux
from .fv1d import ControlField, SolverConfig, StepError, run_forward
from .optim import ObjectiveError, projected_lbfgs

logger = logging.getLogger(__name__)

MODES = ("spacetime-flux", "steady-eos")


@dataclass
class InferenceProblem:
    """Regularised inference problem ``min M + lam * ||coeffs||_1`` (p = 1).

    ``lam=None`` selects ``lam_rel * M0 / ||coeffs0||_1`` so that the initial
    regularisation term is ``lam_rel`` times the initial mismatch.
    """

    mode: str = "spacetime-flux"
    lam: float | None = None
    lam_rel: float = 1e-6
    memory: int = 10
    max_iter: int = 500
    gtol: float = 1e-8
    initial_guess: np.ndarray | None = None
    p: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.p != 1:
            raise ValueError("only the L1 (p = 1) regularisation is supported")
        if self.lam is not None and self.lam < 0:
            raise ValueError("regularisation weight must be >= 0")
        if self.memory < 1 or self.max_iter < 0:
            raise ValueError("invalid optimizer settings")


@dataclass
class TraceRow:
    iter: int
    objective: float
    mismatch: float
    reg_term: float
    proj_grad_inf: float


@dataclass
class TrainResult:
    coeffs: np.ndarray
    model: object
    status: str
    n_iter: int
    lam: float
    trace: list[TraceRow] = field(default_factory=list)

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iter,objective,mismatch,reg_term,proj_grad_inf\n")
            for r in self.trace:
                fh.write(f"{r.iter},{r.objective!r},{r.mismatch!r},{r.reg_term!r},{r.proj_grad_inf!r}\n")


# -- space-time flux inference ----------------------------------------------------

@dataclass(eq=False)
class FluxData:
    """Gray-box space-time data plus the shared solver setup."""

    gray: SpaceTimeField
    basis: SigmoidFluxBasis
    control: ControlField | None = None
    config: SolverConfig = field(default_factory=SolverConfig)

    @property
    def u0(self) -> np.ndarray:
        return self.gray.values[0]

    @property
    def objective(self) -> ObjectiveSpec:
        return ObjectiveSpec.mismatch(self.gray)


def flux_mismatch_and_gradient(xi: np.ndarray, data: FluxData):
    """Mismatch of the twin run against the gray data and its gradient in ``xi``."""
    model = TwinFlux(data.basis, np.maximum(xi, 0.0))
    try:
        run = run_forward(data.u0, model, data.control, data.gray.grid, data.config)
    except StepError as exc:
        raise ObjectiveError(str(exc)) from exc
    res = reverse_sweep(run, data.objective, params=True)
    return res.value, res.grad_params


def training_objective(coeffs: np.ndarray, problem: InferenceProblem, data, lam: float | None = None):
    """``(value, gradient)`` of mismatch + ``lam * sum(coeffs_reg)``."""
    lam = problem.lam if lam is None else lam
    lam = 0.0 if lam is None else lam
    if problem.mode == "spacetime-flux":
        M, g = flux_mismatch_and_gradient(coeffs, data)
        mask = np.ones_like(coeffs)
    else:
        M, g = data.mismatch_and_gradient(coeffs)
        mask = data.reg_mask
    reg = lam * float(np.abs(coeffs * mask).sum())
    # regularised coefficients are bounded below by 0, so d|x|/dx = 1 on the feasible set
    return M + reg, g + lam * mask


def secant_flux_derivative(gray: SpaceTimeField, control: ControlField | None = None,
                           min_grad_frac: float = 0.05):
    """Pointwise estimates of ``dF/du`` from ``u_t + F'(u) u_x = c``.

    Returns the sample states and slope estimates at space-time points where
    ``|u_x|`` is at least ``min_grad_frac`` of its maximum.
    """
    u = gray.values
    g = gray.grid
    dt = g.time_steps[:-1, None]
    ut = (u[1:] - u[:-1]) / dt
    um = 0.5 * (u[1:] + u[:-1])
    dx = g.cell_widths
    ux_full = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (
        np.roll(dx, -1) * 0.5 + dx + np.roll(dx, 1) * 0.5)
    ux = 0.5 * (ux_full[1:] + ux_full[:-1])
    c = np.zeros_like(ut) if control is None else 0.5 * (control.values[1:] + control.values[:-1])
    big = np.abs(ux) >= min_grad_frac * max(np.abs(ux).max(), 1e-300)
    if not np.any(big):
        return np.zeros(0), np.zeros(0)
    slope = (c[big] - ut[big]) / ux[big]
    return um[big], slope


def initial_flux_guess(data: FluxData, fallback: float = 0.05, ridge: float = 1e-6) -> np.ndarray:
    """Non-negative least-squares fit of ``sum xi_k g_k'`` to secant slope estimates."""
    us, slopes = secant_flux_derivative(data.gray, data.control)
    m = data.basis.m
    if us.size < m:
        return np.full(m, fallback)
    B = data.basis.deriv(us)
    scale = np.sqrt(ridge * us.size) * np.abs(B).max()
    A = np.vstack([B, scale * np.eye(m)])
    b = np.concatenate([np.clip(slopes, 0.0, None), np.zeros(m)])
    xi, _ = nnls(A, b, maxiter=50 * m)
    if not np.all(np.isfinite(xi)) or not np.any(xi > 0):
        return np.full(m, fallback)
    return xi


def train(problem: InferenceProblem, data) -> TrainResult:
    """Projected L-BFGS on the regularised mismatch, starting from the configured guess."""
    if problem.mode == "spacetime-flux":
        x0 = (np.asarray(problem.initial_guess, float) if problem.initial_guess is not None
              else initial_flux_guess(data))
        lower, upper = np.zeros_like(x0), None
        mask = np.ones_like(x0)
        scale = np.ones_like(x0)
    else:
        x0 = (np.asarray(problem.initial_guess, float) if problem.initial_guess is not None
              else data.initial_guess())
        lower, upper = data.lower_bounds(), None
        mask = data.reg_mask
        scale = data.coeff_scale()

    lam = problem.lam
    if lam is None:
        M0, _ = training_objective(x0, problem, data, lam=0.0)
        l1 = float(np.abs(x0 * mask).sum())
        lam = problem.lam_rel * M0 / l1 if l1 > 0 else problem.lam_rel * M0

    def fun(z):
        val, g = training_objective(z * scale, problem, data, lam=lam)
        return val, g * scale

    trace: list[TraceRow] = []

    def cb(it, z, f, g, pginf):
        x = z * scale
        reg = lam * float(np.abs(x * mask).sum())
        trace.append(TraceRow(it, float(f), float(f - reg), reg, float(pginf)))

    res = projected_lbfgs(fun, x0 / scale, lower=None if lower is None else lower / scale,
                          upper=upper, memory=problem.memory, max_iter=problem.max_iter,
                          gtol=problem.gtol, callback=cb)
    coeffs = res.x * scale
    if problem.mode == "spacetime-flux":
        model = TwinFlux(data.basis, np.maximum(coeffs, 0.0))
    else:
        model = data.model_from_coeffs(coeffs)
    logger.info("training finished: %s after %d iterations, objective %.6e",
                res.status, res.n_iter, res.fun)
    return TrainResult(coeffs, model, res.status, res.n_iter, float(lam), trace)


# -- recovery reports ---------------------------------------------------------------

def _rel_l2(a, b):
    den = np.linalg.norm(b)
    num = np.linalg.norm(a - b)
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return float(num / den)


def recovered_width(u: np.ndarray, err: np.ndarray, scale: float, tol: float = 0.1) -> float:
    """Width of the longest contiguous run of ``u`` where ``err <= tol * scale``."""
    ok = err <= tol * scale
    cur_start = None
    width = 0.0
    for i, flag in enumerate(ok):
        if flag and cur_start is None:
            cur_start = i
        if (not flag or i == len(ok) - 1) and cur_start is not None:
            end = i if flag else i - 1
            w = u[end] - u[cur_start]
            width = max(width, w)
            cur_start = None
    return float(width)


def flux_recovery_report(trained, truth, excited: tuple[float, float], n: int = 401,
                         domain: tuple[float, float] = (0.0, 1.0), tol: float = 0.1) -> dict:
    """Compare ``dF/du`` curves inside and outside the excited interval.

    Comparing derivatives removes the additive-constant ambiguity of the flux.
    """
    lo, hi = excited
    a, b = min(domain[0], lo), max(domain[1], hi)
    u = np.linspace(a, b, n)
    d_tr, d_true = trained.dflux(u), truth.dflux(u)
    inside = (u >= lo) & (u <= hi)
    err = np.abs(d_tr - d_true)
    scale = float(np.abs(d_true[inside]).max()) if np.any(inside) else float(np.abs(d_true).max())
    out = {
        "excited": [float(lo), float(hi)],
        "in_rel_l2": _rel_l2(d_tr[inside], d_true[inside]) if np.any(inside) else 0.0,
        "in_rel_sup": float(err[inside].max() / scale) if np.any(inside) and scale > 0 else 0.0,
        "out_rel_l2": _rel_l2(d_tr[~inside], d_true[~inside]) if np.any(~inside) else 0.0,
        "recovered_width": recovered_width(u, err, scale, tol),
        "u": u.tolist(),
        "dF_trained": d_tr.tolist(),
        "dF_truth": d_true.tolist(),
    }
    return out


# -- steady EOS inference -------------------------------------------------------------

class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightSet:
    """Steady mismatch weights for density, velocity and total energy."""

    w_rho: float = 1.0
    w_u: float = 1.0
    w_E: float = 1.0

    def __post_init__(self):
        if not (self.w_rho > 0 and self.w_u > 0 and self.w_E > 0):
            raise ValueError("mismatch weights must be positive")
        for k in ("w_rho", "w_u", "w_E"):
            object.__setattr__(self, k, float(getattr(self, k)))

    def as_tuple(self):
        return (self.w_rho, self.w_u, self.w_E)

    def to_dict(self) -> dict:
        return {"w_rho": float(self.w_rho), "w_u": float(self.w_u), "w_E": float(self.w_E)}


def steady_sq_norms(Q: np.ndarray, gray: dict, dx: np.ndarray):
    """Cell-width weighted squared differences of ``(rho, u, E)`` and their ``Q`` gradients."""
    rho = Q[:, 0]
    u = Q[:, 1] / rho
    E = Q[:, 2] / rho
    d = [rho - gray["rho"], u - gray["u"], E - gray["E"]]
    norms = np.array([float(di**2 @ dx) for di in d])
    grads = np.zeros((3, Q.shape[0], 3))
    grads[0, :, 0] = 2.0 * d[0] * dx
    grads[1, :, 0] = -2.0 * d[1] * dx * u / rho
    grads[1, :, 1] = 2.0 * d[1] * dx / rho
    grads[2, :, 0] = -2.0 * d[2] * dx * E / rho
    grads[2, :, 2] = 2.0 * d[2] * dx / rho
    return norms, grads


def gray_state_cloud(gray: dict):
    """``(rho, U)`` states of a steady gray-box solution given as ``rho, u, E`` fields."""
    rho = np.asarray(gray["rho"], float)
    U = rho * np.asarray(gray["E"], float) - 0.5 * rho * np.asarray(gray["u"], float) ** 2
    return rho, U


@dataclass(eq=False)
class SteadyEosData:
    """Gray-box steady nozzle solution plus the twin setup (skeleton EOS, geometry, BCs)."""

    gray: dict
    skeleton: object
    spline: object
    bc: object
    config: object
    weights: WeightSet = field(default_factory=WeightSet)
    _warm: object = field(default=None, repr=False)

    @property
    def reg_mask(self) -> np.ndarray:
        mask = np.ones(self.skeleton.n_params)
        mask[-1] = 0.0
        return mask

    def lower_bounds(self) -> np.ndarray:
        lo = np.zeros(self.skeleton.n_params)
        lo[-1] = -np.inf
        return lo

    @property
    def p_scale(self) -> float:
        return 0.5 * (self.bc.p_t_in + self.bc.p_out)

    def coeff_scale(self) -> np.ndarray:
        return np.full(self.skeleton.n_params, self.p_scale)

    def model_from_coeffs(self, theta):
        theta = np.array(theta, dtype=float)
        theta[:-1] = np.maximum(theta[:-1], 0.0)
        return self.skeleton.with_params(theta)

    def gray_start(self):
        """Gray solution as a Newton start; its states lie where the twin EOS was fitted."""
        from .nozzle import NozzleState, nozzle_grid

        rho = np.asarray(self.gray["rho"], float)
        u = np.asarray(self.gray["u"], float)
        Q = np.column_stack([rho, rho * u, rho * np.asarray(self.gray["E"], float)])
        grid = nozzle_grid(self.spline, rho.size)
        return NozzleState(Q, grid, np.zeros((2, 4)), np.zeros(rho.size))

    def solve_twin(self, eos):
        """Steady twin solve from the last converged state, else the gray solution, else cold."""
        from .nozzle import NozzleError, solve_steady

        starts = ([self._warm] if self._warm is not None else []) + [self.gray_start(), None]
        last = None
        for start in starts:
            try:
                return solve_steady(eos, self.spline, self.bc, self.config, initial=start)
            except NozzleError as exc:
                last = exc
        raise ObjectiveError(str(last)) from last

    def mismatch_and_gradient(self, theta):
        from .adjoint import SingularJacobianError, steady_adjoint
        from .nozzle import residual_jacobian, residual_param_jacobian

        eos = self.model_from_coeffs(theta)
        state = self.solve_twin(eos)
        self._warm = state
        dx = state.grid.cell_widths
        norms, grads = steady_sq_norms(state.Q, self.gray, dx)
        w = np.array(self.weights.as_tuple())
        M = float(w @ norms)
        dM = np.tensordot(w, grads, axes=1).ravel()
        face_area = self.spline.area(state.grid.faces)
        try:
            psi = steady_adjoint(residual_jacobian(state.Q, eos, face_area, self.bc), dM)
        except SingularJacobianError as exc:
            raise ObjectiveError(str(exc)) from exc
        g = residual_param_jacobian(state.Q, eos, face_area, self.bc).T @ psi
        return M, g

    def pressure_estimate(self) -> np.ndarray:
        """Cell pressures from the steady momentum balance integrated upstream from ``p_out``."""
        rho, u = np.asarray(self.gray["rho"]), np.asarray(self.gray["u"])
        x = np.asarray(self.gray.get("x", None)) if "x" in self.gray else None
        grid_x = x if x is not None else None
        from .nozzle import nozzle_grid

        grid = nozzle_grid(self.spline, rho.size)
        a = self.spline.area(grid.cell_centers if grid_x is None else grid_x)
        a_face = self.spline.area(grid.faces[1:-1])
        mom = rho * u**2 * a
        p = np.empty_like(rho)
        p[-1] = self.bc.p_out
        for i in range(rho.size - 2, -1, -1):
            p[i] = p[i + 1] + (mom[i + 1] - mom[i]) / a_face[i]
        return p

    def initial_guess(self, ridge: float = 1e-3) -> np.ndarray:
        """Non-negative fit of the EOS expansion to the momentum-balance pressure estimate."""
        rho, U = gray_state_cloud(self.gray)
        p_est = self.pressure_estimate()
        B = self.skeleton.param_jacobian(rho, U)[:, :-1]
        s = self.p_scale
        n = B.shape[1]
        A = np.hstack([B, np.ones((rho.size, 1)), -np.ones((rho.size, 1))])
        reg = np.sqrt(ridge * rho.size) * np.hstack([np.eye(n), np.zeros((n, 2))])
        sol, _ = nnls(np.vstack([A, reg]), np.concatenate([p_est / s, np.zeros(n)]), maxiter=50 * (n + 2))
        return np.append(sol[:n], sol[n] - sol[n + 1]) * s


def _mean_scale(skeleton, rho, U, p_bar):
    B = skeleton.param_jacobian(rho, U)[:, :-1].sum(axis=1)
    return float(p_bar * B.sum() / (B @ B))


def random_eos_guess(data: SteadyEosData, rng: np.random.Generator):
    """Random EOS with ``alpha ~ U[0, 2 a_bar]`` and ``p0 ~ U[0, p_bar]``.

    ``a_bar`` makes the mean expansion match ``p_bar`` over the gray states.
    """
    rho, U = gray_state_cloud(data.gray)
    p_bar = data.p_scale
    a_bar = _mean_scale(data.skeleton, rho, U, p_bar)
    alpha = rng.uniform(0.0, 2.0 * a_bar, data.skeleton.alpha.size)
    p0 = rng.uniform(0.0, p_bar)
    return data.skeleton.with_params(np.append(alpha, p0))


def calibrate_weights(data: SteadyEosData, n_random: int = 5, seed: int = 0) -> WeightSet:
    """Reciprocal mean squared mismatches of random EOS guesses; failed guesses are skipped."""
    if n_random < 2:
        raise ValueError("calibration needs n_random >= 2")
    rng = np.random.default_rng(seed)
    norms = []
    saved = data._warm
    for k in range(n_random):
        eos = random_eos_guess(data, rng)
        data._warm = None
        try:
            state = data.solve_twin(eos)
        except ObjectiveError as exc:
            logger.info("calibration guess %d skipped: %s", k, exc)
            continue
        n, _ = steady_sq_norms(state.Q, data.gray, state.grid.cell_widths)
        norms.append(n)
    data._warm = saved
    if not norms:
        raise CalibrationError("every random calibration guess failed to converge")
    return weights_from_norms(norms)


def weights_from_norms(norms) -> WeightSet:
    mean = np.mean(np.asarray(norms, dtype=float), axis=0)
    if np.any(mean <= 0):
        raise CalibrationError("random guesses reproduce the gray data exactly; weights undefined")
    return WeightSet(*(1.0 / mean))


def eos_sample_sets(hull, rho, U, n_lattice: int = 41, expand: float = 0.25):
    """In-hull samples (cloud plus interior lattice) and out-of-hull lattice samples."""
    r0, r1 = float(np.min(rho)), float(np.max(rho))
    u0, u1 = float(np.min(U)), float(np.max(U))
    dr, du = (r1 - r0) * expand, (u1 - u0) * expand
    R, Uq = np.meshgrid(np.linspace(r0 - dr, r1 + dr, n_lattice),
                        np.linspace(u0 - du, u1 + du, n_lattice), indexing="ij")
    R, Uq = R.ravel(), Uq.ravel()
    inside = hull.contains(R, Uq)
    in_set = (np.concatenate([np.ravel(rho), R[inside]]), np.concatenate([np.ravel(U), Uq[inside]]))
    return in_set, (R[~inside], Uq[~inside])


def eos_recovery_report(trained, truth, rho, U, n_lattice: int = 41, expand: float = 0.25) -> dict:
    """Relative L2 pressure errors inside and outside the convex hull of the states."""
    from .eos import StateHull

    hull = StateHull.from_cloud(rho, U)
    (ri, ui), (ro, uo) = eos_sample_sets(hull, rho, U, n_lattice, expand)
    pin_t, pin_w = truth.pressure(ri, ui), trained.pressure(ri, ui)
    pout_t, pout_w = truth.pressure(ro, uo), trained.pressure(ro, uo)
    return {
        "in_hull_rel_l2": _rel_l2(pin_w, pin_t),
        "out_hull_rel_l2": _rel_l2(pout_w, pout_t) if ro.size else 0.0,
        "n_in": int(ri.size),
        "n_out": int(ro.size),
        "hull": hull.to_dict(),
    }


def recovery_report(trained, truth, region, **kw) -> dict:
    """Flux report when ``region`` is an interval, EOS report when it is a ``(rho, U)`` cloud."""
    if np.ndim(region[0]) == 0:
        return flux_recovery_report(trained, truth, tuple(region), **kw)
    return eos_recovery_report(trained, truth, region[0], region[1], **kw)
