"""Periodic 1-D finite-volume solver: MUSCL/minmod + local Lax-Friedrichs + Crank-Nicolson.

Solves ``u_t + F(u)_x = c``. The gray-box reference simulator and the twin
model both run through this module; only the flux model differs.

Face ``i`` sits between cells ``i`` and ``i+1`` (mod N). The flux divergence
``R_i = (Fhat_i - Fhat_{i-1}) / dx_i`` depends on cells ``i-2 .. i+2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import Grid1D, SpaceTimeField

LIMITERS = ("minmod", "none")

# slope branch codes
ZERO, LEFT, RIGHT = 0, 1, 2

# above this size the Newton/adjoint systems are factored sparse
DENSE_MAX = 400


def _prev(a):
    """``a[i-1]`` with periodic wrap (``np.roll(a, 1)``)."""
    return np.concatenate((a[-1:], a[:-1]))


def _next(a):
    """``a[i+1]`` with periodic wrap (``np.roll(a, -1)``)."""
    return np.concatenate((a[1:], a[:1]))


class StepError(RuntimeError):
    """Newton failed to converge on a Crank-Nicolson step."""

    def __init__(self, msg: str, trace: list[float], time_index: int | None = None):
        super().__init__(msg)
        self.trace = trace
        self.time_index = time_index


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    limiter: str = "minmod"

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")
        if self.limiter not in LIMITERS:
            raise ValueError(f"limiter must be one of {LIMITERS}")


@dataclass(frozen=True, eq=False)
class ControlField:
    """Source strength ``c[k, i]`` on the space-time grid."""

    values: np.ndarray
    grid: Grid1D

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"control shape {v.shape} does not match grid {self.grid.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid1D) -> "ControlField":
        return cls(np.zeros(grid.shape), grid)


# -- spatial operator ---------------------------------------------------------

def minmod_slopes(u: np.ndarray, limiter: str = "minmod"):
    """Limited undivided slopes and the branch taken in each cell.

    Ties ``|d-| == |d+|`` take the left difference.
    """
    dm = u - _prev(u)
    dp = _next(u) - u
    code = np.full(u.shape, ZERO, dtype=np.int8)
    if limiter == "none":
        return np.zeros_like(u), code
    same = dm * dp > 0
    left = same & (np.abs(dm) <= np.abs(dp))
    right = same & ~left
    code[left] = LEFT
    code[right] = RIGHT
    s = np.where(left, dm, np.where(right, dp, 0.0))
    return s, code


def muscl_reconstruct(u: np.ndarray, limiter: str = "minmod"):
    """Left/right states at every face ``i`` (between cells ``i`` and ``i+1``)."""
    u = np.asarray(u, dtype=float)
    s, _ = minmod_slopes(u, limiter)
    uL = u + 0.5 * s
    uR = _next(u - 0.5 * s)
    return uL, uR


def numerical_flux(uL, uR, model):
    """Local Lax-Friedrichs flux."""
    uL = np.asarray(uL, dtype=float)
    uR = np.asarray(uR, dtype=float)
    FL, fpL, _ = model.derivs(uL)
    FR, fpR, _ = model.derivs(uR)
    a = np.maximum(np.abs(fpL), np.abs(fpR))
    return 0.5 * (FL + FR) - 0.5 * a * (uR - uL)


def divergence(u: np.ndarray, model, dx: np.ndarray, limiter: str = "minmod") -> np.ndarray:
    uL, uR = muscl_reconstruct(u, limiter)
    fh = numerical_flux(uL, uR, model)
    return (fh - _prev(fh)) / dx


@dataclass
class _FaceLinearization:
    uL: np.ndarray
    uR: np.ndarray
    take_left: np.ndarray  # which side sets the dissipation speed
    dF_duL: np.ndarray
    dF_duR: np.ndarray
    code: np.ndarray


def _linearize_faces(u, model, limiter) -> _FaceLinearization:
    s, code = minmod_slopes(u, limiter)
    uL = u + 0.5 * s
    uR = _next(u - 0.5 * s)
    _, fpL, fppL = model.derivs(uL)
    _, fpR, fppR = model.derivs(uR)
    aL, aR = np.abs(fpL), np.abs(fpR)
    take_left = aL >= aR
    a = np.where(take_left, aL, aR)
    jump = uR - uL
    da_duL = np.where(take_left, np.sign(fpL) * fppL, 0.0)
    da_duR = np.where(take_left, 0.0, np.sign(fpR) * fppR)
    dF_duL = 0.5 * fpL + 0.5 * a - 0.5 * jump * da_duL
    dF_duR = 0.5 * fpR - 0.5 * a - 0.5 * jump * da_duR
    return _FaceLinearization(uL, uR, take_left, dF_duL, dF_duR, code)


def _slope_partials(code):
    """d s_i / d u_{i-1}, d u_i, d u_{i+1} for each cell."""
    left = code == LEFT
    right = code == RIGHT
    dm1 = np.where(left, -1.0, 0.0)
    d0 = np.where(left, 1.0, np.where(right, -1.0, 0.0))
    dp1 = np.where(right, 1.0, 0.0)
    return dm1, d0, dp1


def _jacobian_entries(u, model, dx, limiter):
    n = u.size
    lin = _linearize_faces(u, model, limiter)
    sm1, s0, sp1 = _slope_partials(lin.code)
    sm1_n, s0_n, sp1_n = _next(sm1), _next(s0), _next(sp1)
    # face i as a function of u_{i+o}, o = -1..2
    offsets = {
        -1: lin.dF_duL * 0.5 * sm1,
        0: lin.dF_duL * (1.0 + 0.5 * s0) + lin.dF_duR * (-0.5 * sm1_n),
        1: lin.dF_duL * 0.5 * sp1 + lin.dF_duR * (1.0 - 0.5 * s0_n),
        2: lin.dF_duR * (-0.5 * sp1_n),
    }
    idx = np.arange(n)
    rows, cols, vals = [], [], []
    inv = 1.0 / dx
    for o, d in offsets.items():
        rows.append(idx)
        cols.append((idx + o) % n)
        vals.append(d * inv)
        rows.append(idx)
        cols.append((idx - 1 + o) % n)
        vals.append(-_prev(d) * inv)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def divergence_jacobian(u: np.ndarray, model, dx: np.ndarray, limiter: str = "minmod",
                        dense: bool = False):
    """``dR/du``: pentadiagonal plus periodic corners; sparse CSC unless ``dense``."""
    n = u.size
    rows, cols, vals = _jacobian_entries(u, model, dx, limiter)
    if dense:
        return np.bincount(rows * n + cols, weights=vals, minlength=n * n).reshape(n, n)
    return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))


class LinearSystem:
    """Factored ``I/dt + theta * dR/du`` supporting plain and transposed solves."""

    def __init__(self, u, model, dx, limiter, dt, theta=0.5, jacobian=None):
        n = u.size
        self.dense = n <= DENSE_MAX
        J = jacobian if jacobian is not None else divergence_jacobian(u, model, dx, limiter,
                                                                      dense=self.dense)
        if self.dense:
            A = theta * J
            A[np.diag_indices(n)] += 1.0 / dt
            self._lu = sla.lu_factor(A, check_finite=False)
        else:
            self._lu = splu(sp.identity(n, format="csc") / dt + theta * J)

    def solve(self, b, transpose: bool = False):
        if self.dense:
            return sla.lu_solve(self._lu, b, trans=1 if transpose else 0, check_finite=False)
        return self._lu.solve(b, trans="T" if transpose else "N")


def divergence_param_jacobian(u: np.ndarray, model, dx: np.ndarray, limiter: str = "minmod") -> np.ndarray:
    """Dense ``dR/dparams``, shape ``(N, n_params)``."""
    lin = _linearize_faces(u, model, limiter)
    jump = (lin.uR - lin.uL)[:, None]
    gL, gR = model.flux_params(lin.uL), model.flux_params(lin.uR)
    dgL, dgR = model.dflux_params(lin.uL), model.dflux_params(lin.uR)
    sgn = np.where(lin.take_left, np.sign(model.dflux(lin.uL)), np.sign(model.dflux(lin.uR)))[:, None]
    da = sgn * np.where(lin.take_left[:, None], dgL, dgR)
    dface = 0.5 * (gL + gR) - 0.5 * jump * da
    return (dface - np.concatenate((dface[-1:], dface[:-1]))) / dx[:, None]


def limiter_branches(u: np.ndarray, model, limiter: str = "minmod") -> np.ndarray:
    """Combined branch signature of the non-smooth parts (slopes + LLF speed)."""
    lin = _linearize_faces(np.asarray(u, float), model, limiter)
    return lin.code.astype(np.int16) * 2 + lin.take_left


# -- time stepping ------------------------------------------------------------

def step_crank_nicolson(u_k: np.ndarray, model, c_k: np.ndarray, c_k1: np.ndarray, dt: float,
                        dx: np.ndarray, config: SolverConfig = SolverConfig(),
                        R_k: np.ndarray | None = None) -> np.ndarray:
    """One Crank-Nicolson step by Newton's method on the exact Jacobian."""
    u_k = np.asarray(u_k, dtype=float)
    if R_k is None:
        R_k = divergence(u_k, model, dx, config.limiter)
    rhs = 0.5 * (np.asarray(c_k, float) + np.asarray(c_k1, float)) - 0.5 * R_k
    def residual(v):
        return (v - u_k) / dt + 0.5 * divergence(v, model, dx, config.limiter) - rhs

    v = u_k.copy()
    G = residual(v)
    gnorm = np.max(np.abs(G))
    trace = [float(gnorm)]
    for _ in range(config.newton_max_iter):
        if gnorm <= config.newton_tol:
            return v
        delta = LinearSystem(v, model, dx, config.limiter, dt).solve(-G)
        t = 1.0
        for _ls in range(12):
            v_new = v + t * delta
            G_new = residual(v_new)
            gnew = np.max(np.abs(G_new))
            if gnew < gnorm or gnew <= config.newton_tol:
                break
            t *= 0.5
        v, G, gnorm = v_new, G_new, gnew
        trace.append(float(gnorm))
    if gnorm <= config.newton_tol:
        return v
    raise StepError(f"Newton did not converge: |G|_inf = {gnorm:.3e} after "
                    f"{config.newton_max_iter} iterations", trace)


@dataclass(eq=False)
class ForwardRun:
    """Everything the reverse sweep needs: stored states, control, model, config."""

    field: SpaceTimeField
    model: object
    control: ControlField
    config: SolverConfig = field(default_factory=SolverConfig)

    @property
    def grid(self) -> Grid1D:
        return self.field.grid

    @property
    def states(self) -> np.ndarray:
        return self.field.values


def run_forward(u0, model, control: ControlField | None, grid: Grid1D,
                config: SolverConfig = SolverConfig()) -> ForwardRun:
    if not grid.periodic:
        raise ValueError("the 1-D solver supports periodic grids only")
    if grid.nt < 1:
        raise ValueError("space-time grid needs at least one time level")
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (grid.nx,):
        raise ValueError(f"initial condition shape {u0.shape} != ({grid.nx},)")
    if control is None:
        control = ControlField.zeros(grid)
    elif not control.grid.same_as(grid):
        raise ValueError("control field lives on a different grid")
    dx = grid.cell_widths
    c = control.values
    out = np.empty(grid.shape)
    out[0] = u0
    R = divergence(u0, model, dx, config.limiter)
    for k in range(grid.nt - 1):
        try:
            out[k + 1] = step_crank_nicolson(out[k], model, c[k], c[k + 1], grid.time_steps[k],
                                             dx, config, R_k=R)
        except StepError as exc:
            exc.time_index = k
            raise StepError(f"step {k} -> {k + 1}: {exc}", exc.trace, k) from exc
        R = divergence(out[k + 1], model, dx, config.limiter)
    return ForwardRun(SpaceTimeField(out, grid), model, control, config)


def solve_spacetime(u0, model, control: ControlField | None, grid: Grid1D,
                    config: SolverConfig = SolverConfig()) -> SpaceTimeField:
    return run_forward(u0, model, control, grid, config).field


# -- initial conditions ---------------------------------------------------------

def initial_condition(kind: str, x: np.ndarray, low: float = 0.0, high: float = 1.0,
                      center: float = 0.5, width: float = 0.25) -> np.ndarray:
    """Configurable initial-condition families on a periodic unit domain.

    ``square``: ``high`` on ``|x - center| < width``, ``low`` elsewhere.
    ``gaussian``: bump of half-width ``width`` around ``center``.
    ``sine``: one period between ``low`` and ``high``.
    ``ramp``: linear from ``low`` to ``high`` across the domain, dropping back at the seam.
    """
    x = np.asarray(x, dtype=float)
    amp = high - low
    if kind == "square":
        return np.where(np.abs(x - center) < width, high, low).astype(float)
    if kind == "gaussian":
        d = (x - center + 0.5) % 1.0 - 0.5
        return low + amp * np.exp(-(d / width) ** 2)
    if kind == "sine":
        return low + amp * 0.5 * (1.0 + np.sin(2.0 * np.pi * (x - center)))
    if kind == "ramp":
        return low + amp * ((x - center + 0.5) % 1.0)
    raise ValueError(f"unknown initial condition family {kind!r}")
