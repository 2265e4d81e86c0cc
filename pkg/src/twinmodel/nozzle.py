"""Steady quasi-1D Euler flow through a B-spline nozzle with a pluggable EOS.

Cell-centred first-order finite volumes with a Rusanov face flux. The steady
residual of cell ``i`` is

    R_i = F_{i+1/2} A_{i+1/2} - F_{i-1/2} A_{i-1/2} - (0, p_i (A_{i+1/2} - A_{i-1/2}), 0)

so it is linear in the face areas. Boundary faces carry the physical flux of
a boundary state. Inlet: fixed density, velocity extrapolated from the first
cell, static pressure from the total pressure ``p_t - rho u^2 / 2``. Outlet:
density and velocity extrapolated, static pressure fixed. The boundary
internal energy follows from inverting the EOS in ``U``.

State Jacobians use complex-step differentiation over a three-colour
partition of the block-tridiagonal stencil.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .eos import DomainError
from .fields import Grid1D

logger = logging.getLogger(__name__)

CS_STEP = 1e-30


class NozzleError(RuntimeError):
    """Steady solve failed; ``history`` holds the scaled residual norms."""

    def __init__(self, msg: str, history=None):
        super().__init__(msg)
        self.history = list(history or [])


class GeometryDomainError(ValueError):
    pass


# -- geometry -------------------------------------------------------------------------

def clamped_uniform_knots(n_ctrl: int, degree: int = 2) -> np.ndarray:
    n_inner = n_ctrl - degree - 1
    inner = np.linspace(0.0, 1.0, n_inner + 2)[1:-1]
    return np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])


def bspline_basis(s, knots: np.ndarray, degree: int = 2):
    """Cox-de Boor basis values and first derivatives, each ``(len(s), n_ctrl)``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = knots
    n_ctrl = len(t) - degree - 1
    last = np.searchsorted(t, t[-1], side="left") - 1  # last non-empty span
    N = np.zeros((s.size, len(t) - 1))
    for i in range(len(t) - 1):
        if t[i] < t[i + 1]:
            N[:, i] = (s >= t[i]) & (s < t[i + 1])
    N[s == t[-1], last] = 1.0
    dN = None
    for d in range(1, degree + 1):
        Nn = np.zeros((s.size, len(t) - 1 - d))
        dNn = np.zeros_like(Nn)
        for i in range(len(t) - 1 - d):
            a = t[i + d] - t[i]
            b = t[i + d + 1] - t[i + 1]
            if a > 0:
                Nn[:, i] += (s - t[i]) / a * N[:, i]
                dNn[:, i] += d / a * N[:, i]
            if b > 0:
                Nn[:, i] += (t[i + d + 1] - s) / b * N[:, i + 1]
                dNn[:, i] -= d / b * N[:, i + 1]
        N, dN = Nn, dNn
    return N[:, :n_ctrl], dN[:, :n_ctrl]


@dataclass(frozen=True, eq=False)
class BsplineArea:
    """Quadratic clamped-uniform B-spline curve ``(x(s), A(s))`` through control points.

    The first and last control points are frozen; only interior points are
    design variables.
    """

    x: np.ndarray
    A: np.ndarray

    degree = 2

    def __post_init__(self):
        x = np.array(self.x, dtype=float).ravel()
        A = np.array(self.A, dtype=float).ravel()
        if x.size != A.size or x.size < 3:
            raise ValueError("need at least three control points with matching x and A")
        if np.any(np.diff(x) <= 0):
            raise ValueError("control abscissae must be strictly increasing")
        if np.any(A <= 0):
            raise ValueError("control ordinates must be positive")
        x.setflags(write=False)
        A.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "A", A)

    @classmethod
    def from_ordinates(cls, A, length: float = 1.0, x0: float = 0.0) -> "BsplineArea":
        """Control abscissae at the Greville points, which makes ``x(s)`` linear in ``s``."""
        A = np.asarray(A, dtype=float)
        t = clamped_uniform_knots(A.size)
        grev = 0.5 * (t[1:A.size + 1] + t[2:A.size + 2])
        return cls(x0 + length * grev, A)

    @property
    def n_ctrl(self) -> int:
        return self.x.size

    @property
    def knots(self) -> np.ndarray:
        return clamped_uniform_knots(self.n_ctrl)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    @property
    def free(self) -> np.ndarray:
        return np.arange(1, self.n_ctrl - 1)

    def with_points(self, x=None, A=None) -> "BsplineArea":
        return BsplineArea(self.x if x is None else x, self.A if A is None else A)

    def param_of_x(self, xq) -> np.ndarray:
        xq = np.atleast_1d(np.asarray(xq, dtype=float))
        lo_x, hi_x = self.domain
        tol = 1e-12 * (hi_x - lo_x)
        if np.any(xq < lo_x - tol) or np.any(xq > hi_x + tol):
            raise GeometryDomainError(f"x outside the spline span [{lo_x}, {hi_x}]")
        xq = np.clip(xq, lo_x, hi_x)
        lo, hi = np.zeros_like(xq), np.ones_like(xq)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            N, _ = bspline_basis(mid, self.knots)
            left = N @ self.x < xq
            lo = np.where(left, mid, lo)
            hi = np.where(left, hi, mid)
        s = 0.5 * (lo + hi)
        for _ in range(2):
            N, dN = bspline_basis(s, self.knots)
            s = np.clip(s - (N @ self.x - xq) / (dN @ self.x), 0.0, 1.0)
        return s

    def area(self, xq) -> np.ndarray:
        N, _ = bspline_basis(self.param_of_x(xq), self.knots)
        a = N @ self.A
        if np.any(a <= 0):
            raise GeometryDomainError("spline area is non-positive")
        return a

    def area_eval(self, xq):
        """``(A(x), dA/dA_p, dA/dx_p)`` with Jacobians of shape ``(n, P)``."""
        s = self.param_of_x(xq)
        N, dN = bspline_basis(s, self.knots)
        a = N @ self.A
        if np.any(a <= 0):
            raise GeometryDomainError("spline area is non-positive")
        slope = (dN @ self.A) / (dN @ self.x)
        return a, N, -slope[:, None] * N

    def to_dict(self) -> dict:
        return {"degree": 2, "control_points": [[float(a), float(b)] for a, b in zip(self.x, self.A)]}

    @classmethod
    def from_dict(cls, d: dict) -> "BsplineArea":
        pts = np.asarray(d["control_points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("control_points must be a list of [x, A] pairs")
        return cls(pts[:, 0], pts[:, 1])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "BsplineArea":
        return cls.from_dict(json.loads(Path(path).read_text()))


def area_eval(spline: BsplineArea, x):
    return spline.area_eval(x)


# -- flow setup -------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowBc:
    p_t_in: float = 1e5
    p_out: float = 9e4
    rho_in: float = 1.0

    def __post_init__(self):
        if not (self.p_t_in > self.p_out > 0):
            raise ValueError("need p_t_in > p_out > 0")
        if not self.rho_in > 0:
            raise ValueError("inlet density must be positive")

    def to_dict(self) -> dict:
        return {"p_t_in": float(self.p_t_in), "p_out": float(self.p_out), "rho_in": float(self.rho_in)}


@dataclass(frozen=True)
class NozzleConfig:
    n_cells: int = 64
    steady_tol: float = 1e-10
    max_iter: int = 300
    cfl0: float = 5.0
    cfl_max: float = 1e12

    def __post_init__(self):
        if self.n_cells < 2 or not self.steady_tol > 0 or self.max_iter < 1:
            raise ValueError("invalid nozzle solver settings")


def nozzle_grid(spline: BsplineArea, n_cells: int) -> Grid1D:
    x0, x1 = spline.domain
    return Grid1D.uniform(n_cells, 0, length=x1 - x0, x0=x0, periodic=False)


@dataclass(eq=False)
class NozzleState:
    """Per-cell conservative variables ``(rho, rho u, rho E)`` plus boundary states.

    ``boundary`` holds ``(rho, u, U, p)`` rows for the inlet and outlet.
    """

    Q: np.ndarray
    grid: Grid1D
    boundary: np.ndarray
    p: np.ndarray
    history: list = field(default_factory=list)

    @property
    def rho(self):
        return self.Q[:, 0]

    @property
    def u(self):
        return self.Q[:, 1] / self.Q[:, 0]

    @property
    def E(self):
        return self.Q[:, 2] / self.Q[:, 0]

    @property
    def U(self):
        return self.Q[:, 2] - 0.5 * self.Q[:, 1] ** 2 / self.Q[:, 0]

    @classmethod
    def from_primitive(cls, grid: Grid1D, rho, u, U, eos, boundary=None) -> "NozzleState":
        rho, u, U = (np.broadcast_to(np.asarray(v, float), (grid.nx,)) for v in (rho, u, U))
        Q = np.column_stack([rho, rho * u, U + 0.5 * rho * u**2])
        p = np.asarray(eos.pressure(rho, U), dtype=float)
        if boundary is None:
            boundary = np.array([[rho[0], u[0], U[0], p[0]], [rho[-1], u[-1], U[-1], p[-1]]])
        return cls(Q, grid, np.asarray(boundary, float), p)

    def fields(self) -> dict:
        return {"rho": self.rho, "u": self.u, "E": self.E}

    def write_csv(self, path, spline: BsplineArea) -> None:
        x = self.grid.cell_centers
        a = spline.area(x)
        with open(path, "w") as fh:
            fh.write("x,area,rho,u,E,p\n")
            for row in zip(x, a, self.rho, self.u, self.E, self.p):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_steady_csv(path) -> dict:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {k: data[:, i] for i, k in enumerate(["x", "area", "rho", "u", "E", "p"])}


def mass_flux_inlet(state: NozzleState, spline: BsplineArea) -> float:
    rho, u = state.boundary[0, :2]
    return float(rho * u * spline.area(spline.domain[0])[0])


def mass_flux_outlet(state: NozzleState, spline: BsplineArea) -> float:
    rho, u = state.boundary[1, :2]
    return float(rho * u * spline.area(spline.domain[1])[0])


def mass_flux(state: NozzleState, spline: BsplineArea) -> float:
    """Boundary mass flux ``rho u A`` at the outlet."""
    return mass_flux_outlet(state, spline)


# -- residual --------------------------------------------------------------------------

def _real_max(a, b):
    return np.where(np.real(a) >= np.real(b), a, b)


def _abs(a):
    return a * np.sign(np.real(a))


def _phys_flux(rho, u, U, p):
    m = rho * u
    e = U + 0.5 * m * u
    return np.stack([m, m * u + p, u * (e + p)], axis=-1), np.stack([rho, m, e], axis=-1)


def _sound_speed2(rho, U, p, p_r, p_u):
    return p_r + p_u * (U + p) / rho


@dataclass(eq=False)
class ResidualParts:
    R: np.ndarray          # (N, 3)
    face_flux: np.ndarray  # (N + 1, 3)
    p: np.ndarray
    c: np.ndarray
    boundary: np.ndarray


def _boundary_u(eos, rho, p, guess):
    try:
        return eos.internal_energy(rho, p, guess)
    except TypeError:
        return eos.internal_energy(rho, p)


def residual_parts(Q, eos, face_area, bc: FlowBc) -> ResidualParts:
    """Full residual evaluation; complex-safe in ``Q``, ``face_area`` and EOS coefficients."""
    rho, m, e = Q[:, 0], Q[:, 1], Q[:, 2]
    if np.any(np.real(rho) <= 0):
        raise DomainError("non-positive density")
    u = m / rho
    U = e - 0.5 * m * u
    p, p_r, p_u = eos.partials(rho, U)
    c2 = _sound_speed2(rho, U, p, p_r, p_u)

    rb_in = bc.rho_in + 0.0 * rho[0]
    ub_in = u[0]
    pb_in = bc.p_t_in - 0.5 * rb_in * ub_in**2
    Ub_in = _boundary_u(eos, np.atleast_1d(rb_in), np.atleast_1d(pb_in), np.real(U[:1]))[0]
    rb_out, ub_out = rho[-1], u[-1]
    pb_out = bc.p_out + 0.0 * rho[-1]
    Ub_out = _boundary_u(eos, np.atleast_1d(rb_out), np.atleast_1d(pb_out), np.real(U[-1:]))[0]

    if np.any(np.real(c2) <= 0):
        raise DomainError("non-positive squared sound speed")
    c = np.sqrt(c2)
    F, Qc = _phys_flux(rho, u, U, p)
    # interior Rusanov faces
    s = _real_max(_abs(u[:-1]) + c[:-1], _abs(u[1:]) + c[1:])[:, None]
    Fi = 0.5 * (F[:-1] + F[1:]) - 0.5 * s * (Qc[1:] - Qc[:-1])
    Fin, _ = _phys_flux(rb_in, ub_in, Ub_in, pb_in)
    Fout, _ = _phys_flux(rb_out, ub_out, Ub_out, pb_out)
    Fh = np.vstack([Fin[None, :], Fi, Fout[None, :]])
    dA = face_area[1:] - face_area[:-1]
    R = Fh[1:] * face_area[1:, None] - Fh[:-1] * face_area[:-1, None]
    R = R - np.column_stack([0.0 * p, p * dA, 0.0 * p])
    bnd = np.array([[rb_in, ub_in, Ub_in, pb_in], [rb_out, ub_out, Ub_out, pb_out]])
    return ResidualParts(R, Fh, p, c, bnd)


def residual(Q, eos, face_area, bc: FlowBc) -> np.ndarray:
    return residual_parts(Q, eos, face_area, bc).R


def residual_jacobian(Q, eos, face_area, bc: FlowBc) -> sp.csc_matrix:
    """``dR/dQ`` (flattened row-major, 3 unknowns per cell) by coloured complex step."""
    n = Q.shape[0]
    scale = np.maximum(np.abs(Q).max(axis=0), 1.0)
    rows, cols, vals = [], [], []
    idx = np.arange(n)
    for colour in range(3):
        sel = idx % 3 == colour
        for k in range(3):
            h = CS_STEP * scale[k]
            Qc = Q.astype(complex)
            Qc[sel, k] += 1j * h
            D = residual(Qc, eos, face_area, bc).imag / h
            for off in (-1, 0, 1):
                j = idx + off
                ok = (j >= 0) & (j < n)
                ok[ok] &= sel[j[ok]]
                i_ok = idx[ok]
                for a in range(3):
                    rows.append(3 * i_ok + a)
                    cols.append(3 * j[ok] + k)
                    vals.append(D[i_ok, a])
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(3 * n, 3 * n))


def residual_param_jacobian(Q, eos, face_area, bc: FlowBc) -> np.ndarray:
    """``dR/dtheta`` for the EOS coefficients, shape ``(3N, n_params)``."""
    theta = np.asarray(eos.params, dtype=float)
    out = np.empty((Q.size, theta.size))
    for k in range(theta.size):
        h = CS_STEP * max(abs(theta[k]), 1.0)
        tc = theta.astype(complex)
        tc[k] += 1j * h
        out[:, k] = residual(Q, eos.complex_params(tc), face_area, bc).imag.ravel() / h
    return out


def residual_area_jacobian(parts: ResidualParts) -> np.ndarray:
    """``dR/dA_face``, shape ``(3N, N + 1)``; exact because ``R`` is linear in face areas."""
    Fh, p = parts.face_flux, parts.p
    n = p.size
    out = np.zeros((n, 3, n + 1))
    ip = np.column_stack([0.0 * p, p, 0.0 * p])
    i = np.arange(n)
    out[i, :, i + 1] = Fh[1:] - ip
    out[i, :, i] = -Fh[:-1] + ip
    return out.reshape(3 * n, n + 1)


# -- steady solve -----------------------------------------------------------------------

def _scales(bc: FlowBc, face_area):
    c_ref = np.sqrt(bc.p_t_in / bc.rho_in)
    a_ref = float(np.mean(face_area))
    return np.array([bc.rho_in * c_ref, bc.p_t_in, bc.p_t_in * c_ref]) * a_ref


def initial_state(eos, spline: BsplineArea, bc: FlowBc, grid: Grid1D) -> NozzleState:
    """Bernoulli-style guess: uniform inlet density, ``rho u A`` roughly constant."""
    a_c = spline.area(grid.cell_centers)
    a_out = spline.area(spline.domain[1])[0]
    u_out = np.sqrt(2.0 * (bc.p_t_in - bc.p_out) / bc.rho_in)
    u = u_out * a_out / a_c
    p = np.maximum(bc.p_t_in - 0.5 * bc.rho_in * u**2, 0.5 * bc.p_out)
    rho = np.full(grid.nx, bc.rho_in)
    U = eos.internal_energy(rho, p)
    return NozzleState.from_primitive(grid, rho, u, U, eos)


def solve_steady(eos, spline: BsplineArea, bc: FlowBc, config: NozzleConfig | None = None,
                 initial: NozzleState | None = None) -> NozzleState:
    """Pseudo-time implicit continuation to a Newton-converged steady state.

    Local pseudo-time steps grow with the residual drop (switched evolution
    relaxation) until the update is a pure Newton step. Convergence is on
    the scaled residual ``max |R| / (rho c, p, p c) A`` reference values.
    """
    config = config or NozzleConfig()
    grid = nozzle_grid(spline, config.n_cells) if initial is None else initial.grid
    face_area = spline.area(grid.faces)
    vol = 0.5 * (face_area[1:] + face_area[:-1]) * grid.cell_widths
    scl = _scales(bc, face_area)
    if initial is None:
        try:
            initial = initial_state(eos, spline, bc, grid)
        except DomainError as exc:
            raise NozzleError(f"no valid initial state: {exc}") from exc
    Q = np.array(initial.Q, dtype=float)

    def evaluate(Qt):
        parts = residual_parts(Qt, eos, face_area, bc)
        if not np.all(np.isfinite(parts.R)):
            raise DomainError("non-finite residual")
        return parts, float(np.max(np.abs(parts.R / scl)))

    try:
        parts, rn = evaluate(Q)
    except DomainError as exc:
        raise NozzleError(f"initial state is invalid: {exc}") from exc
    history = [rn]
    r0 = rn
    cfl = config.cfl0

    def newton_step(Q, parts, cfl):
        Jm = residual_jacobian(Q, eos, face_area, bc)
        if cfl is None:
            A = Jm
        else:
            spd = np.abs(Q[:, 1] / Q[:, 0]) + np.real(parts.c)
            A = Jm + sp.diags(np.repeat(vol * spd / (cfl * grid.cell_widths), 3))
        step = spsolve(A.tocsc(), -parts.R.ravel()).reshape(Q.shape)
        if not np.all(np.isfinite(step)):
            raise DomainError("non-finite Newton update")
        Qt = Q + step
        pt, rt = evaluate(Qt)
        return Qt, pt, rt

    it = 0
    while rn > config.steady_tol:
        if it >= config.max_iter:
            raise NozzleError(f"steady solve did not converge in {config.max_iter} iterations "
                              f"(residual {rn:.3e})", history)
        it += 1
        for _ in range(12):
            try:
                Q, parts, rn = newton_step(Q, parts, cfl)
                break
            except DomainError:
                cfl = max(0.1 * cfl, 1e-3)
        else:
            raise NozzleError("pseudo-time step failed repeatedly", history)
        history.append(rn)
        cfl = min(max(config.cfl0 * r0 / max(rn, 1e-300), 1e-3), config.cfl_max)
    # one pure Newton polish step pushes the converged state to round-off
    try:
        Qt, pt, rt = newton_step(Q, parts, None)
        if rt <= rn:
            Q, parts, rn = Qt, pt, rt
            history.append(rn)
    except DomainError:
        pass
    p = np.real(parts.p).astype(float)
    return NozzleState(Q, grid, np.real(parts.boundary).astype(float), p, history)


def steady_parts(state: NozzleState, eos, spline: BsplineArea, bc: FlowBc) -> ResidualParts:
    return residual_parts(state.Q, eos, spline.area(state.grid.faces), bc)
