"""Discrete adjoints of the Crank-Nicolson solver and of steady residual solves.

Each implicit step ``G(u_{k+1}; u_k, c_k, c_{k+1}, params) = 0`` is
differentiated at its converged fixed point, so the gradients are exact for
the discrete objective regardless of how many Newton iterations were taken.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import Grid1D, SpaceTimeField
from .fv1d import (DENSE_MAX, ForwardRun, LinearSystem, divergence_jacobian,
                   divergence_param_jacobian)


class MissingStateError(ValueError):
    """The run record lacks the stored forward states."""


class SingularJacobianError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """Space-time objective ``J = sum_k sum_i j(u_ik, c_ik) dt_k dx_i``.

    Built-in integrand: ``scale * (u - target)^2 + control_weight * c^2``
    where ``target`` is a scalar or a full space-time array. A custom
    ``integrand(u, c) -> (j, dj/du, dj/dc)`` overrides it.
    """

    target: float | np.ndarray = 0.5
    scale: float = 1.0
    control_weight: float = 0.0
    integrand: Callable | None = None
    name: str = "tracking"

    @classmethod
    def tracking(cls, target: float = 0.5, control_weight: float = 0.0) -> "ObjectiveSpec":
        return cls(target=target, control_weight=control_weight)

    @classmethod
    def mismatch(cls, data: SpaceTimeField) -> "ObjectiveSpec":
        """Objective equal to the space-time mismatch against ``data``."""
        return cls(target=data.values, scale=1.0 / data.grid.horizon, name="mismatch")

    def pointwise(self, u: np.ndarray, c: np.ndarray):
        if self.integrand is not None:
            return self.integrand(u, c)
        d = u - self.target
        j = self.scale * d**2 + self.control_weight * c**2
        return j, 2.0 * self.scale * d, 2.0 * self.control_weight * c

    def partials(self, u: np.ndarray, c: np.ndarray, grid: Grid1D):
        """``(J, dJ/du, dJ/dc)`` with quadrature weights applied."""
        j, ju, jc = self.pointwise(u, c)
        w = np.outer(grid.time_steps, grid.cell_widths)
        ju = np.broadcast_to(ju, u.shape) * w
        jc = np.broadcast_to(jc, u.shape) * w
        return float((np.broadcast_to(j, u.shape) @ grid.cell_widths) @ grid.time_steps), ju, jc

    def evaluate(self, field: SpaceTimeField, control=None) -> float:
        c = np.zeros(field.grid.shape) if control is None else control.values
        return self.partials(field.values, c, field.grid)[0]

    def to_dict(self) -> dict:
        if self.integrand is not None or np.ndim(self.target) != 0:
            return {"name": self.name}
        return {"name": self.name, "target": float(self.target), "scale": float(self.scale),
                "control_weight": float(self.control_weight)}


@dataclass(frozen=True, eq=False)
class SweepResult:
    value: float
    grad_control: np.ndarray
    grad_params: np.ndarray | None


def reverse_sweep(run: ForwardRun, objective: ObjectiveSpec, params: bool = False) -> SweepResult:
    """Reverse sweep over a stored forward run; returns ``dJ/dc`` and optionally ``dJ/dparams``."""
    if run is None or run.field is None or run.states is None:
        raise MissingStateError("reverse sweep needs the stored forward states")
    g = run.grid
    U = run.states
    if U.shape != g.shape:
        raise MissingStateError(f"stored states {U.shape} do not cover the grid {g.shape}")
    C = run.control.values
    dx, dt = g.cell_widths, g.time_steps
    lim = run.config.limiter
    model = run.model
    dense = g.nx <= DENSE_MAX

    value, dju, djc = objective.partials(U, C, g)
    grad_c = np.array(djc)
    grad_p = np.zeros(model.n_params) if params else None

    lam = np.array(dju[-1])
    J_next = divergence_jacobian(U[-1], model, dx, lim, dense=dense)
    P_next = divergence_param_jacobian(U[-1], model, dx, lim) if params else None
    for k in range(g.nt - 2, -1, -1):
        A = LinearSystem(U[k + 1], model, dx, lim, dt[k], jacobian=J_next)
        mu = A.solve(lam, transpose=True)
        grad_c[k] += 0.5 * mu
        grad_c[k + 1] += 0.5 * mu
        J_k = divergence_jacobian(U[k], model, dx, lim, dense=dense)
        lam = dju[k] + mu / dt[k] - 0.5 * (J_k.T @ mu)
        if params:
            P_k = divergence_param_jacobian(U[k], model, dx, lim)
            grad_p -= 0.5 * ((P_next + P_k).T @ mu)
            P_next = P_k
        J_next = J_k
    return SweepResult(value, grad_c, grad_p)


def adjoint_gradient_wrt_control(run: ForwardRun, objective: ObjectiveSpec) -> np.ndarray:
    """``dJ/dc`` as a space-time array."""
    return reverse_sweep(run, objective).grad_control


def adjoint_gradient_wrt_params(run: ForwardRun, objective: ObjectiveSpec) -> np.ndarray:
    """``dJ/dparams`` of the run's flux model."""
    return reverse_sweep(run, objective, params=True).grad_params


def tangent_directional_derivative(run: ForwardRun, objective: ObjectiveSpec,
                                   dc: np.ndarray | None = None,
                                   dparams: np.ndarray | None = None) -> float:
    """Forward-mode ``dJ`` along a control and/or parameter perturbation."""
    g = run.grid
    U, C = run.states, run.control.values
    dx, dt = g.cell_widths, g.time_steps
    lim, model = run.config.limiter, run.model
    dense = g.nx <= DENSE_MAX
    dc = np.zeros(g.shape) if dc is None else np.asarray(dc, float)
    _, dju, djc = objective.partials(U, C, g)
    du = np.zeros(g.nx)
    total = float(np.sum(djc * dc))
    J_k = divergence_jacobian(U[0], model, dx, lim, dense=dense)
    P_k = divergence_param_jacobian(U[0], model, dx, lim) if dparams is not None else None
    for k in range(g.nt - 1):
        J_n = divergence_jacobian(U[k + 1], model, dx, lim, dense=dense)
        A = LinearSystem(U[k + 1], model, dx, lim, dt[k], jacobian=J_n)
        rhs = du / dt[k] - 0.5 * (J_k @ du) + 0.5 * (dc[k] + dc[k + 1])
        if dparams is not None:
            P_n = divergence_param_jacobian(U[k + 1], model, dx, lim)
            rhs = rhs - 0.5 * ((P_n + P_k) @ dparams)
            P_k = P_n
        du = A.solve(rhs)
        total += float(dju[k + 1] @ du)
        J_k = J_n
    return total


# -- steady adjoint -------------------------------------------------------------

def steady_adjoint(dR_dQ, dJ_dQ: np.ndarray) -> np.ndarray:
    """Solve ``(dR/dQ)^T psi = -(dJ/dQ)^T``."""
    A = sp.csc_matrix(dR_dQ) if sp.issparse(dR_dQ) else sp.csc_matrix(np.asarray(dR_dQ))
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise SingularJacobianError(f"steady Jacobian is singular: {exc}") from exc
    psi = lu.solve(-np.asarray(dJ_dQ, float), trans="T")
    if not np.all(np.isfinite(psi)):
        raise SingularJacobianError("steady adjoint solve produced non-finite values")
    return psi


def steady_total_gradient(psi: np.ndarray, dR_dtheta: np.ndarray, dJ_dtheta: np.ndarray) -> np.ndarray:
    """``dJ/dtheta = dJ/dtheta|_Q + psi^T dR/dtheta``."""
    return np.asarray(dJ_dtheta, float) + np.asarray(dR_dtheta).T @ psi


@dataclass(frozen=True)
class MassFluxObjective:
    """Steady outlet mass flux ``rho u A``; ``normalized`` divides by the outlet area."""

    normalized: bool = False

    def __call__(self, Q, face_area):
        n = Q.shape[0]
        m = Q[-1, 1]
        dQ = np.zeros((n, 3))
        dA = np.zeros(n + 1)
        if self.normalized:
            dQ[-1, 1] = 1.0
            return float(m), dQ, dA
        dQ[-1, 1] = face_area[-1]
        dA[-1] = m
        return float(m * face_area[-1]), dQ, dA


@dataclass(frozen=True, eq=False)
class GeometryGradient:
    """``dJ/dA_p`` and ``dJ/dx_p`` over the requested control points."""

    value: float
    points: np.ndarray
    grad_A: np.ndarray
    grad_x: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.grad_A, self.grad_x])


def adjoint_gradient_wrt_geometry(state, eos, spline, bc, objective=None,
                                  points=None) -> GeometryGradient:
    """Steady adjoint gradient of ``objective`` with respect to B-spline control points.

    ``objective(Q, face_area) -> (J, dJ/dQ, dJ/dA_face)``; defaults to the
    outlet mass flux. ``points`` defaults to the free (interior) control points.
    """
    from .nozzle import residual_area_jacobian, residual_jacobian, steady_parts

    objective = objective or MassFluxObjective()
    points = spline.free if points is None else np.asarray(points, dtype=int)
    faces = state.grid.faces
    face_area, dA_dAp, dA_dxp = spline.area_eval(faces)
    J, dJ_dQ, dJ_dA = objective(state.Q, face_area)
    dR_dQ = residual_jacobian(state.Q, eos, face_area, bc)
    psi = steady_adjoint(dR_dQ, np.asarray(dJ_dQ, float).ravel())
    dR_dA = residual_area_jacobian(steady_parts(state, eos, spline, bc))
    total_dA = np.asarray(dJ_dA, float) + dR_dA.T @ psi
    return GeometryGradient(float(J), points, total_dA @ dA_dAp[:, points],
                            total_dA @ dA_dxp[:, points])


# -- reports ----------------------------------------------------------------------

@dataclass(eq=False)
class GradientReport:
    """A gradient, optionally paired with a reference gradient of the same shape."""

    grad: np.ndarray
    reference: np.ndarray | None = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grad = np.asarray(self.grad, dtype=float)
        if self.reference is not None:
            self.reference = np.asarray(self.reference, dtype=float)
            if self.reference.shape != self.grad.shape:
                raise ValueError(f"gradient shapes disagree: {self.grad.shape} vs {self.reference.shape}")

    @property
    def abs_err(self) -> np.ndarray | None:
        return None if self.reference is None else np.abs(self.grad - self.reference)

    @property
    def linf_err(self) -> float | None:
        return None if self.reference is None else float(self.abs_err.max(initial=0.0))

    @property
    def rel_l2_err(self) -> float | None:
        if self.reference is None:
            return None
        den = np.linalg.norm(self.reference)
        num = np.linalg.norm(self.grad - self.reference)
        if den == 0.0:
            return 0.0 if num == 0.0 else float("inf")
        return float(num / den)

    def summary(self) -> dict:
        return {"linf_err": self.linf_err, "rel_l2_err": self.rel_l2_err,
                "labels": dict(self.labels), "shape": list(self.grad.shape)}

    def write(self, csv_path: str | Path, json_path: str | Path | None = None) -> None:
        g = self.grad.ravel()
        r = self.reference.ravel() if self.reference is not None else None
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "grad_twin", "grad_reference", "abs_err"])
            for i in range(g.size):
                if r is None:
                    w.writerow([i, repr(float(g[i])), "", ""])
                else:
                    w.writerow([i, repr(float(g[i])), repr(float(r[i])), repr(float(abs(g[i] - r[i])))])
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
