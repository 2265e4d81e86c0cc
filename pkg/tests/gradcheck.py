"""Finite-difference oracles for the adjoint gradients."""

from __future__ import annotations

import numpy as np

from twinmodel.adjoint import reverse_sweep
from twinmodel.fv1d import ControlField, SolverConfig, limiter_branches, run_forward

FD_SOLVER = SolverConfig(newton_tol=1e-13, newton_max_iter=60)


def branch_signature(run) -> np.ndarray:
    return np.stack([limiter_branches(u, run.model, run.config.limiter) for u in run.states])


def _rerun(run, model=None, control=None):
    return run_forward(run.states[0], model or run.model, control or run.control, run.grid, run.config)


def control_fd(run, objective, points, h=1e-6):
    """Central differences of ``J`` at control entries ``points`` ((k, i) pairs).

    Entries whose perturbation flips a limiter/dissipation branch anywhere in
    the run are skipped; returns the kept points and their FD values.
    """
    base = branch_signature(run)
    kept, vals = [], []
    for k, i in points:
        out = []
        ok = True
        for s in (1.0, -1.0):
            c = np.array(run.control.values)
            c[k, i] += s * h
            r = _rerun(run, control=ControlField(c, run.grid))
            if not np.array_equal(branch_signature(r), base):
                ok = False
                break
            out.append(objective.evaluate(r.field, r.control))
        if ok:
            kept.append((k, i))
            vals.append((out[0] - out[1]) / (2.0 * h))
    return kept, np.array(vals)


def param_fd(run, objective, h=1e-6):
    """Central differences of ``J`` in every flux coefficient (branch-checked)."""
    base = branch_signature(run)
    p0 = np.asarray(run.model.params, float)
    g = np.zeros_like(p0)
    flips = 0
    for j in range(p0.size):
        vals = []
        for s in (1.0, -1.0):
            p = p0.copy()
            p[j] += s * h
            r = _rerun(run, model=run.model.with_params(p))
            flips += int(not np.array_equal(branch_signature(r), base))
            vals.append(objective.evaluate(r.field, r.control))
        g[j] = (vals[0] - vals[1]) / (2.0 * h)
    return g, flips


def adjoint_at(run, objective, points):
    g = reverse_sweep(run, objective).grad_control
    return np.array([g[k, i] for k, i in points])
