"""Projected L-BFGS for box-constrained smooth minimisation."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ObjectiveError(RuntimeError):
    """Raised by an objective that cannot be evaluated at the trial point.

    The line search treats it as a rejected step and backtracks.
    """


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_eval: int
    status: str
    proj_grad_inf: float
    history: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status == "converged"


def projected_gradient(x, g, lower, upper):
    """``x - clip(x - g)``, evaluated branch-wise so free components return ``g`` exactly."""
    t = x - g
    return np.where(t < lower, x - lower, np.where(t > upper, x - upper, g))


def _two_loop(q, S, Y, rho):
    alphas = []
    for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
        a = r * (s @ q)
        alphas.append(a)
        q = q - a * y
    if S:
        q = q * ((S[-1] @ Y[-1]) / (Y[-1] @ Y[-1]))
    for (s, y, r), a in zip(zip(S, Y, rho), reversed(alphas)):
        b = r * (y @ q)
        q = q + (a - b) * s
    return q


def projected_lbfgs(fun: Callable, x0, lower=None, upper=None, memory: int = 10,
                    max_iter: int = 500, gtol: float = 1e-8, ftol: float = 0.0,
                    max_linesearch: int = 30, c1: float = 1e-4,
                    callback: Callable | None = None) -> OptimizeResult:
    """Minimise ``fun(x) -> (f, g)`` subject to ``lower <= x <= upper``.

    Search directions come from the L-BFGS two-loop recursion restricted to the
    free variables; every trial point is projected back onto the box and must
    satisfy an Armijo decrease along the projected path. Terminates when the
    projected gradient's infinity norm drops to ``gtol``.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    lower = np.full(n, -np.inf) if lower is None else np.broadcast_to(np.asarray(lower, float), n)
    upper = np.full(n, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, float), n)
    x = np.clip(x, lower, upper)
    f, g = fun(x)
    g = np.asarray(g, dtype=float)
    n_eval = 1
    S: deque = deque(maxlen=memory)
    Y: deque = deque(maxlen=memory)
    history = []
    status = "max_iter"
    it = 0
    pg = projected_gradient(x, g, lower, upper)
    pginf = float(np.max(np.abs(pg), initial=0.0))
    if callback is not None:
        callback(0, x, f, g, pginf)
    for it in range(1, max_iter + 1):
        if pginf <= gtol:
            status = "converged"
            it -= 1
            break
        free = ~(((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0)))
        Sf = [s * free for s in S]
        Yf = [y * free for y in Y]
        keep, rf = [], []
        for s, y in zip(Sf, Yf):
            sy = s @ y
            if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y) and sy > 0:
                keep.append((s, y))
                rf.append(1.0 / sy)
        d = -_two_loop(g * free, [k[0] for k in keep], [k[1] for k in keep], rf) * free
        if not np.all(np.isfinite(d)) or g @ d >= 0:
            S.clear()
            Y.clear()
            d = -g * free
            keep = []
        t = 1.0
        if not keep:
            dn = np.max(np.abs(d))
            t = min(1.0, 1.0 / dn) if dn > 0 else 1.0
        accepted = False
        for _ in range(max_linesearch):
            xt = np.clip(x + t * d, lower, upper)
            step = xt - x
            if not np.any(step):
                break
            try:
                ft, gt = fun(xt)
                n_eval += 1
            except ObjectiveError:
                n_eval += 1
                t *= 0.25
                continue
            gt = np.asarray(gt, dtype=float)
            slope = g @ step
            if np.isfinite(ft) and ft <= f + c1 * slope:
                accepted = True
                break
            # safeguarded quadratic backtrack
            if np.isfinite(ft) and slope < 0:
                denom = 2.0 * (ft - f - slope)
                tq = -slope * t / denom if denom > 0 else 0.5 * t
                t = float(np.clip(tq, 0.1 * t, 0.5 * t))
            else:
                t *= 0.25
        if not accepted:
            status = "line_search_failed"
            it -= 1
            break
        s, y = xt - x, gt - g
        S.append(s)
        Y.append(y)
        f_old = f
        x, f, g = xt, ft, gt
        pg = projected_gradient(x, g, lower, upper)
        pginf = float(np.max(np.abs(pg), initial=0.0))
        history.append((it, f, pginf))
        if callback is not None:
            callback(it, x, f, g, pginf)
        if ftol > 0 and (f_old - f) <= ftol * max(abs(f_old), abs(f), 1e-300):
            status = "ftol"
            break
    else:
        if pginf <= gtol:
            status = "converged"
    return OptimizeResult(x, float(f), g, it, n_eval, status, pginf, history)
