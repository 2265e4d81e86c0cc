"""Equations of state ``p(rho, U)`` with ``U`` the internal energy per volume.

Reference forms (ideal, van der Waals, Redlich-Kwong) serve as gray-box truths.
``ParamEos`` is the trainable RBF x sigmoid expansion. All evaluations accept
complex inputs so residual Jacobians can be taken by complex step; branch and
domain decisions always look at real parts only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EOS_KINDS = ("ideal", "vdw", "rk")
DEFAULT_CONSTANTS = {"vdw": (1e4, 0.1), "rk": (1e7, 0.1)}


class DomainError(ValueError):
    """State outside the validity region of an equation of state."""


class DegenerateRangeError(ValueError):
    """State cloud spans a zero-width range in rho or U."""


def _arr(x):
    return x if np.iscomplexobj(x) else np.asarray(x, dtype=float)


@dataclass(frozen=True)
class ReferenceEos:
    """Ideal, van der Waals or Redlich-Kwong pressure law."""

    kind: str = "ideal"
    gamma: float = 1.4
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        if self.kind not in EOS_KINDS:
            raise ValueError(f"unknown EOS kind {self.kind!r}; expected one of {EOS_KINDS}")
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")
        if self.kind != "ideal":
            a0, b0 = DEFAULT_CONSTANTS[self.kind]
            object.__setattr__(self, "a", a0 if self.a is None else float(self.a))
            object.__setattr__(self, "b", b0 if self.b is None else float(self.b))
            if self.a < 0 or self.b < 0:
                raise ValueError("EOS constants must be non-negative")

    @property
    def n_params(self) -> int:
        return 0

    is_complex = False

    def real_part(self) -> "ReferenceEos":
        return self

    @property
    def u_lower(self) -> float:
        return 0.0 if self.kind == "rk" else -np.inf

    def _check(self, rho, U):
        r = np.real(rho)
        if np.any(r <= 0):
            raise DomainError("density must be positive")
        if self.kind != "ideal" and np.any(self.b * r >= 1.0):
            raise DomainError(f"b*rho >= 1 for the {self.kind} equation of state")
        if self.kind == "rk" and np.any(np.real(U) <= 0):
            raise DomainError("Redlich-Kwong needs U > 0")

    def _rk_term(self, rho, U):
        # a rho^(5/2) / (sqrt((g-1) U) (1 + b rho)) through exp/log for a guarded power
        g1 = self.gamma - 1.0
        return self.a * np.exp(2.5 * np.log(rho) - 0.5 * np.log(g1 * U)) / (1.0 + self.b * rho)

    def pressure(self, rho, U):
        rho, U = _arr(rho), _arr(U)
        self._check(rho, U)
        g1 = self.gamma - 1.0
        if self.kind == "ideal":
            return g1 * U + 0.0 * rho
        base = g1 * U / (1.0 - self.b * rho)
        if self.kind == "vdw":
            return base - self.a * rho**2
        return base - self._rk_term(rho, U)

    def partials(self, rho, U):
        """``(p, dp/drho, dp/dU)``."""
        rho, U = _arr(rho), _arr(U)
        self._check(rho, U)
        g1 = self.gamma - 1.0
        if self.kind == "ideal":
            p = g1 * U + 0.0 * rho
            return p, 0.0 * p, g1 + 0.0 * p
        d = 1.0 - self.b * rho
        p = g1 * U / d
        p_r = g1 * U * self.b / d**2
        p_u = g1 / d + 0.0 * rho
        if self.kind == "vdw":
            return p - self.a * rho**2, p_r - 2.0 * self.a * rho, p_u
        q = self._rk_term(rho, U)
        q_r = q * (2.5 / rho - self.b / (1.0 + self.b * rho))
        q_u = -0.5 * q / U
        return p - q, p_r - q_r, p_u - q_u

    def internal_energy(self, rho, p, guess=None):
        """``U`` with ``p(rho, U) = p``; closed form for ideal and vdW."""
        rho, p = _arr(rho), _arr(p)
        g1 = self.gamma - 1.0
        if self.kind == "ideal":
            return p / g1 + 0.0 * rho
        if self.kind == "vdw":
            self._check(rho, 1.0)
            return (p + self.a * rho**2) * (1.0 - self.b * rho) / g1
        if guess is None:
            guess = np.real(p) * (1.0 - self.b * np.real(rho)) / g1
        return solve_internal_energy(self, rho, p, guess)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "gamma": float(self.gamma)}
        if self.kind != "ideal":
            d.update(a=float(self.a), b=float(self.b))
        return d


def eos_pressure(eos, rho, U):
    """Pressure of any EOS model."""
    return eos.pressure(rho, U)


@dataclass(frozen=True, eq=False)
class ParamEos:
    """``p = sum_ij alpha_ij R_i(rho) S_j(U) + p0``.

    ``R_i = exp(-(rho - rho_i)^2 / sigma_rho)`` and
    ``S_j = (tanh((U - U_j) / sigma_U) + 1) / 2``.
    """

    rho_centers: np.ndarray
    U_centers: np.ndarray
    sigma_rho: float
    sigma_U: float
    alpha: np.ndarray
    p0: float = 0.0

    def __post_init__(self):
        rc = np.array(self.rho_centers, dtype=float).ravel()
        uc = np.array(self.U_centers, dtype=float).ravel()
        al = np.array(self.alpha, dtype=float).reshape(rc.size, uc.size)
        if not (self.sigma_rho > 0 and self.sigma_U > 0):
            raise ValueError("EOS basis widths must be positive")
        if np.any(al < 0) or not np.all(np.isfinite(al)) or not np.isfinite(self.p0):
            raise ValueError("alpha must be finite and non-negative, p0 finite")
        for v in (rc, uc, al):
            v.setflags(write=False)
        object.__setattr__(self, "rho_centers", rc)
        object.__setattr__(self, "U_centers", uc)
        object.__setattr__(self, "alpha", al)
        object.__setattr__(self, "p0", float(self.p0))

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha.shape

    @property
    def n_params(self) -> int:
        return self.alpha.size + 1

    @property
    def params(self) -> np.ndarray:
        """``[alpha (row-major), p0]``."""
        return np.append(self.alpha.ravel(), self.p0)

    u_lower = -np.inf

    def complex_params(self, theta) -> "ParamEos":
        """Unchecked copy carrying complex coefficients (complex-step use only)."""
        theta = np.asarray(theta)
        out = object.__new__(ParamEos)
        for name in ("rho_centers", "U_centers", "sigma_rho", "sigma_U"):
            object.__setattr__(out, name, getattr(self, name))
        object.__setattr__(out, "alpha", theta[:-1].reshape(self.shape))
        object.__setattr__(out, "p0", theta[-1])
        return out

    def real_part(self) -> "ParamEos":
        if not (np.iscomplexobj(self.alpha) or np.iscomplexobj(self.p0)):
            return self
        return self.complex_params(np.real(self.params))

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.alpha) or np.iscomplexobj(self.p0)

    def with_params(self, theta) -> "ParamEos":
        theta = np.asarray(theta, dtype=float)
        return ParamEos(self.rho_centers, self.U_centers, self.sigma_rho, self.sigma_U,
                        theta[:-1].reshape(self.shape), float(theta[-1]))

    def rbf(self, rho):
        d = np.reshape(rho, (-1, 1)) - self.rho_centers
        R = np.exp(-(d**2) / self.sigma_rho)
        return R, -2.0 * d / self.sigma_rho * R

    def sigmoid(self, U):
        th = np.tanh((np.reshape(U, (-1, 1)) - self.U_centers) / self.sigma_U)
        return 0.5 * (th + 1.0), 0.5 * (1.0 - th**2) / self.sigma_U

    def pressure(self, rho, U, alpha=None, p0=None):
        alpha = self.alpha if alpha is None else alpha
        p0 = self.p0 if p0 is None else p0
        rho, U = np.broadcast_arrays(_arr(rho), _arr(U))
        R, _ = self.rbf(rho)
        S, _ = self.sigmoid(U)
        return (np.einsum("ni,ij,nj->n", R, alpha, S) + p0).reshape(rho.shape)

    def partials(self, rho, U):
        rho, U = np.broadcast_arrays(_arr(rho), _arr(U))
        R, dR = self.rbf(rho)
        S, dS = self.sigmoid(U)
        RA = R @ self.alpha
        p = np.einsum("nj,nj->n", RA, S) + self.p0
        p_r = np.einsum("ni,ij,nj->n", dR, self.alpha, S)
        p_u = np.einsum("nj,nj->n", RA, dS)
        shape = rho.shape
        return p.reshape(shape), p_r.reshape(shape), p_u.reshape(shape)

    def param_jacobian(self, rho, U) -> np.ndarray:
        """``dp/d[alpha, p0]``, shape ``(n, N_rho*N_U + 1)``."""
        R, _ = self.rbf(rho)
        S, _ = self.sigmoid(U)
        n = R.shape[0]
        out = np.empty((n, self.n_params), dtype=np.result_type(R, S))
        out[:, :-1] = (R[:, :, None] * S[:, None, :]).reshape(n, -1)
        out[:, -1] = 1.0
        return out

    def internal_energy(self, rho, p, guess=None):
        if guess is None:
            guess = np.full(np.shape(np.real(p)), float(self.U_centers.mean()))
        return solve_internal_energy(self, rho, p, guess)

    def to_dict(self) -> dict:
        return {
            "rho_centers": [float(v) for v in self.rho_centers],
            "U_centers": [float(v) for v in self.U_centers],
            "sigma_rho": float(self.sigma_rho),
            "sigma_U": float(self.sigma_U),
            "alpha": [float(v) for v in self.alpha.ravel()],
            "p0": float(self.p0),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamEos":
        keys = {"rho_centers", "U_centers", "sigma_rho", "sigma_U", "alpha", "p0"}
        missing = keys - set(d)
        if missing:
            raise ValueError(f"EOS record missing keys: {sorted(missing)}")
        nr, nu = len(d["rho_centers"]), len(d["U_centers"])
        return cls(np.asarray(d["rho_centers"], float), np.asarray(d["U_centers"], float),
                   float(d["sigma_rho"]), float(d["sigma_U"]),
                   np.asarray(d["alpha"], float).reshape(nr, nu), float(d["p0"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ParamEos":
        return cls.from_dict(json.loads(Path(path).read_text()))


def eos_from_dict(d: dict):
    if "kind" in d:
        return ReferenceEos(d["kind"], float(d.get("gamma", 1.4)), d.get("a"), d.get("b"))
    return ParamEos.from_dict(d)


def _centers(lo: float, hi: float, n: int):
    if n < 1:
        raise ValueError("need at least one basis center")
    if n == 1:
        return np.array([0.5 * (lo + hi)]), hi - lo
    return np.linspace(lo, hi, n), (hi - lo) / n


def build_param_eos(rho, U, N_rho: int = 8, N_U: int = 8) -> ParamEos:
    """Skeleton ``ParamEos`` (alpha = 0, p0 = 0) spanning the state cloud."""
    rho = np.asarray(rho, dtype=float).ravel()
    U = np.asarray(U, dtype=float).ravel()
    if rho.size == 0 or rho.size != U.size:
        raise ValueError("state cloud must be nonempty with matching rho and U")
    (r0, r1), (u0, u1) = (rho.min(), rho.max()), (U.min(), U.max())
    if r0 == r1:
        raise DegenerateRangeError("density range of the state cloud is degenerate")
    if u0 == u1:
        raise DegenerateRangeError("internal-energy range of the state cloud is degenerate")
    rc, sr = _centers(r0, r1, N_rho)
    uc, su = _centers(u0, u1, N_U)
    return ParamEos(rc, uc, sr, su, np.zeros((rc.size, uc.size)), 0.0)


def solve_internal_energy(eos, rho, p_target, guess, rtol: float = 1e-14, max_iter: int = 200):
    """Invert ``p(rho, U) = p_target`` for ``U`` by bracketed Newton.

    Pressure is non-decreasing in ``U`` for every model here. Complex inputs
    get one complex Newton correction at the real root, which carries the
    first-order complex-step derivative.
    """
    complex_in = np.iscomplexobj(rho) or np.iscomplexobj(p_target) or eos.is_complex
    real_eos = eos.real_part()
    r = np.real(np.asarray(rho)).astype(float)
    pt = np.real(np.asarray(p_target)).astype(float)
    r, pt = np.broadcast_arrays(r, pt)
    U = np.broadcast_to(np.real(np.asarray(guess, dtype=complex)).astype(float), r.shape).copy()
    lb = getattr(eos, "u_lower", -np.inf)
    if np.isfinite(lb):
        U = np.where(U > lb, U, lb + 1.0)
    flat_r, flat_p, flat_u = r.ravel(), pt.ravel(), U.ravel()
    for n in range(flat_r.size):
        flat_u[n] = _invert_scalar(real_eos, flat_r[n], flat_p[n], flat_u[n], lb, rtol, max_iter)
    U = flat_u.reshape(r.shape)
    if complex_in:
        p, _, pu = eos.partials(rho, U.astype(complex))
        U = U - (p - p_target) / pu
    return U


def _invert_scalar(eos, r, pt, u, lb, rtol, max_iter):
    def f(x):
        p, _, pu = eos.partials(np.array([r]), np.array([x]))
        return float(p[0]) - pt, float(pu[0])

    scale = max(abs(u), abs(pt), 1.0)
    fu, du = f(u)
    if fu == 0.0:
        return u
    # bracket the root by step doubling away from the guess
    step = 0.05 * scale
    lo = hi = u
    flo = fhi = fu
    for _ in range(200):
        if fu < 0 and fhi < 0:
            lo, flo = hi, fhi
            hi = hi + step
            fhi, _ = f(hi)
        elif fu > 0 and flo > 0:
            hi, fhi = lo, flo
            lo = lb + 0.5 * (lo - lb) if np.isfinite(lb) and lo - step <= lb else lo - step
            flo, _ = f(lo)
        else:
            break
        step *= 2.0
    else:
        raise DomainError(f"pressure {pt:g} is outside the range of the equation of state at rho={r:g}")
    if flo > 0 or fhi < 0:
        raise DomainError(f"pressure {pt:g} is outside the range of the equation of state at rho={r:g}")
    x = u if lo <= u <= hi else 0.5 * (lo + hi)
    for _ in range(max_iter):
        fx, dx = f(x)
        if fx == 0.0:
            return x
        if fx < 0:
            lo = x
        else:
            hi = x
        xn = x - fx / dx if dx > 0 else 0.5 * (lo + hi)
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= rtol * max(abs(x), 1.0) or hi - lo <= rtol * max(abs(x), 1.0):
            return xn
        x = xn
    raise DomainError(f"internal-energy inversion did not converge at rho={r:g}, p={pt:g}")


# -- convex hull of the state cloud ----------------------------------------------------

def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertices (Andrew's monotone chain), collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).reshape(-1, 2))))
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


@dataclass(frozen=True, eq=False)
class StateHull:
    """Convex hull of ``(rho, U)`` states; ``degenerate`` marks a point or segment."""

    vertices: np.ndarray
    degenerate: bool
    lo: np.ndarray
    span: np.ndarray

    @classmethod
    def from_cloud(cls, rho, U) -> "StateHull":
        pts = np.column_stack([np.ravel(rho), np.ravel(U)]).astype(float)
        if pts.size == 0:
            raise ValueError("hull needs at least one point")
        lo = pts.min(axis=0)
        span = pts.max(axis=0) - lo
        span = np.where(span > 0, span, 1.0)
        # hull in normalised coordinates avoids rho/U scale disparity in the orientation tests
        hv = convex_hull((pts - lo) / span)
        verts = hv * span + lo
        return cls(verts, len(hv) < 3, lo, span)

    def contains(self, rho, U, tol: float = 1e-9):
        """Inclusive membership; vectorised over ``rho``, ``U``."""
        q = (np.column_stack([np.ravel(rho), np.ravel(U)]).astype(float) - self.lo) / self.span
        v = (self.vertices - self.lo) / self.span
        if len(v) == 1:
            inside = np.all(np.abs(q - v[0]) <= tol, axis=1)
        elif self.degenerate:
            a, b = v[0], v[-1]
            d = b - a
            t = ((q - a) @ d) / (d @ d)
            proj = a + np.clip(t, 0.0, 1.0)[:, None] * d
            inside = np.linalg.norm(q - proj, axis=1) <= tol
        else:
            inside = np.ones(len(q), dtype=bool)
            for k in range(len(v)):
                a, b = v[k], v[(k + 1) % len(v)]
                cr = (b[0] - a[0]) * (q[:, 1] - a[1]) - (b[1] - a[1]) * (q[:, 0] - a[0])
                inside &= cr >= -tol * np.hypot(*(b - a))
        return inside.reshape(np.shape(rho)) if np.ndim(rho) else bool(inside[0])

    def to_dict(self) -> dict:
        return {"vertices": [[float(a), float(b)] for a, b in self.vertices],
                "degenerate": bool(self.degenerate)}


def hull_and_membership(rho, U) -> StateHull:
    return StateHull.from_cloud(rho, U)
