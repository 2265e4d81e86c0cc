"""Scalar flux functions: the Buckley-Leverett truth and the sigmoid-basis twin.

Every flux model exposes the same duck-typed surface used by the finite-volume
solver and its adjoint:

    flux(u), dflux(u), d2flux(u)          -> arrays shaped like ``u``
    derivs(u)                             -> (F, F', F'') in one pass
    n_params, params                      -> trainable coefficients (may be 0)
    flux_params(u), dflux_params(u)       -> (u.size, n_params) Jacobians
    with_params(p)                        -> copy with new coefficients
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def bl_flux(u, A: float = 2.0):
    u = np.asarray(u, dtype=float)
    return u**2 / (1.0 + A * (1.0 - u) ** 2)


@dataclass(frozen=True)
class BuckleyLeverettFlux:
    """``F(u) = u^2 / (1 + A (1-u)^2)``."""

    A: float = 2.0

    def __post_init__(self):
        if not self.A >= 0:
            raise ValueError("Buckley-Leverett constant A must be >= 0")

    n_params = 0

    @property
    def params(self) -> np.ndarray:
        return np.zeros(0)

    def flux(self, u):
        return bl_flux(u, self.A)

    def dflux(self, u):
        u = np.asarray(u, dtype=float)
        w = 1.0 - u
        D = 1.0 + self.A * w**2
        return (2.0 * u * D + 2.0 * self.A * u**2 * w) / D**2

    def d2flux(self, u):
        # F' = N / D^2
        u = np.asarray(u, dtype=float)
        A = self.A
        w = 1.0 - u
        D = 1.0 + A * w**2
        N = 2.0 * u * D + 2.0 * A * u**2 * w
        dD = -2.0 * A * w
        dN = 2.0 * D + 2.0 * u * dD + 4.0 * A * u * w - 2.0 * A * u**2
        return (dN * D - 2.0 * N * dD) / D**3

    def derivs(self, u):
        return self.flux(u), self.dflux(u), self.d2flux(u)

    def flux_params(self, u):
        return np.zeros((np.size(u), 0))

    dflux_params = flux_params

    def with_params(self, p):
        if np.size(p):
            raise ValueError("Buckley-Leverett flux has no trainable parameters")
        return self

    def to_dict(self) -> dict:
        return {"kind": "buckley_leverett", "A": float(self.A)}


@dataclass(frozen=True, eq=False)
class SigmoidFluxBasis:
    """Sigmoid family ``g_k(u) = (tanh((u - eta_k)/sigma) + 1)/2``."""

    centers: np.ndarray
    sigma: float

    def __post_init__(self):
        c = np.array(self.centers, dtype=float)
        c.setflags(write=False)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("basis needs at least one center")
        if np.any(np.diff(c) <= 0):
            raise ValueError("basis centers must be strictly ascending")
        if not self.sigma > 0:
            raise ValueError("basis width sigma must be positive")
        object.__setattr__(self, "centers", c)

    @classmethod
    def default(cls, m: int = 20, lo: float = -0.1, hi: float = 1.1) -> "SigmoidFluxBasis":
        return cls(np.linspace(lo, hi, m), (hi - lo) / m)

    @property
    def m(self) -> int:
        return self.centers.size

    def _tanh(self, u):
        u = np.asarray(u, dtype=float).reshape(-1, 1)
        return np.tanh((u - self.centers) / self.sigma)

    def eval(self, u) -> np.ndarray:
        """Basis values, shape ``(u.size, m)``."""
        return 0.5 * (self._tanh(u) + 1.0)

    def deriv(self, u) -> np.ndarray:
        th = self._tanh(u)
        return 0.5 * (1.0 - th**2) / self.sigma

    def deriv2(self, u) -> np.ndarray:
        th = self._tanh(u)
        return -th * (1.0 - th**2) / self.sigma**2


def basis_eval(basis: SigmoidFluxBasis, u) -> np.ndarray:
    """Vector ``(g_1(u), ..., g_m(u))`` for scalar ``u``; matrix for arrays."""
    out = basis.eval(u)
    return out[0] if np.ndim(u) == 0 else out


@dataclass(frozen=True, eq=False)
class TwinFlux:
    """``G(u) = sum_k xi_k g_k(u)`` with ``xi >= 0``."""

    basis: SigmoidFluxBasis
    xi: np.ndarray

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float)
        xi.setflags(write=False)
        if xi.shape != (self.basis.m,):
            raise ValueError(f"expected {self.basis.m} coefficients, got shape {xi.shape}")
        if np.any(xi < 0) or not np.all(np.isfinite(xi)):
            raise ValueError("twin flux coefficients must be finite and non-negative")
        object.__setattr__(self, "xi", xi)

    @classmethod
    def zeros(cls, basis: SigmoidFluxBasis) -> "TwinFlux":
        return cls(basis, np.zeros(basis.m))

    @property
    def n_params(self) -> int:
        return self.basis.m

    @property
    def params(self) -> np.ndarray:
        return self.xi

    def _apply(self, mat, u):
        return (mat @ self.xi).reshape(np.shape(u))

    def flux(self, u):
        return self._apply(self.basis.eval(u), u)

    def dflux(self, u):
        return self._apply(self.basis.deriv(u), u)

    def d2flux(self, u):
        return self._apply(self.basis.deriv2(u), u)

    def derivs(self, u):
        th = self.basis._tanh(u)
        sech2 = 1.0 - th**2
        s = self.basis.sigma
        shape = np.shape(u)
        F = (0.5 * (th + 1.0)) @ self.xi
        F1 = (0.5 * sech2 / s) @ self.xi
        F2 = (-th * sech2 / s**2) @ self.xi
        return F.reshape(shape), F1.reshape(shape), F2.reshape(shape)

    def flux_params(self, u):
        return self.basis.eval(u)

    def dflux_params(self, u):
        return self.basis.deriv(u)

    def with_params(self, p) -> "TwinFlux":
        return TwinFlux(self.basis, p)

    def to_dict(self) -> dict:
        return {
            "centers": [float(c) for c in self.basis.centers],
            "sigma": float(self.basis.sigma),
            "xi": [float(v) for v in self.xi],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TwinFlux":
        missing = {"centers", "sigma", "xi"} - set(d)
        if missing:
            raise ValueError(f"twin flux record missing keys: {sorted(missing)}")
        return cls(SigmoidFluxBasis(np.asarray(d["centers"], float), float(d["sigma"])),
                   np.asarray(d["xi"], float))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TwinFlux":
        return cls.from_dict(json.loads(Path(path).read_text()))


def flux_value_and_derivative(model, u):
    """``(F(u), dF/du)`` evaluated analytically."""
    return model.flux(u), model.dflux(u)


def flux_model_from_dict(d: dict):
    if d.get("kind") == "buckley_leverett":
        return BuckleyLeverettFlux(float(d["A"]))
    return TwinFlux.from_dict(d)
