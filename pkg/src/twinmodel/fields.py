"""Grids, discretized fields, mismatch norms and excited-range extraction.

Time convention: row ``k`` of a space-time field lives at ``t_k`` and carries
the quadrature weight ``dt_k``, which is also the step that leaves row ``k``.
Hence ``t_k = t_0 + sum(dt[:k])`` and the horizon ``T = sum(dt)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class GridMismatchError(ValueError):
    """Two fields were compared on different grids."""


def _as_readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Cell-centred 1-D grid with an optional time axis."""

    cell_widths: np.ndarray
    time_steps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x0: float = 0.0
    t0: float = 0.0
    periodic: bool = True

    def __post_init__(self):
        dx = _as_readonly(self.cell_widths)
        dt = _as_readonly(self.time_steps)
        if dx.ndim != 1 or dx.size == 0:
            raise ValueError("cell_widths must be a non-empty 1-D array")
        if dt.ndim != 1:
            raise ValueError("time_steps must be a 1-D array")
        if np.any(~np.isfinite(dx)) or np.any(dx <= 0):
            raise ValueError("cell widths must be finite and strictly positive")
        if np.any(~np.isfinite(dt)) or np.any(dt <= 0):
            raise ValueError("time steps must be finite and strictly positive")
        object.__setattr__(self, "cell_widths", dx)
        object.__setattr__(self, "time_steps", dt)

    @classmethod
    def uniform(cls, nx: int, nt: int = 0, length: float = 1.0,
                horizon: float = 1.0, x0: float = 0.0, t0: float = 0.0,
                periodic: bool = True) -> "Grid1D":
        if nx < 1 or nt < 0:
            raise ValueError("need nx >= 1 and nt >= 0")
        dt = np.full(nt, horizon / nt) if nt else np.zeros(0)
        return cls(np.full(nx, length / nx), dt, x0=x0, t0=t0, periodic=periodic)

    @property
    def nx(self) -> int:
        return self.cell_widths.size

    @property
    def nt(self) -> int:
        return self.time_steps.size

    @property
    def length(self) -> float:
        return float(self.cell_widths.sum())

    @property
    def horizon(self) -> float:
        return float(self.time_steps.sum())

    @property
    def faces(self) -> np.ndarray:
        return self.x0 + np.concatenate([[0.0], np.cumsum(self.cell_widths)])

    @property
    def cell_centers(self) -> np.ndarray:
        f = self.faces
        return 0.5 * (f[1:] + f[:-1])

    @property
    def time_points(self) -> np.ndarray:
        return self.t0 + np.concatenate([[0.0], np.cumsum(self.time_steps)[:-1]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt, self.nx)

    def same_as(self, other: "Grid1D", rtol: float = 1e-12) -> bool:
        if self is other:
            return True
        return (
            self.nx == other.nx and self.nt == other.nt
            and self.periodic == other.periodic
            and np.allclose(self.cell_widths, other.cell_widths, rtol=rtol, atol=0)
            and np.allclose(self.time_steps, other.time_steps, rtol=rtol, atol=0)
            and np.isclose(self.x0, other.x0) and np.isclose(self.t0, other.t0)
        )

    def to_dict(self) -> dict:
        return {
            "cell_widths": [float(v) for v in self.cell_widths],
            "time_steps": [float(v) for v in self.time_steps],
            "x0": float(self.x0),
            "t0": float(self.t0),
            "periodic": bool(self.periodic),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grid1D":
        return cls(np.asarray(d["cell_widths"], float), np.asarray(d["time_steps"], float),
                   x0=d.get("x0", 0.0), t0=d.get("t0", 0.0), periodic=d.get("periodic", True))


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Values ``u[k, i]`` on a :class:`Grid1D` (time-major)."""

    values: np.ndarray
    grid: Grid1D

    def __post_init__(self):
        v = _as_readonly(self.values)
        if v.shape != self.grid.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    def total_mass(self) -> np.ndarray:
        """Per-row integral of u over space."""
        return self.values @ self.grid.cell_widths


@dataclass(frozen=True, eq=False)
class SteadyField:
    """Per-cell values of one quantity on a grid (no time axis)."""

    values: np.ndarray
    grid: Grid1D
    name: str = ""

    def __post_init__(self):
        v = _as_readonly(self.values)
        if v.shape != (self.grid.nx,):
            raise ValueError(f"steady field shape {v.shape} does not match nx={self.grid.nx}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", v)


def mismatch_spacetime(a: SpaceTimeField, b: SpaceTimeField) -> float:
    """Space-time L2 mismatch normalised by the horizon."""
    if not a.grid.same_as(b.grid):
        raise GridMismatchError("space-time fields live on different grids")
    g = a.grid
    d2 = (a.values - b.values) ** 2
    return float((d2 @ g.cell_widths) @ g.time_steps / g.horizon)


def weighted_norm2(values: np.ndarray, widths: np.ndarray) -> float:
    """Squared discrete L2 norm with cell-width weighting."""
    return float((np.asarray(values) ** 2) @ widths)


def mismatch_steady_weighted(twin: Sequence[SteadyField], gray: Sequence[SteadyField],
                             weights: Sequence[float]) -> float:
    if not (len(twin) == len(gray) == len(weights)):
        raise ValueError("twin, gray and weights must have equal length")
    total = 0.0
    for t, g, w in zip(twin, gray, weights):
        if not w > 0:
            raise ValueError(f"weights must be positive, got {w}")
        if not t.grid.same_as(g.grid):
            raise GridMismatchError("steady fields live on different grids")
        total += w * weighted_norm2(t.values - g.values, t.grid.cell_widths)
    return total


def excited_range(u: SpaceTimeField | np.ndarray) -> tuple[float, float]:
    vals = u.values if isinstance(u, SpaceTimeField) else np.asarray(u, float)
    if vals.size == 0:
        raise ValueError("excited range of an empty field")
    return float(vals.min()), float(vals.max())


# -- CSV (normative golden-file format) ---------------------------------------

def write_field_csv(path: str | Path, fld: SpaceTimeField) -> None:
    g = fld.grid
    t, x = g.time_points, g.cell_centers
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "value"])
        for k in range(g.nt):
            for i in range(g.nx):
                w.writerow([repr(float(t[k])), repr(float(x[i])), repr(float(fld.values[k, i]))])


def read_field_csv(path: str | Path, grid: Grid1D | None = None) -> SpaceTimeField:
    """Read a ``t,x,value`` CSV.

    Without ``grid`` the time and space axes are assumed uniform and the
    grid is rebuilt from the coordinates (periodic).
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["t", "x", "value"]:
        raise ValueError(f"{path}: expected header 't,x,value'")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    ts = np.unique(data[:, 0])
    xs = np.unique(data[:, 1])
    nt, nx = ts.size, xs.size
    if data.shape[0] != nt * nx:
        raise ValueError(f"{path}: {data.shape[0]} rows do not form a {nt}x{nx} grid")
    vals = data[:, 2].reshape(nt, nx)
    if grid is None:
        dx = (xs[1] - xs[0]) if nx > 1 else 1.0
        dt = (ts[1] - ts[0]) if nt > 1 else 1.0
        if nx > 1 and not np.allclose(np.diff(xs), dx, rtol=1e-9):
            raise ValueError(f"{path}: non-uniform x spacing needs an explicit grid")
        if nt > 1 and not np.allclose(np.diff(ts), dt, rtol=1e-9):
            raise ValueError(f"{path}: non-uniform t spacing needs an explicit grid")
        grid = Grid1D(np.full(nx, dx), np.full(nt, dt), x0=xs[0] - 0.5 * dx, t0=ts[0])
    elif grid.shape != (nt, nx) or not np.allclose(grid.cell_centers, xs, rtol=1e-10, atol=1e-14):
        raise GridMismatchError(f"{path}: coordinates do not match the given grid")
    return SpaceTimeField(vals, grid)
