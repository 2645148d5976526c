"""Time grids, sample paths, finite-variation paths and piecewise-constant controls."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray


class GridMismatchError(ValueError):
    """Two paths that must share a time grid do not."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i * T / M`` for ``i = 0..M``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @classmethod
    def from_step(cls, horizon: float, dt: float) -> TimeGrid:
        steps = int(round(horizon / dt))
        if steps < 1 or abs(steps * dt - horizon) > 1e-9 * horizon:
            raise ValueError(f"dt={dt} does not divide horizon={horizon}")
        return cls(horizon, steps)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> NDArray[np.float64]:
        t = np.arange(self.steps + 1, dtype=float) * self.dt
        t[-1] = self.horizon
        return t

    def refine(self, factor: int = 2) -> TimeGrid:
        return TimeGrid(self.horizon, self.steps * factor)


def _as_2d(values, rows: int, name: str) -> NDArray[np.float64]:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != rows:
        raise ValueError(f"{name} must have shape ({rows}, d), got {np.shape(values)}")
    return arr


@dataclass
class SamplePath:
    """A d-dimensional trajectory on a time grid; ``values`` has shape (M+1, d)."""

    grid: TimeGrid
    values: NDArray[np.float64]

    def __post_init__(self):
        self.values = _as_2d(self.values, self.grid.steps + 1, "values")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def terminal(self) -> NDArray[np.float64]:
        return self.values[-1]

    def sup_distance(self, other: SamplePath) -> float:
        if self.grid != other.grid:
            raise GridMismatchError("paths live on different grids")
        return float(np.max(np.linalg.norm(self.values - other.values, axis=1)))


@dataclass
class FiniteVariationPath:
    """Path K with ``K_0 = 0`` stored through its increments (shape (M, d))."""

    grid: TimeGrid
    increments: NDArray[np.float64]

    def __post_init__(self):
        self.increments = _as_2d(self.increments, self.grid.steps, "increments")

    @classmethod
    def zeros(cls, grid: TimeGrid, dim: int) -> FiniteVariationPath:
        return cls(grid, np.zeros((grid.steps, dim)))

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    @property
    def values(self) -> NDArray[np.float64]:
        out = np.zeros((self.grid.steps + 1, self.dim))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    @property
    def running_variation(self) -> NDArray[np.float64]:
        """``|K|_0^{t_i}`` for every grid node."""
        out = np.zeros(self.grid.steps + 1)
        np.cumsum(np.linalg.norm(self.increments, axis=1), out=out[1:])
        return out

    @property
    def total_variation(self) -> float:
        return float(np.sum(np.linalg.norm(self.increments, axis=1)))

    def variation_between(self, s: float, t: float) -> float:
        """Variation over the grid cells contained in ``[s, t]``."""
        times = self.grid.times
        mask = (times[:-1] >= s - 1e-12) & (times[1:] <= t + 1e-12)
        return float(np.sum(np.linalg.norm(self.increments[mask], axis=1)))


@dataclass
class ControlPath:
    """Piecewise-constant control, ``values[i]`` acting on ``[t_i, t_{i+1})``."""

    grid: TimeGrid
    values: NDArray[np.float64]
    bound: float | None = field(default=None)

    def __post_init__(self):
        self.values = _as_2d(self.values, self.grid.steps, "values")
        if self.bound is not None and not self.in_ball(self.bound):
            raise ValueError(f"control energy {self.energy:.6g} exceeds the bound m={self.bound}")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def l2_squared(self) -> float:
        return float(self.grid.dt * np.sum(self.values**2))

    @property
    def energy(self) -> float:
        return 0.5 * self.l2_squared

    def in_ball(self, m: float) -> bool:
        """Membership in ``S_m = {u : int |u|^2 <= 2m}``."""
        return self.l2_squared <= 2.0 * m * (1 + 1e-12)

    def __mul__(self, c: float) -> ControlPath:
        return ControlPath(self.grid, c * self.values)

    __rmul__ = __mul__

    def __add__(self, other: ControlPath) -> ControlPath:
        if self.grid != other.grid:
            raise GridMismatchError("controls live on different grids")
        return ControlPath(self.grid, self.values + other.values)

    @classmethod
    def zeros(cls, grid: TimeGrid, dim: int) -> ControlPath:
        return cls(grid, np.zeros((grid.steps, dim)))

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> ControlPath:
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.steps, 1)))

    @classmethod
    def ramp(cls, grid: TimeGrid, start, stop) -> ControlPath:
        start = np.atleast_1d(np.asarray(start, dtype=float))
        stop = np.atleast_1d(np.asarray(stop, dtype=float))
        s = grid.times[:-1, None] / grid.horizon
        return cls(grid, start + s * (stop - start))

    @classmethod
    def sinusoid(cls, grid: TimeGrid, amplitude, frequency: float, phase: float = 0.0,
                 offset=0.0) -> ControlPath:
        """``offset + amplitude * sin(2 pi frequency t / T + phase)`` at left grid nodes."""
        amplitude = np.atleast_1d(np.asarray(amplitude, dtype=float))
        offset = np.atleast_1d(np.asarray(offset, dtype=float))
        t = grid.times[:-1, None]
        return cls(grid, offset + amplitude * np.sin(2 * np.pi * frequency * t / grid.horizon + phase))

    @classmethod
    def from_function(cls, grid: TimeGrid, fn) -> ControlPath:
        vals = np.array([np.atleast_1d(fn(t)) for t in grid.times[:-1]], dtype=float)
        return cls(grid, vals)

    @classmethod
    def from_csv(cls, path: str | Path, grid: TimeGrid) -> ControlPath:
        """Load a ``t, u1..ud`` table and sample it (previous-value hold) on ``grid``."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[0].strip() != "t":
                raise ValueError(f"{path}: first column must be 't', got {header[:1]}")
            rows = [[float(v) for v in row] for row in reader if row]
        table = np.asarray(rows, dtype=float)
        if table.ndim != 2 or table.shape[0] == 0 or table.shape[1] < 2:
            raise ValueError(f"{path}: expected columns t,u1..ud with at least one row")
        t, u = table[:, 0], table[:, 1:]
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"{path}: t column must be strictly increasing")
        idx = np.searchsorted(t, grid.times[:-1] + 1e-12, side="right") - 1
        return cls(grid, u[np.clip(idx, 0, len(t) - 1)])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"u{k + 1}" for k in range(self.dim)])
            for t, row in zip(self.grid.times[:-1], self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
