"""Brownian paths on uniform grids and partition-sum stochastic integrals.

Paths are immutable. A path carries the seed that generated it, so that
``refine`` can fill in intermediate points with a Brownian bridge whose draws
depend only on ``(seed, grid size, factor, interval index)``. Restricting a
refined path to the coarse grid returns the original values bit for bit,
which is what makes common-random-number sweeps over ``dt`` or ``epsilon``
possible.

A path may also be a *batch*: ``values`` of shape ``(n_paths, n_steps + 1)``.
Every operation here broadcasts over the leading batch axis.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rnlab.errors import GridMismatch

_TAG_SAMPLE = 0x5A11
_TAG_BATCH = 0xBA7C
_TAG_BRIDGE = 0xB21D


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"need t_start < t_end, got [{self.t_start}, {self.t_end}]")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @classmethod
    def from_dt(cls, t_start: float, t_end: float, dt: float) -> "TimeGrid":
        n = round((t_end - t_start) / dt)
        if n < 1 or not np.isclose(n * dt, t_end - t_start, rtol=1e-9, atol=0.0):
            raise ValueError(f"dt={dt} does not divide [{t_start}, {t_end}]")
        return cls(t_start, t_end, int(n))

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t: float) -> int:
        """Grid index of ``t``; raises if ``t`` is not a node."""
        k = round((t - self.t_start) / self.dt)
        if k < 0 or k > self.n_steps or abs(self.t_start + k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise GridMismatch(f"t={t} is not a node of {self}")
        return int(k)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_end, self.n_steps * factor)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    seed: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[-1] != self.grid.n_steps + 1:
            raise GridMismatch(f"{v.shape[-1]} values for a grid with {self.grid.n_steps + 1} nodes")
        if v.ndim not in (1, 2):
            raise ValueError("values must be 1-D (single path) or 2-D (batch of paths)")
        if np.any(v[..., 0] != 0.0):
            raise ValueError("Brownian paths start at 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls, grid: TimeGrid) -> "BrownianPath":
        """The noise-off path B = 0, used for deterministic runs."""
        return cls(grid, np.zeros(grid.n_steps + 1), seed=0)

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.values.shape[:-1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-1)

    def value_at(self, t: float) -> np.ndarray | float:
        return self.values[..., self.grid.index_of(t)]

    def __len__(self) -> int:
        return self.values.shape[0] if self.values.ndim == 2 else 1

    def __getitem__(self, i: int) -> "BrownianPath":
        if self.values.ndim == 1:
            raise TypeError("single path is not indexable")
        # rows get their own seed so that refining two rows separately does
        # not reuse the same bridge draws
        row_seed = int(np.random.SeedSequence([_TAG_BATCH, self.seed, int(i)]).generate_state(1, np.uint64)[0])
        return BrownianPath(self.grid, self.values[i], row_seed)

    def restrict(self, grid: TimeGrid) -> "BrownianPath":
        """Restriction to a coarser grid whose nodes are a subset of ours."""
        if grid.t_start != self.grid.t_start or grid.t_end != self.grid.t_end:
            raise GridMismatch("restriction needs the same time interval")
        factor, rem = divmod(self.grid.n_steps, grid.n_steps)
        if rem:
            raise GridMismatch(f"{grid.n_steps} steps do not divide {self.grid.n_steps}")
        return BrownianPath(grid, self.values[..., ::factor], self.seed)

    def to_csv(self, path: str | Path) -> None:
        """Write columns ``t,B_t`` (single path only)."""
        if self.values.ndim != 1:
            raise ValueError("CSV export is for a single path")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "B_t"])
            for t, b in zip(self.times, self.values):
                w.writerow([fmt(t), fmt(b)])

    @classmethod
    def from_csv(cls, path: str | Path, seed: int = 0) -> "BrownianPath":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, b = data[:, 0], data[:, 1]
        return cls(TimeGrid(float(t[0]), float(t[-1]), len(t) - 1), b, seed)


def fmt(x: float) -> str:
    """17-significant-digit text used by every CSV writer in the package."""
    return format(float(x), ".17g")


def _generator(*words: int) -> np.random.Generator:
    # Philox is counter based; the key is a pure function of the words.
    ss = np.random.SeedSequence([int(w) & 0xFFFFFFFFFFFFFFFF for w in words])
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def sample_path(grid: TimeGrid, seed: int) -> BrownianPath:
    dW = _generator(_TAG_SAMPLE, seed, grid.n_steps).standard_normal(grid.n_steps)
    values = np.concatenate(([0.0], np.cumsum(dW * np.sqrt(grid.dt))))
    return BrownianPath(grid, values, seed)


def sample_paths(grid: TimeGrid, seed: int, n_paths: int) -> BrownianPath:
    """A batch of ``n_paths`` independent paths from one master seed."""
    dW = _generator(_TAG_BATCH, seed, grid.n_steps, n_paths).standard_normal((n_paths, grid.n_steps))
    values = np.zeros((n_paths, grid.n_steps + 1))
    np.cumsum(dW * np.sqrt(grid.dt), axis=1, out=values[:, 1:])
    return BrownianPath(grid, values, seed)


def refine(path: BrownianPath, factor: int) -> BrownianPath:
    """Insert ``factor - 1`` bridge-sampled points in every interval.

    Interior points are drawn sequentially from the Brownian bridge pinned
    at the interval's endpoints. The coarse values are copied, never
    recomputed, so ``refine(p, k).restrict(p.grid)`` equals ``p`` exactly.
    """
    if int(factor) != factor or factor < 2:
        raise ValueError(f"refinement factor must be an integer >= 2, got {factor}")
    n, batch = path.grid.n_steps, path.batch_shape
    fine = path.grid.refined(factor)
    h = fine.dt
    z = _generator(_TAG_BRIDGE, path.seed, n, factor, len(batch)).standard_normal(batch + (n, factor - 1))

    left = path.values[..., :-1]
    right = path.values[..., 1:]
    out = np.empty(batch + (n, factor))
    out[..., 0] = left
    prev = left
    for m in range(1, factor):
        # conditional law of B at m*h given B at (m-1)*h and the right endpoint
        remaining = (factor - m + 1) * h
        mean = prev + (right - prev) * (h / remaining)
        var = h * (remaining - h) / remaining
        prev = mean + np.sqrt(var) * z[..., m - 1]
        out[..., m] = prev
    values = np.concatenate((out.reshape(batch + (n * factor,)), path.values[..., -1:]), axis=-1)
    return BrownianPath(fine, values, path.seed)


def _check_grid(samples: np.ndarray, path: BrownianPath) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-1] != path.grid.n_steps + 1:
        raise GridMismatch(
            f"integrand has {samples.shape[-1]} samples, path grid has {path.grid.n_steps + 1} nodes"
        )
    return samples


def ito_integral(integrand_samples, path: BrownianPath) -> np.ndarray | float:
    """Left-point sum ``sum_i X(t_i) (B(t_{i+1}) - B(t_i))``."""
    x = _check_grid(integrand_samples, path)
    return np.sum(x[..., :-1] * path.increments, axis=-1)


def stratonovich_integral(integrand_samples, path: BrownianPath) -> np.ndarray | float:
    """Endpoint-average sum ``sum_i (X(t_i) + X(t_{i+1}))/2 * dB_i``."""
    x = _check_grid(integrand_samples, path)
    return np.sum(0.5 * (x[..., :-1] + x[..., 1:]) * path.increments, axis=-1)


def quadratic_covariation(x_samples, y_samples) -> np.ndarray | float:
    x = np.asarray(x_samples, dtype=float)
    y = np.asarray(y_samples, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise GridMismatch(f"sample lengths differ: {x.shape[-1]} vs {y.shape[-1]}")
    return np.sum(np.diff(x, axis=-1) * np.diff(y, axis=-1), axis=-1)


def time_integral(samples, grid: TimeGrid) -> np.ndarray | float:
    """Trapezoid rule in time on the path grid."""
    s = np.asarray(samples, dtype=float)
    if s.shape[-1] != grid.n_steps + 1:
        raise GridMismatch("samples do not match the time grid")
    return grid.dt * (np.sum(s, axis=-1) - 0.5 * (s[..., 0] + s[..., -1]))
