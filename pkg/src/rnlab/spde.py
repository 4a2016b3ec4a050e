"""Densities transported by the stochastic flow.

The solver is Lagrangian: with psi_t the inverse of the flow started on the
spatial grid,

    u(t, x) = u0(psi_t(x)) / J(psi_t(x)),

where J is the forward Jacobian. Nothing is discretized in flux form, so
mass and positivity are inherited from the flow. A particle solver
(sampling u0, advecting, kernel density estimate) provides an independent
cross-check, and :func:`weak_residual` tests the output against the Ito form
of the weak formulation.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicHermiteSpline

from rnlab.brownian import BrownianPath, _generator, fmt
from rnlab.drift import DEFAULT_NODES_PER_EPS, _bump_profile, cutoff, cutoff_prime, grid_convolve, primitive
from rnlab.errors import MassDriftExceeded, MissingDerivative, MonotonicityViolation, RnlabError
from rnlab.flow import solve_forward

BINARY_MAGIC = b"RNL1"
BINARY_VERSION = 1
_TAG_PARTICLES = 0x9A27


def spatial_grid(L: float, dx: float) -> np.ndarray:
    """Uniform nodes on [-L, L]; ``dx`` must divide ``2L``."""
    n = round(2.0 * L / dx)
    if n < 2 or abs(n * dx - 2.0 * L) > 1e-9 * L:
        raise ValueError(f"dx={dx} does not divide [-{L}, {L}]")
    return np.linspace(-L, L, n + 1)


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    dx = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


class GridFunction:
    """Samples and exact derivatives on a grid, cubic Hermite in between, 0 outside."""

    def __init__(self, x: np.ndarray, values: np.ndarray, derivs: np.ndarray):
        self.x = x
        self.values = values
        self.derivs = derivs
        self._spline = CubicHermiteSpline(x, values, derivs, extrapolate=False)

    def __call__(self, y):
        out = self._spline(np.asarray(y, dtype=float))
        return np.nan_to_num(out, nan=0.0)

    @property
    def mass(self) -> float:
        return float(trapezoid_weights(self.x) @ self.values)


def mollify_initial(u0: Callable, eps: float, grid_x, spacing: float | None = None) -> GridFunction:
    """u0_eps = cutoff(eps x) (u0 * rho_eps)(x), sampled on ``grid_x``."""
    x = np.asarray(grid_x, dtype=float)
    h = eps / DEFAULT_NODES_PER_EPS if spacing is None else spacing
    conv, dconv = grid_convolve(u0, x, eps, h)
    eta = cutoff(eps * x)
    return GridFunction(x, eta * conv, eps * cutoff_prime(eps * x) * conv + eta * dconv)


# ---------------------------------------------------------------- initial data


def initial_datum(name: str, **params) -> Callable:
    """Built-in initial densities: ``gaussian``, ``box``, ``bump``, ``zero``."""
    allowed = {"zero": (), "gaussian": ("center", "width", "mass"), "box": ("a", "b", "height"),
               "bump": ("amplitude", "center", "width")}
    extra = sorted(set(params) - set(allowed.get(name, params)))
    if extra:
        raise TypeError(f"initial datum {name!r} got unexpected parameter(s) {', '.join(extra)}")
    if name == "zero":
        return lambda x: np.zeros(np.shape(x))
    if name == "gaussian":
        c = float(params.get("center", 0.0))
        s = float(params.get("width", 0.5))
        mass = float(params.get("mass", 1.0))
        return lambda x: mass * np.exp(-0.5 * ((np.asarray(x, dtype=float) - c) / s) ** 2) / (s * np.sqrt(2 * np.pi))
    if name == "box":
        a = float(params.get("a", -1.0))
        b = float(params.get("b", 1.0))
        height = float(params.get("height", 1.0))

        def box(x):
            x = np.asarray(x, dtype=float)
            return height * (np.where((x > a) & (x < b), 1.0, 0.0) + 0.5 * ((x == a) | (x == b)))

        return box
    if name == "bump":
        p = _bump_profile(float(params.get("amplitude", 1.0)), float(params.get("center", 0.0)),
                          float(params.get("width", 1.0)))
        return p.value
    raise KeyError(f"unknown initial datum {name!r}")


# ---------------------------------------------------------------- density fields


@dataclass(frozen=True, eq=False)
class DensityField:
    times: np.ndarray = field(repr=False)
    time_index: np.ndarray = field(repr=False)
    grid_x: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    path: BrownianPath = field(repr=False)
    epsilon: float | None = None
    particles: np.ndarray | None = field(default=None, repr=False)

    @property
    def mass(self) -> np.ndarray:
        return self.values @ trapezoid_weights(self.grid_x)

    def at(self, t: float) -> np.ndarray:
        k = self.path.grid.index_of(t)
        hit = np.nonzero(self.time_index == k)[0]
        if not len(hit):
            raise KeyError(f"t={t} was not recorded")
        return self.values[hit[0]]

    def _single(self):
        if self.values.ndim != 2:
            raise ValueError("export is for a single-path field")

    def to_csv(self, path: str | Path) -> None:
        self._single()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "u"])
            for t, row in zip(self.times, self.values):
                for x, u in zip(self.grid_x, row):
                    w.writerow([fmt(t), fmt(x), fmt(u)])

    def to_binary(self, path: str | Path) -> None:
        """``RNL1`` table: magic, u16 version, u16 ndim=2, u64 n_t, u64 n_x,
        then float64 times, x, and u in row-major order, all little-endian."""
        self._single()
        n_t, n_x = self.values.shape
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<HHQQ", BINARY_VERSION, 2, n_t, n_x))
            for arr in (self.times, self.grid_x, self.values):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_binary(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse an ``RNL1`` table into ``(times, x, u)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != BINARY_MAGIC:
        raise ValueError("not an RNL1 file")
    version, ndim, n_t, n_x = struct.unpack_from("<HHQQ", raw, 4)
    if version != BINARY_VERSION or ndim != 2:
        raise ValueError(f"unsupported RNL1 version {version} / ndim {ndim}")
    data = np.frombuffer(raw, dtype="<f8", offset=4 + struct.calcsize("<HHQQ"))
    if data.size != n_t + n_x + n_t * n_x:
        raise ValueError("truncated RNL1 file")
    return data[:n_t].copy(), data[n_t : n_t + n_x].copy(), data[n_t + n_x :].reshape(n_t, n_x).copy()


def solve_by_characteristics(drift, u0: Callable, path: BrownianPath, grid_x, record_every: int = 1,
                             mass_tol: float | None = None, epsilon: float | None = None,
                             jacobian: str = "tangent") -> DensityField:
    """Evaluate u(t, x) = u0(psi_t(x)) / J(psi_t(x)) on ``grid_x``.

    The flow is started from every grid node. ``jacobian="tangent"`` uses the
    derivative of the discrete Euler map (the exact Jacobian of the computed
    flow, so mass is conserved up to interpolation error);
    ``"variational"`` uses exp(int b'(X) du). Points outside the image of the
    grid receive zero density. A batch path gives values of shape
    ``(n_t, n_paths, n_x)``.
    """
    if jacobian not in ("tangent", "variational"):
        raise ValueError(f"unknown jacobian {jacobian!r}")
    if drift.deriv is None:
        raise MissingDerivative(f"drift {getattr(drift, 'name', drift)!r} has no derivative; mollify it first")
    x = np.asarray(grid_x, dtype=float)
    sol = solve_forward(drift, path, path.grid.t_start, x, record_every=record_every)
    log_j = sol.log_tangent if jacobian == "tangent" else sol.log_jacobian

    traj = sol.trajectories.reshape(-1, len(x))
    log_j = log_j.reshape(traj.shape)
    j, wgt, inside = _locate_rows(traj, x)
    rows = np.arange(len(traj))[:, None]
    psi = x[j] * (1.0 - wgt) + x[j + 1] * wgt
    lj = log_j[rows, j] * (1.0 - wgt) + log_j[rows, j + 1] * wgt
    values = np.where(inside, u0(psi) * np.exp(-lj), 0.0)
    values = values.reshape(sol.trajectories.shape)

    out = DensityField(sol.times, sol.time_index, x, values, path, epsilon)
    if mass_tol is not None:
        drift_rel = float(np.max(relative_mass_drift(out)))
        if drift_rel > mass_tol:
            raise MassDriftExceeded(f"relative mass drift {drift_rel:.3e} exceeds {mass_tol:.3e}")
    return out


def _locate_rows(images: np.ndarray, q: np.ndarray):
    """Bracket ``q`` in every row of a stack of increasing arrays at once.

    Rows are shifted apart so that a single searchsorted over the flattened
    stack does the work of one search per row.
    """
    n_rows, n = images.shape
    if n > 1 and not np.all(np.diff(images, axis=1) > 0):
        raise MonotonicityViolation("flow is not increasing; cannot invert")
    lo = min(images[:, 0].min(), q.min())
    gap = max(images[:, -1].max(), q.max()) - lo + 1.0
    shift = gap * np.arange(n_rows)[:, None]
    flat = (images - lo + shift).ravel()
    pos = np.searchsorted(flat, (q[None, :] - lo + shift).ravel(), side="right").reshape(n_rows, -1)
    j = np.clip(pos - 1 - n * np.arange(n_rows)[:, None], 0, n - 2)
    rows = np.arange(n_rows)[:, None]
    left, right = images[rows, j], images[rows, j + 1]
    w = (q[None, :] - left) / (right - left)
    inside = (q[None, :] >= images[:, :1]) & (q[None, :] <= images[:, -1:])
    return j, w, inside


def relative_mass_drift(u: DensityField) -> np.ndarray:
    """max_t |M(t) - M(0)| / |M(0)|, per path."""
    mass = u.mass
    return np.max(np.abs(mass - mass[0]), axis=0) / np.maximum(np.abs(mass[0]), np.finfo(float).tiny)


def sample_initial(u0: Callable, grid_x, n_particles: int, seed: int) -> tuple[np.ndarray, float]:
    """Inverse-CDF samples from u0/mass on the grid; returns (sorted samples, mass)."""
    x = np.asarray(grid_x, dtype=float)
    u = np.asarray(u0(x), dtype=float)
    if not np.all(np.isfinite(u)) or np.any(u < 0):
        raise ValueError("u0 must be finite and non-negative to be sampled")
    cdf = cumulative_trapezoid(u, x, initial=0.0)
    mass = cdf[-1]
    if not mass > 0:
        raise ValueError("u0 is not normalizable (zero mass)")
    keep = np.concatenate(([True], np.diff(cdf) > 0))
    uni = _generator(_TAG_PARTICLES, seed, n_particles).random(n_particles)
    samples = np.sort(np.interp(uni * mass, cdf[keep], x[keep]))
    return samples, float(mass)


def kde(points: np.ndarray, grid_x: np.ndarray, bandwidth: float | None = None, mass: float = 1.0,
        chunk: int = 4096) -> np.ndarray:
    """Gaussian kernel density estimate scaled to ``mass``.

    Default bandwidth is the reference rule n^(-1/5) * sample std.
    """
    pts = np.asarray(points, dtype=float).ravel()
    n = len(pts)
    h = bandwidth if bandwidth is not None else n ** (-0.2) * np.std(pts, ddof=1)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    out = np.zeros_like(grid_x, dtype=float)
    for i in range(0, n, chunk):
        d = (grid_x[:, None] - pts[None, i : i + chunk]) / h
        out += np.exp(-0.5 * d * d).sum(axis=1)
    return out * mass / (n * h * np.sqrt(2.0 * np.pi))


def pushforward_particles(drift, u0: Callable, path: BrownianPath, n_particles: int, grid_x,
                          bandwidth: float | None = None, seed: int = 0, record_every: int | None = None,
                          particles: np.ndarray | None = None, mass: float | None = None) -> DensityField:
    """Independent second solver: sample u0, push each particle through the flow, KDE.

    ``particles`` overrides sampling (e.g. a single particle for a delta
    initial datum); ``mass`` then defaults to 1.
    """
    x = np.asarray(grid_x, dtype=float)
    if particles is None:
        start, total = sample_initial(u0, x, n_particles, seed)
    else:
        start = np.sort(np.atleast_1d(np.asarray(particles, dtype=float)))
        total = 1.0 if mass is None else mass
    if len(start) > 1 and not np.all(np.diff(start) > 0):
        raise RnlabError("duplicate particle positions")
    every = path.grid.n_steps if record_every is None else record_every
    sol = solve_forward(drift, path, path.grid.t_start, start, record_every=every)
    values = np.stack([kde(p, x, bandwidth, total) for p in sol.trajectories])
    return DensityField(sol.times, sol.time_index, x, values, path, getattr(drift, "epsilon", None),
                        particles=sol.trajectories)


# ---------------------------------------------------------------- weak formulation


@dataclass(frozen=True, eq=False)
class TestFunction:
    phi: Callable
    dphi: Callable
    d2phi: Callable
    support: tuple[float, float]
    name: str = "phi"

    __test__ = False  # not a pytest class

    def theta(self, grid_x) -> np.ndarray:
        """theta(x) = int_{x_0}^x phi(y) dy at the grid nodes."""
        return primitive(self.phi, grid_x)


def bump_test_function(center: float = 0.0, width: float = 1.0, amplitude: float = 1.0) -> TestFunction:
    p = _bump_profile(amplitude, center, width)
    return TestFunction(p.value, p.d1, p.d2, (center - width, center + width), f"bump({center:g},{width:g})")


@dataclass(frozen=True, eq=False)
class WeakResidual:
    times: np.ndarray
    residual: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual)))


def weak_residual(u: DensityField, drift, phi: TestFunction) -> WeakResidual:
    """LHS - RHS of the Ito-form weak identity along the recorded times.

        int u(t) phi = int u0 phi + int_0^t int u b phi' dx ds
                       + int_0^t int u phi' dx dB + 1/2 int_0^t int u phi'' dx ds

    Space: trapezoid. Time: left-point sums for both ds and dB. Batch
    fields give a residual of shape ``(n_t, n_paths)``.
    """
    x = u.grid_x
    lo, hi = phi.support
    if lo < x[0] or hi > x[-1]:
        raise ValueError(f"test function support [{lo:g}, {hi:g}] leaves the grid [{x[0]:g}, {x[-1]:g}]")
    w = trapezoid_weights(x)
    p, dp, d2p = phi.phi(x), phi.dphi(x), phi.d2phi(x)
    path = u.path
    xb = np.broadcast_to(x, path.batch_shape + x.shape)
    drift_term = np.stack([(uk * drift.eval(t, xb, path)) @ (w * dp) for t, uk in zip(u.times, u.values)])
    A = u.values @ (w * p)
    S = u.values @ (w * dp)
    C = u.values @ (w * d2p)
    dt = np.diff(u.times).reshape((-1,) + (1,) * (A.ndim - 1))
    dB = np.diff(np.moveaxis(path.values[..., u.time_index], -1, 0), axis=0)
    incr = (drift_term[:-1] + 0.5 * C[:-1]) * dt + S[:-1] * dB
    rhs = A[0] + np.concatenate((np.zeros_like(A[:1]), np.cumsum(incr, axis=0)))
    return WeakResidual(u.times, A - rhs)


# ---------------------------------------------------------------- primitive V


@dataclass(frozen=True, eq=False)
class PrimitiveField:
    times: np.ndarray = field(repr=False)
    grid_x: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)


def primitive_field(u: DensityField) -> PrimitiveField:
    """V(t, x) = int_{x_0}^x u(t, y) dy by cumulative trapezoid."""
    return PrimitiveField(u.times, u.grid_x, cumulative_trapezoid(u.values, u.grid_x, axis=-1, initial=0.0))
