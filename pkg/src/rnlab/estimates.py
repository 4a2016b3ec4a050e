"""Monte Carlo estimates: inverse-Jacobian moments, L2 bounds, commutators.

Path samples are drawn in fixed-size blocks whose seeds depend only on the
master seed and the block index. Blocks may be evaluated on a thread pool,
but results are concatenated in block order before any reduction, so the
number of threads never changes a single bit of the output.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from rnlab.brownian import BrownianPath, TimeGrid, fmt, sample_paths
from rnlab.drift import DriftField, _bump_and_slope, check_hypothesis, mollify, primitive_triple
from rnlab.flow import jacobian_variational, solve_forward
from rnlab.spde import DensityField, mollify_initial, solve_by_characteristics, trapezoid_weights

ESTIMATE_COLUMNS = ("quantity", "epsilon", "t", "mean", "std_error", "n")
DEFAULT_BLOCK = 1000
_TAG_BLOCK = 0xB10C


def block_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([_TAG_BLOCK, int(seed), int(index)]).generate_state(1, np.uint64)[0])


def blocked_map(fn: Callable, jobs: Sequence, threads: int = 1) -> list:
    """``[fn(j) for j in jobs]``, optionally on a thread pool; order is kept."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def _block_sizes(n: int, block: int) -> list[int]:
    return [min(block, n - i) for i in range(0, n, block)]


# ---------------------------------------------------------------- Jacobian moments


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    std_error: float
    n_samples: int
    bound_components: dict
    flagged: bool = False
    epsilon: float | None = None
    t: float | None = None

    def interval(self, k: float = 3.0) -> tuple[float, float]:
        return self.mean - k * self.std_error, self.mean + k * self.std_error


def inverse_jacobian_samples(drift: DriftField, s: float, t: float, x: float, n_samples: int, dt: float,
                             seed: int = 0, block: int = DEFAULT_BLOCK, threads: int = 1,
                             antithetic: bool = False) -> np.ndarray:
    """1/J(s, t, x) for ``n_samples`` independent paths, in block order."""
    grid = TimeGrid.from_dt(0.0, t, dt)
    grid.index_of(s)

    def run(job):
        index, size = job
        draws = (size + 1) // 2 if antithetic else size
        paths = sample_paths(grid, block_seed(seed, index), draws)
        if antithetic:
            paths = BrownianPath(grid, np.concatenate((paths.values, -paths.values))[:size], paths.seed)
        sol = solve_forward(drift, paths, s, np.array([float(x)]))
        return 1.0 / jacobian_variational(sol)[-1, :, 0]

    jobs = list(enumerate(_block_sizes(n_samples, block)))
    return np.concatenate(blocked_map(run, jobs, threads))


def estimate_inverse_jacobian_moment(drift: DriftField, s: float, t: float, x: float, n_samples: int, dt: float,
                                     seed: int = 0, block: int = DEFAULT_BLOCK, threads: int = 1,
                                     norm_grid=None, antithetic: bool = False) -> MomentEstimate:
    """Monte Carlo estimate of E[1/J(s, t, x)] with its standard error.

    ``bound_components`` holds the drift's five Hypothesis norms evaluated on
    ``norm_grid`` (default: [-10, 10] at spacing 1e-3), so estimates can be
    compared across drifts sharing the same norms.
    """
    if n_samples < 100:
        raise ValueError(f"need at least 100 samples, got {n_samples}")
    if drift.deriv is None:
        raise ValueError(f"drift {drift.name!r} is rough; mollify it first")
    inv = inverse_jacobian_samples(drift, s, t, x, n_samples, dt, seed, block, threads, antithetic)
    flagged = bool(np.any(~np.isfinite(inv)) or np.any(inv <= 0))
    if antithetic:
        # pairs are dependent; the error bar comes from pair means
        half = n_samples // 2
        pairs = 0.5 * (inv[:half] + inv[half : 2 * half])
        std_error = float(np.std(pairs, ddof=1) / math.sqrt(len(pairs)))
    else:
        std_error = float(np.std(inv, ddof=1) / math.sqrt(n_samples))
    z = np.arange(-10.0, 10.0 + 5e-4, 1e-3) if norm_grid is None else norm_grid
    norms = _norms(drift, z, TimeGrid.from_dt(0.0, t, dt), seed)
    return MomentEstimate(float(np.mean(inv)), std_error, int(n_samples), norms, flagged,
                          getattr(drift, "epsilon", None), float(t))


def iwk_inverse_jacobian_samples(drift: DriftField, t: float, x: float, n_samples: int, dt: float,
                                 seed: int = 0, block: int = DEFAULT_BLOCK, threads: int = 1,
                                 table=None) -> np.ndarray:
    """1/J(0, t, x) for a stationary drift without using b' at all.

        log J = 2 [ btilde(X_t) - btilde(x) - int b(X)^2 du - int b(X) dB ]

    which holds when f = g = 0, so it applies to rough drifts directly
    (trapezoid in du, left-point sums in dB, primitive tabulated on ``table``).
    """
    if drift.time_dependent:
        raise ValueError("the primitive route is implemented for stationary drifts")
    z = np.arange(-20.0, 20.0 + 5e-4, 1e-3) if table is None else np.asarray(table, dtype=float)
    btilde = primitive_triple(drift, z).btilde
    grid = TimeGrid.from_dt(0.0, t, dt)

    def run(job):
        index, size = job
        paths = sample_paths(grid, block_seed(seed, index), size)
        X = np.full(size, float(x))
        b = drift.eval(0.0, X)
        sq = 0.5 * b * b * dt
        ito = np.zeros(size)
        for i in range(grid.n_steps):
            dB = paths.values[:, i + 1] - paths.values[:, i]
            ito += b * dB
            X = X + b * dt + dB
            b = drift.eval(0.0, X)
            sq += (b * b) * (dt if i + 1 < grid.n_steps else 0.5 * dt)
        log_j = 2.0 * (btilde(0.0, X) - btilde(0.0, np.full(size, float(x))) - sq - ito)
        return np.exp(-log_j)

    jobs = list(enumerate(_block_sizes(n_samples, block)))
    return np.concatenate(blocked_map(run, jobs, threads))


def _norms(drift: DriftField, z, grid: TimeGrid, seed: int) -> dict:
    if drift.time_dependent:
        paths = sample_paths(grid, block_seed(seed, 0), 4)
        return check_hypothesis(drift, paths, z, semimartingale=drift.has_semimartingale_parts).norms
    return check_hypothesis(drift, None, z, semimartingale=drift.has_semimartingale_parts).norms


def regression_slope(x, y, sigma) -> tuple[float, float]:
    """Weighted least-squares slope of y on x and its standard error."""
    x, y, sigma = (np.asarray(a, dtype=float) for a in (x, y, sigma))
    w = 1.0 / np.maximum(sigma, np.finfo(float).tiny) ** 2
    xm = np.sum(w * x) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * y) / sxx)
    return slope, float(1.0 / math.sqrt(sxx))


def observed_order(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(np.asarray(h, dtype=float)), np.log(np.asarray(err, dtype=float)), 1)[0])


# ---------------------------------------------------------------- L2 bound


@dataclass(frozen=True)
class L2Row:
    epsilon: float
    t: float
    mean: float
    std_error: float
    n: int
    initial: float

    @property
    def ratio(self) -> float:
        return self.mean / self.initial if self.initial > 0 else (0.0 if self.mean == 0 else math.inf)


@dataclass(frozen=True)
class L2Table:
    rows: list
    bound: float

    @property
    def passed(self) -> bool:
        return math.isfinite(self.bound)


def l2_bound_check(drift: DriftField, u0: Callable, epsilons: Iterable[float], paths: BrownianPath, grid_x,
                   record_every: int = 1) -> L2Table:
    """Monte Carlo E int |u_eps(t)|^2 dx against int |u0_eps|^2 dx for each eps.

    Rough drifts are mollified at each eps; smooth ones are used as given.
    The reported bound is the largest ratio seen over the sweep.
    """
    x = np.asarray(grid_x, dtype=float)
    w = trapezoid_weights(x)
    batch = paths if paths.batch_shape else BrownianPath(paths.grid, paths.values[None, :], paths.seed)
    rows = []
    for eps in epsilons:
        b = drift if drift.deriv is not None else mollify(drift, eps)
        u0e = mollify_initial(u0, eps, x)
        init = float(w @ u0e.values**2)
        u = solve_by_characteristics(b, u0e, batch, x, record_every=record_every, epsilon=eps)
        sq = (u.values**2) @ w  # (n_t, n_paths)
        n = sq.shape[1]
        for k, t in enumerate(u.times):
            se = float(np.std(sq[k], ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            rows.append(L2Row(float(eps), float(t), float(np.mean(sq[k])), se, n, init))
    ratios = [r.ratio for r in rows]
    return L2Table(rows, max(ratios) if ratios else 0.0)


# ---------------------------------------------------------------- commutator


@dataclass(frozen=True)
class CommutatorRecord:
    epsilon: float
    l2_norm: float
    # sqrt of E int int |R|^2 over the interior |x| <= 1/eps, where the cutoff is 1
    interior_l2: float = field(default=float("nan"), compare=False)


def lattice_kernel(eps: float, dx: float) -> np.ndarray:
    """rho_eps sampled at multiples of ``dx``, normalized to sum 1."""
    if dx > eps / 8.0:
        raise ValueError(f"grid spacing {dx} exceeds eps/8 = {eps / 8.0}; commutator is under-resolved")
    m = int(math.floor(eps / dx))
    k = np.arange(-m, m + 1) * dx / eps
    w = _bump_and_slope(k)[0]
    return w / w.sum()


def commutator(u: DensityField, drift: DriftField, eps: float) -> CommutatorRecord:
    """L2 norm of R_eps(V, b) = b_eps (V_eps)' - (b V')_eps with V' = u.

    Both convolutions are discrete on the solution grid with the same
    normalized kernel; b_eps is the mollified drift (cutoff included).
    The norm is sqrt(E int_0^T int R^2 dx dt), trapezoid in x and t.
    """
    x = u.grid_x
    dx = float(np.max(np.diff(x)))
    if not np.allclose(np.diff(x), dx, rtol=1e-9, atol=0):
        raise ValueError("commutator needs a uniform grid")
    kernel = lattice_kernel(eps, dx)
    b_eps = mollify(drift, eps)
    path = u.path
    xb = np.broadcast_to(x, path.batch_shape + x.shape)
    wx = trapezoid_weights(x)
    inner = np.abs(x) <= 1.0 / eps
    total = np.zeros(len(u.times))
    total_in = np.zeros(len(u.times))
    for k, t in enumerate(u.times):
        uk = u.values[k]
        b = drift.eval(t, xb, path)
        R = b_eps.eval(t, xb, path) * convolve1d(uk, kernel, axis=-1, mode="constant") - convolve1d(
            b * uk, kernel, axis=-1, mode="constant"
        )
        sq = R * R
        total[k] = np.mean(sq @ wx)
        total_in[k] = np.mean(sq @ (wx * inner))
    tw = trapezoid_weights(u.times) if len(u.times) > 1 else np.ones(1)
    return CommutatorRecord(float(eps), float(math.sqrt(tw @ total)), float(math.sqrt(tw @ total_in)))


@dataclass(frozen=True)
class DecayStudy:
    records: list

    @property
    def norms(self) -> np.ndarray:
        return np.array([r.l2_norm for r in self.records])

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.norms) < 0))

    @property
    def ratio(self) -> float:
        n = self.norms
        return float(n[-1] / n[0]) if n[0] > 0 else 0.0

    @property
    def rate(self) -> float:
        """Observed order of ||R_eps|| in eps."""
        eps = [r.epsilon for r in self.records]
        if np.all(self.norms == 0):
            return math.inf
        return observed_order(eps, self.norms)


def commutator_decay_study(drift: DriftField, u: DensityField, epsilons: Iterable[float],
                           threads: int = 1) -> DecayStudy:
    """||R_eps|| for every eps on one fixed set of solution samples.

    Using the same ``u`` (and hence the same noise) at every eps is what
    makes the trend visible without Monte Carlo scatter.
    """
    eps = sorted((float(e) for e in epsilons), reverse=True)
    return DecayStudy(blocked_map(lambda e: commutator(u, drift, e), eps, threads))


# ---------------------------------------------------------------- export


def write_estimates_csv(path: str | Path, rows: Iterable[Sequence]) -> None:
    """Rows of (quantity, epsilon, t, mean, std_error, n); None becomes an empty field."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATE_COLUMNS)
        for q, eps, t, mean, se, n in rows:
            w.writerow([q, "" if eps is None else fmt(eps), "" if t is None else fmt(t), fmt(mean), fmt(se), int(n)])


def read_estimates_csv(path: str | Path) -> list[tuple]:
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != ESTIMATE_COLUMNS:
            raise ValueError(f"unexpected header {header}")
        for q, eps, t, mean, se, n in r:
            out.append((q, float(eps) if eps else None, float(t) if t else None, float(mean), float(se), int(n)))
    return out
