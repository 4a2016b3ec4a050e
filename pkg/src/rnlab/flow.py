"""Characteristics of dX = b(t, X) dt + dB: forward and backward flows.

The noise is additive with coefficient 1, so Euler-Maruyama already is the
Stratonovich scheme and needs no correction term. Trajectories started from
an increasing grid of initial points must stay strictly increasing; a
crossing means ``dt`` is too large for the drift's Lipschitz constant and is
reported as :class:`MonotonicityViolation` rather than silently accepted.

Two Jacobians are available. :func:`jacobian_variational` integrates
``b'(X)`` in time (trapezoid). :func:`jacobian_iwk` recovers the same integral
from primitives of ``b, f, g`` through the Ito-Wentzell-Kunita identity,
using only drift values along the trajectory, never ``b'``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rnlab.brownian import BrownianPath, fmt, ito_integral, time_integral
from rnlab.drift import DriftField, PrimitiveTriple
from rnlab.errors import (
    MissingDerivative,
    MissingSemimartingaleParts,
    MonotonicityViolation,
    NonFiniteState,
    QueryOutsideRange,
)


@dataclass(frozen=True, eq=False)
class FlowSolution:
    s: float
    grid_x: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)
    time_index: np.ndarray = field(repr=False)
    # shape (n_recorded,) + path.batch_shape + (n_x,)
    trajectories: np.ndarray = field(repr=False)
    path: BrownianPath = field(repr=False)
    log_jacobian: np.ndarray | None = field(default=None, repr=False)
    # log of the derivative of the discrete Euler map itself
    log_tangent: np.ndarray | None = field(default=None, repr=False)

    @property
    def fully_recorded(self) -> bool:
        return bool(np.all(np.diff(self.time_index) == 1))

    @property
    def jacobians(self) -> np.ndarray:
        if self.log_jacobian is None:
            raise MissingDerivative("flow was solved for a drift without a derivative")
        return np.exp(self.log_jacobian)

    def record_of(self, t: float) -> int:
        k = self.path.grid.index_of(t)
        hit = np.nonzero(self.time_index == k)[0]
        if not len(hit):
            raise KeyError(f"t={t} was not recorded")
        return int(hit[0])

    def at(self, t: float) -> np.ndarray:
        return self.trajectories[self.record_of(t)]

    def to_csv(self, path: str | Path) -> None:
        """Rows ``s,t,x,X,J`` for a single-path solution."""
        if self.path.batch_shape:
            raise ValueError("CSV export is for a single path")
        jac = self.jacobians
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "t", "x", "X", "J"])
            for k, t in enumerate(self.times):
                for j, x in enumerate(self.grid_x):
                    w.writerow([fmt(self.s), fmt(t), fmt(x), fmt(self.trajectories[k, j]), fmt(jac[k, j])])


@dataclass(frozen=True, eq=False)
class BackwardFlow:
    t: float
    grid_y: np.ndarray = field(repr=False)
    # ascending s; trajectories[k] = Y_{s_k, t}(y)
    times: np.ndarray = field(repr=False)
    trajectories: np.ndarray = field(repr=False)


def _check_state(X, time, strict: bool):
    if not np.all(np.isfinite(X)):
        raise NonFiniteState(f"non-finite trajectory value at t={time:g}")
    if strict and X.shape[-1] > 1 and not np.all(np.diff(X, axis=-1) > 0):
        raise MonotonicityViolation(f"trajectories crossed at t={time:g}; reduce dt")


def _initial_grid(grid_x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(grid_x, dtype=float))
    if x.ndim != 1 or (len(x) > 1 and not np.all(np.diff(x) > 0)):
        raise ValueError("initial points must form a strictly increasing 1-D grid")
    return x


def solve_forward(drift: DriftField, path: BrownianPath, s: float, grid_x, t_end: float | None = None,
                  record_every: int = 1, scheme: str = "ito", check_monotone: bool = True) -> FlowSolution:
    """Euler-Maruyama for X_{s,t}(x) = x + int_s^t b(u, X_u) du + B_t - B_s.

    ``scheme="stratonovich"`` averages the noise coefficient over the step,
    which for the constant coefficient 1 reproduces the Ito scheme exactly.
    When the drift has a derivative, the trapezoid integral of ``b'(X)`` and
    the log-derivative of the Euler map are accumulated along the way so
    that Jacobians are available without storing every step.
    """
    if scheme not in ("ito", "stratonovich"):
        raise ValueError(f"unknown scheme {scheme!r}")
    grid = path.grid
    i0 = grid.index_of(s)
    i1 = grid.index_of(grid.t_end if t_end is None else t_end)
    if i1 < i0:
        raise ValueError("t_end precedes s")
    x0 = _initial_grid(grid_x)
    nodes = grid.nodes
    dt = grid.dt
    dB = path.increments
    batch = path.batch_shape
    X = np.broadcast_to(x0, batch + x0.shape).copy()
    with_deriv = drift.deriv is not None

    v, d = drift.value_and_deriv(nodes[i0], X, path)
    log_j = np.zeros_like(X) if with_deriv else None
    log_t = np.zeros_like(X) if with_deriv else None

    rec_idx = [i0]
    rec_x = [X.copy()]
    rec_j = [log_j.copy()] if with_deriv else None
    rec_t = [log_t.copy()] if with_deriv else None
    for i in range(i0, i1):
        inc = dB[..., i]
        inc = np.reshape(inc, np.shape(inc) + (1,))
        if scheme == "stratonovich":
            sigma_left = sigma_right = 1.0
            inc = 0.5 * (sigma_left + sigma_right) * inc
        X = X + v * dt + inc
        _check_state(X, nodes[i + 1], check_monotone)
        v_new, d_new = drift.value_and_deriv(nodes[i + 1], X, path)
        if with_deriv:
            log_j = log_j + 0.5 * (d + d_new) * dt
            step = 1.0 + d * dt
            if check_monotone and np.any(step <= 0):
                raise MonotonicityViolation(f"Euler map not increasing at t={nodes[i]:g}; reduce dt")
            log_t = log_t + np.log(step)
        v, d = v_new, d_new
        if (i + 1 - i0) % record_every == 0 or i + 1 == i1:
            rec_idx.append(i + 1)
            rec_x.append(X)
            if with_deriv:
                rec_j.append(log_j)
                rec_t.append(log_t)

    idx = np.array(rec_idx)
    return FlowSolution(
        s=float(nodes[i0]),
        grid_x=x0,
        times=nodes[idx],
        time_index=idx,
        trajectories=np.stack(rec_x),
        path=path,
        log_jacobian=np.stack(rec_j) if with_deriv else None,
        log_tangent=np.stack(rec_t) if with_deriv else None,
    )


def solve_backward(drift: DriftField, path: BrownianPath, t: float, grid_y, check_monotone: bool = True) -> BackwardFlow:
    """Time-reversed Euler for Y_{s,t}(y) = y - int_s^t b(u, Y_{u,t}) du - (B_t - B_s)."""
    grid = path.grid
    k1 = grid.index_of(t)
    y0 = _initial_grid(grid_y)
    nodes = grid.nodes
    dt = grid.dt
    dB = path.increments
    Y = np.broadcast_to(y0, path.batch_shape + y0.shape).copy()
    out = [Y]
    for k in range(k1, 0, -1):
        inc = dB[..., k - 1]
        Y = Y - drift.eval(nodes[k], Y, path) * dt - np.reshape(inc, np.shape(inc) + (1,))
        _check_state(Y, nodes[k - 1], check_monotone)
        out.append(Y)
    return BackwardFlow(t=float(nodes[k1]), grid_y=y0, times=nodes[: k1 + 1], trajectories=np.stack(out[::-1]))


def _du(samples, times):
    """Trapezoid in time over the recorded times (axis 0)."""
    dt = np.diff(times).reshape((-1,) + (1,) * (samples.ndim - 1))
    return np.sum(0.5 * (samples[1:] + samples[:-1]) * dt, axis=0)


def _dB(samples, sol: FlowSolution):
    """Left-point sum against the path increments between recorded times."""
    b = np.moveaxis(sol.path.values[..., sol.time_index], -1, 0)
    inc = np.diff(b, axis=0)
    inc = inc.reshape(inc.shape + (1,) * (samples.ndim - inc.ndim))
    return np.sum(samples[:-1] * inc, axis=0)


def jacobian_variational(solution: FlowSolution, drift: DriftField | None = None) -> np.ndarray:
    """J(s, t, x_j) = exp(int_s^t b'(u, X_u) du) at every recorded time.

    With a drift and a fully recorded solution the integral is recomputed
    from the stored trajectories; otherwise the running integral kept by
    :func:`solve_forward` is used. The two are the same trapezoid sum.
    """
    if drift is not None and drift.deriv is None:
        raise MissingDerivative(f"drift {drift.name!r} has no derivative")
    if drift is None or not solution.fully_recorded:
        return solution.jacobians
    d = np.stack([drift.deriv(t, X, solution.path) for t, X in zip(solution.times, solution.trajectories)])
    dt = np.diff(solution.times).reshape((-1,) + (1,) * (d.ndim - 1))
    log_j = np.concatenate((np.zeros_like(d[:1]), np.cumsum(0.5 * (d[1:] + d[:-1]) * dt, axis=0)))
    return np.exp(log_j)


@dataclass(frozen=True, eq=False)
class IWKJacobian:
    jacobians: np.ndarray
    # log J_iwk - log J_variational at the final time
    log_residual: np.ndarray

    @property
    def relative_error(self) -> np.ndarray:
        return np.expm1(self.log_residual)


def jacobian_iwk(solution: FlowSolution, drift: DriftField, primitives: PrimitiveTriple) -> IWKJacobian:
    """Jacobian at the final recorded time from the Ito-Wentzell-Kunita identity.

        int_s^t b'(X_u) du = 2 [ btilde(t, X_t) - btilde(s, x) - int ftilde du - int gtilde dB
                                 - int b^2 du - int g du - int b dB ]

    ``du`` integrals by trapezoid, ``dB`` integrals by left-point sums.
    """
    if not drift.has_semimartingale_parts:
        raise MissingSemimartingaleParts(f"drift {drift.name!r} has no f/g decomposition")
    if not solution.fully_recorded:
        raise ValueError("jacobian_iwk needs every time step recorded")
    path = solution.path
    X = solution.trajectories
    times = solution.times
    b = np.stack([drift.eval(t, Xk, path) for t, Xk in zip(times, X)])
    g = np.stack([drift.g(t, Xk, path) for t, Xk in zip(times, X)])
    ft = np.stack([primitives.ftilde(t, Xk, path) for t, Xk in zip(times, X)])
    gt = np.stack([primitives.gtilde(t, Xk, path) for t, Xk in zip(times, X)])

    bt_end = primitives.btilde(times[-1], X[-1], path)
    bt_start = primitives.btilde(times[0], X[0], path)
    inner = bt_end - bt_start - _du(ft, times) - _dB(gt, solution) - _du(b * b, times) - _du(g, times) - _dB(b, solution)
    log_j = 2.0 * inner
    log_var = np.log(jacobian_variational(solution, drift)[-1])
    return IWKJacobian(np.exp(log_j), log_j - log_var)


class InverseFlow:
    """psi_t: monotone piecewise-linear inverse of x_j -> X(s, t, x_j)."""

    def __init__(self, image: np.ndarray, preimage: np.ndarray):
        if image.ndim != 1:
            raise ValueError("inversion is per path; pass a single-path solution")
        if len(image) > 1 and not np.all(np.diff(image) > 0):
            raise MonotonicityViolation("flow is not increasing; cannot invert")
        self.image = image
        self.preimage = preimage

    def _locate(self, q):
        X = self.image
        j = np.clip(np.searchsorted(X, q, side="right") - 1, 0, len(X) - 2)
        w = (q - X[j]) / (X[j + 1] - X[j])
        return j, w

    def __call__(self, x):
        q = np.asarray(x, dtype=float)
        if np.any(q < self.image[0]) or np.any(q > self.image[-1]):
            raise QueryOutsideRange(
                f"query outside [{self.image[0]:.6g}, {self.image[-1]:.6g}], the image of the initial grid"
            )
        return self.interpolate(q, self.preimage)

    def interpolate(self, q, table):
        """Evaluate ``table`` (given at the initial points) at psi_t(q)."""
        j, w = self._locate(q)
        return table[j] * (1.0 - w) + table[j + 1] * w

    def covers(self, x) -> np.ndarray:
        q = np.asarray(x, dtype=float)
        return (q >= self.image[0]) & (q <= self.image[-1])


def invert_flow(solution: FlowSolution, t: float) -> InverseFlow:
    return InverseFlow(solution.at(t), solution.grid_x)


def exponential_martingale(integrand_samples, path: BrownianPath):
    """exp(int h dB - 1/2 int h^2 du) with the Ito sum and trapezoid rule."""
    h = np.asarray(integrand_samples, dtype=float)
    return np.exp(ito_integral(h, path) - 0.5 * time_integral(h * h, path.grid))
