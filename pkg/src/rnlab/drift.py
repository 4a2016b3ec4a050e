"""Drift fields b(t, x, omega), their mollification and Hypothesis norms.

Every drift is a pure function ``eval(t, x, path)`` that broadcasts over
``x``. When ``path`` is a batch of Brownian paths, ``x`` carries the batch
axis in front (shape ``(n_paths, ...)``).

Mollification uses the normalized bump ``exp(-1/(1-r^2))`` on (-1, 1) and a
C^2 cutoff equal to 1 on [-1, 1] and 0 outside [-2, 2]:

    b_eps(x) = cutoff(eps * x) * (b * rho_eps)(x)

The convolution is a quadrature on the fixed cell-midpoint lattice
``z_j = (j + 1/2) h`` with the weights renormalized to sum to one, so the
result is a smooth function of ``x`` whose derivative is obtained exactly by
convolving with ``rho_eps'``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicHermiteSpline

from rnlab.brownian import BrownianPath, time_integral
from rnlab.errors import MissingSemimartingaleParts

Field = Callable[..., np.ndarray]

# quadrature nodes per unit of epsilon; must stay >= 8
DEFAULT_NODES_PER_EPS = 16

_BUMP_MASS = quad(lambda r: math.exp(-1.0 / (1.0 - r * r)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]


def _bump_and_slope(r):
    """exp(-1/(1-r^2)) and its r-derivative, zero outside (-1, 1)."""
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) < 1.0
    s = np.where(inside, 1.0 - r * r, 1.0)
    val = np.where(inside, np.exp(-1.0 / s), 0.0)
    return val, val * (-2.0 * r / (s * s))


def rho(x, eps: float = 1.0):
    """Standard mollifier rho_eps(x) = rho(x/eps)/eps, unit mass."""
    return _bump_and_slope(np.asarray(x) / eps)[0] / (_BUMP_MASS * eps)


def rho_prime(x, eps: float = 1.0):
    return _bump_and_slope(np.asarray(x) / eps)[1] / (_BUMP_MASS * eps * eps)


def cutoff(r):
    """C^2 cutoff: 1 on |r| <= 1, quintic smoothstep down to 0 at |r| = 2."""
    u = np.clip(np.abs(np.asarray(r, dtype=float)) - 1.0, 0.0, 1.0)
    return 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u * u)


def cutoff_prime(r):
    r = np.asarray(r, dtype=float)
    u = np.clip(np.abs(r) - 1.0, 0.0, 1.0)
    return -np.sign(r) * 30.0 * u * u * (1.0 - u) ** 2


def grid_convolve(func: Callable[[np.ndarray], np.ndarray], x, eps: float, spacing: float):
    """Value and x-derivative of the discrete convolution ``(func * rho_eps)(x)``.

    ``func`` is sampled on the lattice ``(j + 1/2) * spacing``; only the
    ``~2 eps / spacing`` nodes inside the kernel support are touched, so
    ``x`` may be any array of evaluation points.
    """
    if spacing > eps / 8.0:
        raise ValueError(f"quadrature spacing {spacing} exceeds eps/8 = {eps / 8.0}")
    x = np.asarray(x, dtype=float)
    m = int(math.ceil(2.0 * eps / spacing)) + 1
    j0 = np.ceil((x - eps) / spacing - 0.5)
    z = (j0[..., None] + (np.arange(m) + 0.5)) * spacing
    w, dw = _bump_and_slope((x[..., None] - z) / eps)
    fz = np.broadcast_to(func(z), z.shape)
    den = w.sum(axis=-1)
    val = (fz * w).sum(axis=-1) / den
    der = ((fz * dw).sum(axis=-1) - val * dw.sum(axis=-1)) / (eps * den)
    return val, der


def _align(v, x):
    """Reshape a per-path quantity so it broadcasts against ``x``."""
    v = np.asarray(v, dtype=float)
    return v.reshape(v.shape + (1,) * (np.ndim(x) - v.ndim))


@dataclass(frozen=True, eq=False)
class DriftField:
    name: str
    eval: Field
    deriv: Field | None = None
    f: Field | None = None
    g: Field | None = None
    smooth: bool = True
    support_bound: float | None = None
    time_dependent: bool = False
    # fields of the form h(x - B_t); primitives can then be tabulated once
    comoving: bool = False
    params: Mapping = field(default_factory=dict)
    # optional (t, x, path) -> (b, b') computed in one pass
    joint: Field | None = None

    def __call__(self, t, x, path=None):
        return self.eval(t, x, path)

    def value_and_deriv(self, t, x, path=None):
        if self.joint is not None:
            return self.joint(t, x, path)
        return self.eval(t, x, path), (None if self.deriv is None else self.deriv(t, x, path))

    @property
    def has_semimartingale_parts(self) -> bool:
        return self.f is not None and self.g is not None


@dataclass(frozen=True, eq=False)
class MollifiedDrift(DriftField):
    base: DriftField | None = None
    epsilon: float = 1.0
    spacing: float = 1.0 / DEFAULT_NODES_PER_EPS

    def value_and_deriv(self, t, x, path=None):
        x = np.asarray(x, dtype=float)
        conv, dconv = grid_convolve(lambda z: self.base.eval(t, z, path), x, self.epsilon, self.spacing)
        eta = cutoff(self.epsilon * x)
        return eta * conv, self.epsilon * cutoff_prime(self.epsilon * x) * conv + eta * dconv


def _mollified_part(part: Field | None, eps: float, spacing: float) -> Field | None:
    if part is None:
        return None

    def ev(t, x, path=None):
        x = np.asarray(x, dtype=float)
        return cutoff(eps * x) * grid_convolve(lambda z: part(t, z, path), x, eps, spacing)[0]

    return ev


def mollify(drift: DriftField, eps: float, spacing: float | None = None) -> MollifiedDrift:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    h = eps / DEFAULT_NODES_PER_EPS if spacing is None else spacing
    holder: dict = {}

    def ev(t, x, path=None):
        return holder["self"].value_and_deriv(t, x, path)[0]

    def dv(t, x, path=None):
        return holder["self"].value_and_deriv(t, x, path)[1]

    support = 2.0 / eps
    if drift.support_bound is not None:
        support = min(support, drift.support_bound + eps)
    out = MollifiedDrift(
        name=f"{drift.name}@eps={eps:g}",
        eval=ev,
        deriv=dv,
        f=_mollified_part(drift.f, eps, h),
        g=_mollified_part(drift.g, eps, h),
        smooth=True,
        support_bound=support,
        time_dependent=drift.time_dependent,
        comoving=False,
        params=dict(drift.params, epsilon=eps),
        base=drift,
        epsilon=eps,
        spacing=h,
    )
    holder["self"] = out
    return out


# ---------------------------------------------------------------- catalog


@dataclass(frozen=True)
class _Profile:
    value: Callable
    d1: Callable | None
    d2: Callable | None
    smooth: bool
    support: float | None
    joint: Callable | None = None


def _zeros(x):
    return np.zeros(np.shape(x))


def _bump_profile(amplitude: float, center: float, width: float) -> _Profile:
    def parts(x):
        r = (np.asarray(x, dtype=float) - center) / width
        inside = np.abs(r) < 1.0
        s = np.where(inside, 1.0 - r * r, 1.0)
        g = np.where(inside, amplitude * np.exp(1.0 - 1.0 / s), 0.0)
        q = -2.0 * r / (s * s)
        dq = -(2.0 + 6.0 * r * r) / s**3
        return g, g * q / width, g * (q * q + dq) / width**2

    return _Profile(
        lambda x: parts(x)[0],
        lambda x: parts(x)[1],
        lambda x: parts(x)[2],
        True,
        abs(center) + width,
        lambda x: parts(x)[:2],
    )


def _profile(name: str, params: Mapping) -> _Profile:
    if name == "zero":
        return _Profile(_zeros, _zeros, _zeros, True, 0.0)
    if name == "constant":
        c = float(params.get("c", 1.0))
        return _Profile(lambda x: np.full(np.shape(x), c), _zeros, _zeros, True, None)
    if name == "linear":
        lam = float(params.get("lam", 1.0))
        return _Profile(lambda x: -lam * np.asarray(x, dtype=float), lambda x: np.full(np.shape(x), -lam), _zeros, True, None)
    if name == "bump":
        return _bump_profile(
            float(params.get("amplitude", 0.5)), float(params.get("center", 0.0)), float(params.get("width", 1.0))
        )
    if name == "sign_sqrt":
        kappa = float(params.get("kappa", 1.0))
        radius = float(params.get("radius", 1.0))

        def v(x):
            x = np.asarray(x, dtype=float)
            return kappa * np.sign(x) * np.sqrt(np.abs(x)) * cutoff(x / radius)

        return _Profile(v, None, None, False, 2.0 * radius)
    if name == "box":
        a = float(params.get("a", 0.0))
        b = float(params.get("b", 1.0))
        height = float(params.get("height", 1.0))

        def v(x):
            # midpoint convention at the jumps
            x = np.asarray(x, dtype=float)
            return height * (np.where((x > a) & (x < b), 1.0, 0.0) + 0.5 * ((x == a) | (x == b)))

        return _Profile(v, None, None, False, max(abs(a), abs(b)))
    raise KeyError(f"unknown drift {name!r}")


CATALOG = ("zero", "constant", "linear", "bump", "sign_sqrt", "box", "shifted")
CATALOG_PARAMS = {
    "zero": (),
    "constant": ("c",),
    "linear": ("lam",),
    "bump": ("amplitude", "center", "width"),
    "sign_sqrt": ("kappa", "radius"),
    "box": ("a", "b", "height"),
}


def _check_params(name: str, params: Mapping, allowed) -> None:
    extra = sorted(set(params) - set(allowed))
    if extra:
        raise TypeError(f"{name!r} takes {', '.join(allowed) or 'no parameters'}; got unexpected {', '.join(extra)}")


def stationary(name: str, value: Callable, d1: Callable | None = None, *, smooth: bool | None = None,
               support_bound: float | None = None, params: Mapping | None = None,
               joint: Callable | None = None) -> DriftField:
    """Deterministic time-independent drift b(x); f = g = 0."""
    return DriftField(
        name=name,
        eval=lambda t, x, path=None: value(x),
        deriv=None if d1 is None else (lambda t, x, path=None: d1(x)),
        f=lambda t, x, path=None: _zeros(x),
        g=lambda t, x, path=None: _zeros(x),
        smooth=(d1 is not None) if smooth is None else smooth,
        support_bound=support_bound,
        params=dict(params or {}),
        joint=None if joint is None else (lambda t, x, path=None: joint(x)),
    )


def catalog(name: str, **params) -> DriftField:
    """Build a named drift.

    ``shifted`` takes ``base=<name>`` plus the base's parameters and returns
    b0(x - B_t) with the semimartingale parts read off Ito's formula,
    f = b0''(x - B_t)/2 and g = -b0'(x - B_t).
    """
    if name != "shifted":
        if name in CATALOG_PARAMS:
            _check_params(name, params, CATALOG_PARAMS[name])
        p = _profile(name, params)
        return stationary(name, p.value, p.d1, smooth=p.smooth, support_bound=p.support, params=params,
                          joint=p.joint)

    base_name = params.get("base", "bump")
    base_params = {k: v for k, v in params.items() if k != "base"}
    if base_name in CATALOG_PARAMS:
        _check_params(base_name, base_params, CATALOG_PARAMS[base_name])
    base = _profile(base_name, base_params)

    def shift(t, x, path):
        return 0.0 if path is None else _align(path.value_at(t), x)

    def comove(h):
        return None if h is None else (lambda t, x, path=None: h(np.asarray(x, dtype=float) - shift(t, x, path)))

    f = None if base.d2 is None else comove(lambda y: 0.5 * base.d2(y))
    g = None if base.d1 is None else comove(lambda y: -base.d1(y))
    return DriftField(
        name=f"shifted_{base_name}",
        eval=comove(base.value),
        deriv=comove(base.d1),
        f=f,
        g=g,
        smooth=base.smooth,
        support_bound=None,
        time_dependent=True,
        comoving=True,
        params=dict(params),
        joint=comove(base.joint),
    )


# ---------------------------------------------------------------- primitives


def primitive(field_fn: Callable[[np.ndarray], np.ndarray], grid) -> np.ndarray:
    """Cumulative integral of ``field_fn`` from ``grid[0]`` to each node.

    Cell-midpoint rule: exact for piecewise-constant fields whose jumps sit
    on grid nodes, second order for smooth fields.
    """
    z = np.asarray(grid, dtype=float)
    mid = 0.5 * (z[:-1] + z[1:])
    vals = np.asarray(field_fn(mid), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("field has non-finite values on the quadrature grid")
    return np.concatenate(([0.0], np.cumsum(vals * np.diff(z))))


class _Tabulated:
    """z -> F(z - shift) from a primitive table; constant outside the table."""

    def __init__(self, z, F, slope, comoving: bool, smooth: bool):
        self.z, self.F = z, F
        self.comoving = comoving
        self.spline = CubicHermiteSpline(z, F, slope) if smooth else None

    def __call__(self, t, x, path=None):
        y = np.asarray(x, dtype=float)
        if self.comoving and path is not None:
            y = y - _align(path.value_at(t), y)
        y = np.clip(y, self.z[0], self.z[-1])
        if self.spline is not None:
            return self.spline(y)
        return np.interp(y, self.z, self.F)


@dataclass(frozen=True, eq=False)
class PrimitiveTriple:
    """Spatial antiderivatives of b, f, g taken from the left end of the grid."""

    btilde: Callable
    ftilde: Callable
    gtilde: Callable
    grid: np.ndarray = field(repr=False)


def primitive_triple(drift: DriftField, grid) -> PrimitiveTriple:
    if drift.time_dependent and not drift.comoving:
        raise NotImplementedError("primitives are tabulated for stationary or co-moving drifts only")
    if not drift.has_semimartingale_parts:
        raise MissingSemimartingaleParts(f"drift {drift.name!r} has no f/g decomposition")
    z = np.asarray(grid, dtype=float)
    out = []
    for part in (drift.eval, drift.f, drift.g):
        def h(y, part=part):
            return part(0.0, y, None)
        out.append(_Tabulated(z, primitive(h, z), h(z), drift.comoving, drift.smooth))
    return PrimitiveTriple(*out, grid=z)


# ---------------------------------------------------------------- Hypothesis check

NORM_NAMES = (
    "b_Linf_L1",  # sup over (omega, t) of int |b| dx
    "b_Linf",  # sup |b|
    "f_L1",  # sup over omega of int int |f| dx dt
    "g_L1t_Linfx",  # sup over omega of int sup_x |g| dt
    "g_Linf_L1",  # sup over (omega, t) of int |g| dx
)


@dataclass(frozen=True)
class HypothesisReport:
    norms: dict
    caps: dict
    passed: bool


def check_hypothesis(drift: DriftField, paths: BrownianPath | None, x_grid, caps: Mapping | None = None,
                     semimartingale: bool = True) -> HypothesisReport:
    """Estimate the five Hypothesis norms by quadrature over sampled paths.

    Spatial integrals use the midpoint rule on the cells of ``x_grid``; time
    integrals use the trapezoid rule on the path grid. Without ``paths`` the
    drift must be time independent and is evaluated once.
    """
    if semimartingale and not drift.has_semimartingale_parts:
        raise MissingSemimartingaleParts(f"drift {drift.name!r} has no f/g decomposition")
    z = np.asarray(x_grid, dtype=float)
    mid = 0.5 * (z[:-1] + z[1:])
    dz = np.diff(z)
    if paths is None:
        if drift.time_dependent:
            raise ValueError("time-dependent drift needs path samples")
        times = np.array([0.0])
        batch = ()
    else:
        times = paths.times
        batch = paths.batch_shape
    xs = np.broadcast_to(mid, batch + mid.shape)

    n_t = len(times)
    b_l1 = np.zeros((n_t,) + batch)
    b_sup = np.zeros((n_t,) + batch)
    f_l1 = np.zeros((n_t,) + batch)
    g_sup = np.zeros((n_t,) + batch)
    g_l1 = np.zeros((n_t,) + batch)
    for k, t in enumerate(times):
        b = np.abs(drift.eval(t, xs, paths))
        b_l1[k] = (b * dz).sum(axis=-1)
        b_sup[k] = b.max(axis=-1)
        if semimartingale:
            f = np.abs(drift.f(t, xs, paths))
            g = np.abs(drift.g(t, xs, paths))
            f_l1[k] = (f * dz).sum(axis=-1)
            g_sup[k] = g.max(axis=-1)
            g_l1[k] = (g * dz).sum(axis=-1)

    norms = {"b_Linf_L1": float(b_l1.max()), "b_Linf": float(b_sup.max())}
    if semimartingale:
        if paths is None:
            # time independent: f = g = 0 contributes nothing, but report the quadrature anyway
            f_time, g_time = f_l1[0], g_sup[0]
        else:
            f_time = time_integral(np.moveaxis(f_l1, 0, -1), paths.grid)
            g_time = time_integral(np.moveaxis(g_sup, 0, -1), paths.grid)
        norms["f_L1"] = float(np.max(f_time))
        norms["g_L1t_Linfx"] = float(np.max(g_time))
        norms["g_Linf_L1"] = float(g_l1.max())
    caps = dict(caps or {})
    passed = all(math.isfinite(v) for v in norms.values()) and all(
        norms[k] <= float(c) for k, c in caps.items() if k in norms
    )
    return HypothesisReport(norms, caps, passed)
