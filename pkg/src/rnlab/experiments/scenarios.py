"""The scenarios behind the CLI subcommands.

Each ``run_*`` takes an :class:`ExperimentConfig`, validates it, and returns
an :class:`ExperimentReport`. Sweeps over eps share one Brownian realization:
the path is sampled on the coarsest level's grid and refined by bridge
sampling for the finer levels, so coarse values are reused exactly.
"""
from __future__ import annotations

import math
import time
from contextlib import contextmanager

import numpy as np
from scipy.integrate import quad, solve_ivp

from rnlab.brownian import BrownianPath, TimeGrid, refine, sample_paths
from rnlab.drift import NORM_NAMES, DriftField, _profile, catalog, check_hypothesis, mollify
from rnlab.errors import ConfigError
from rnlab.estimates import (
    blocked_map,
    commutator_decay_study,
    estimate_inverse_jacobian_moment,
    inverse_jacobian_samples,
    iwk_inverse_jacobian_samples,
    l2_bound_check,
    observed_order,
    regression_slope,
)
from rnlab.experiments.config import ExperimentConfig
from rnlab.experiments.report import ExperimentReport
from rnlab.flow import solve_forward
from rnlab.spde import (
    DensityField,
    bump_test_function,
    initial_datum,
    mollify_initial,
    relative_mass_drift,
    solve_by_characteristics,
    spatial_grid,
    trapezoid_weights,
    weak_residual,
)

QUARTERS = (0.25, 0.5, 1.0)


@contextmanager
def _timed(report: ExperimentReport, key: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        report.timings[key] = report.timings.get(key, 0.0) + time.perf_counter() - t0


# ---------------------------------------------------------------- shared plumbing


def sweep_levels(cfg: ExperimentConfig) -> list[tuple[float, TimeGrid]]:
    """(eps, time grid) per level, coarsest eps first.

    ``cfg.dt`` is the step at the smallest eps; a level at eps uses
    dt * (eps / eps_min)^2 when that still divides T, so dt / eps^2 stays
    fixed across the sweep.
    """
    eps = sorted(cfg.epsilons, reverse=True)
    if not eps:
        return [(None, TimeGrid(0.0, cfg.T, cfg.n_steps))]
    eps_min = eps[-1]
    out = []
    for e in eps:
        ratio = (e / eps_min) ** 2
        n = cfg.n_steps / ratio
        n = int(round(n)) if abs(n - round(n)) < 1e-9 and round(n) >= 1 else cfg.n_steps
        out.append((e, TimeGrid(0.0, cfg.T, n)))
    return out


def path_chain(grids: list[TimeGrid], seed: int, n_paths: int) -> list[BrownianPath]:
    """One realization seen on successively finer grids."""
    p = sample_paths(grids[0], seed, n_paths)
    out = [p]
    for g in grids[1:]:
        factor, rem = divmod(g.n_steps, p.grid.n_steps)
        if rem or factor < 1:
            raise ConfigError(f"time grids with {p.grid.n_steps} and {g.n_steps} steps are not nested")
        if factor > 1:
            p = refine(p, factor)
        out.append(p)
    return out


def flow_drift(drift: DriftField, eps: float | None) -> DriftField:
    """The drift the flow is actually integrated with."""
    if drift.deriv is not None:
        return drift
    if eps is None:
        raise ConfigError(f"drift {drift.name!r} is rough; give an eps to mollify it")
    return mollify(drift, eps)


def quarter_stride(grid: TimeGrid) -> int:
    if grid.n_steps % 4:
        raise ConfigError(f"{grid.n_steps} steps cannot record T/4, T/2 and T")
    return grid.n_steps // 4


def quarter_rows(u: DensityField, T: float) -> list[int]:
    return [int(np.argmin(np.abs(u.times - q * T))) for q in QUARTERS]


def _row(paths: BrownianPath, i: int) -> BrownianPath:
    return BrownianPath(paths.grid, paths.values[i : i + 1], paths.seed)


def _sem(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.std(a, ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0


def parse_test_functions(text: str) -> list[tuple[float, float]]:
    out = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        try:
            c, w = item.split(":")
            out.append((float(c), float(w)))
        except ValueError:
            raise ConfigError(f"test function {item!r} is not center:width") from None
    if not out:
        raise ConfigError("no test functions given")
    return out


# ---------------------------------------------------------------- simulate


def run_simulate(cfg: ExperimentConfig) -> ExperimentReport:
    """Solve the density on ``n_paths`` paths; report mass drift and weak residual."""
    cfg.validate()
    rep = ExperimentReport("simulate", cfg)
    eps = min(cfg.epsilons) if cfg.epsilons else None
    drift = flow_drift(cfg.build_drift(), eps)
    u0 = cfg.build_initial()
    x = spatial_grid(cfg.L, cfg.dx)
    grid = TimeGrid(0.0, cfg.T, cfg.n_steps)
    paths = sample_paths(grid, cfg.seed, cfg.n_paths)
    every = cfg.opt_int("record_every", 1)
    chunk = cfg.opt_int("chunk", 8)
    phi = bump_test_function(cfg.opt_float("phi_center", 0.0), cfg.opt_float("phi_width", cfg.L / 2))
    scale = float(trapezoid_weights(x) @ np.abs(u0(x))) * float(np.max(np.abs(phi.dphi(x))))

    def run(start):
        sub = BrownianPath(grid, paths.values[start : start + chunk], paths.seed)
        u = solve_by_characteristics(drift, u0, sub, x, record_every=every, epsilon=eps)
        res = np.max(np.abs(weak_residual(u, drift, phi).residual), axis=0) if every == 1 else None
        return relative_mass_drift(u), res, (u if start == 0 else None)

    with _timed(rep, "solve"):
        parts = blocked_map(run, list(range(0, cfg.n_paths, chunk)), cfg.threads)
    mass = np.concatenate([p[0] for p in parts])
    mt = rep.new_table("mass", "path", "relative_mass_drift")
    for i, m in enumerate(mass):
        mt.add(i, float(m))
    if every == 1:
        res = np.concatenate([p[1] for p in parts])
        wt = rep.new_table("weak_residual", "path", "max_abs", "relative")
        for i, r in enumerate(res):
            wt.add(i, float(r), float(r / scale))
    first = parts[0][2]
    rep.fields["density"] = DensityField(first.times, first.time_index, x, first.values[:, 0, :], paths[0], eps)
    tol = cfg.tol("mass_drift", 1e-3)
    rep.add_check("mass_conservation", np.all(mass < tol), f"max relative drift {np.max(mass):.3e} < {tol:g}")
    return rep


# ---------------------------------------------------------------- lemma sweep


def run_lemma_sweep(cfg: ExperimentConfig) -> ExperimentReport:
    """Inverse-Jacobian moments over the eps sweep, plus the OU closed form."""
    cfg.validate()
    if cfg.n_paths < 100:
        raise ConfigError("lemma-sweep needs n_paths >= 100")
    rep = ExperimentReport("lemma-sweep", cfg)
    drift = cfg.build_drift()
    s = cfg.opt_float("s", 0.0)
    t = cfg.opt_float("t", cfg.T)
    xs = cfg.opt_list("xs", (0.0, 0.5, 1.0))
    tab = rep.new_table("moments", "quantity", "epsilon", "t", "mean", "std_error", "n")
    levels = sweep_levels(cfg) if drift.deriv is None else [(None, TimeGrid(0.0, cfg.T, cfg.n_steps))]
    if t != cfg.T:
        raise ConfigError("lemma-sweep integrates up to t = T; set T instead")

    def run(job):
        (eps, grid), x = job
        b = flow_drift(drift, eps)
        norm_grid = np.arange(-cfg.L, cfg.L + 0.5 * grid_spacing(eps), grid_spacing(eps))
        return estimate_inverse_jacobian_moment(b, s, t, x, cfg.n_paths, grid.dt, seed=cfg.seed,
                                                norm_grid=norm_grid)

    jobs = [(lv, x) for x in xs for lv in levels]
    with _timed(rep, "moments"):
        est = blocked_map(run, jobs, cfg.threads)
    for ((eps, _), x), m in zip(jobs, est):
        tab.add(f"inv_jacobian[s={s:g},x={x:g}]", eps, m.t, m.mean, m.std_error, m.n_samples)

    finite = all(math.isfinite(m.mean) and not m.flagged for m in est)
    bound = max(m.mean + 3 * m.std_error for m in est)
    rep.add_check("bounded", finite, f"all estimates <= {bound:.6g} (max mean + 3 s.e.)")
    tab.add("bound", None, t, bound, 0.0, len(est))
    nt = rep.new_table("norms", "epsilon", *NORM_NAMES)
    for ((eps, _), _x), m in zip(jobs[: len(levels)], est[: len(levels)]):
        nt.add(eps, *(m.bound_components.get(k) for k in NORM_NAMES))

    if len(levels) > 1:
        trend = rep.new_table("trend", "x", "slope", "slope_std_error")
        for i, x in enumerate(xs):
            ms = est[i * len(levels) : (i + 1) * len(levels)]
            slope, se = regression_slope(np.log([m.epsilon for m in ms]), np.log([m.mean for m in ms]),
                                         [m.std_error / m.mean for m in ms])
            trend.add(x, slope, se)
            rep.add_check(f"no_blowup_trend[x={x:g}]", slope >= -3 * se,
                          f"slope of log E[1/J] vs log eps = {slope:.4f} +/- {se:.4f}")

    limit_dt = cfg.opt_float("limit_dt", 0.0)
    if drift.deriv is None and not drift.time_dependent and limit_dt > 0:
        # eps -> 0 value through the primitive identity, no mollification
        lim = rep.new_table("limit", "x", "mean", "std_error", "n", "dt")
        with _timed(rep, "limit"):
            for x in xs:
                inv = iwk_inverse_jacobian_samples(drift, t, x, cfg.n_paths, limit_dt, seed=cfg.seed,
                                                   threads=cfg.threads)
                lim.add(x, float(np.mean(inv)), _sem(inv), cfg.n_paths, limit_dt)

    if str(cfg.opt("ou", "true")).lower() == "true":
        with _timed(rep, "ou"):
            _ou_oracle(cfg, rep, tab)
    if cfg.opt_int("l2_paths", 0) > 0:
        with _timed(rep, "l2"):
            _l2_table(cfg, rep, drift, levels)
    return rep


def grid_spacing(eps: float | None) -> float:
    return 1e-3 if eps is None else min(1e-3, eps / 16)


def _ou_oracle(cfg: ExperimentConfig, rep: ExperimentReport, tab) -> None:
    lam = cfg.opt_float("ou_lambda", 1.0)
    n = cfg.opt_int("ou_samples", 10_000)
    dt = cfg.opt_float("ou_dt", 1e-3)
    ou = catalog("linear", lam=lam)
    inv = inverse_jacobian_samples(ou, 0.0, 1.0, 0.0, n, dt, seed=cfg.seed, threads=cfg.threads)
    exact = math.exp(lam)
    mean, se = float(np.mean(inv)), _sem(inv)
    tab.add("ou_inv_jacobian", None, 1.0, mean, se, n)
    spread = float(np.max(np.abs(inv - exact)) / exact)
    rep.add_check("ou_jacobian_exact", spread <= 1e-12, f"max |1/J - e^lam| / e^lam = {spread:.2e}")
    allow = 3 * se + cfg.tol("ou_bias", 2e-3)
    rep.add_check("ou_oracle", abs(mean - exact) <= allow, f"|{mean:.6f} - {exact:.6f}| <= {allow:.2e}")


def _l2_table(cfg: ExperimentConfig, rep: ExperimentReport, drift, levels) -> None:
    n = cfg.opt_int("l2_paths", 0)
    x = spatial_grid(cfg.L, cfg.dx)
    u0 = cfg.build_initial()
    grids = [g for _, g in levels]
    chain = path_chain(grids, cfg.seed, n)
    tab = rep.new_table("l2", "epsilon", "t", "mean", "std_error", "n", "ratio")
    bound = 0.0
    for (eps, grid), p in zip(levels, chain):
        res = l2_bound_check(drift, u0, [eps], p, x, record_every=quarter_stride(grid))
        for r in res.rows:
            tab.add(r.epsilon, r.t, r.mean, r.std_error, r.n, r.ratio)
        bound = max(bound, res.bound)
    rep.add_check("l2_bounded", math.isfinite(bound), f"max ratio {bound:.6g}")


# ---------------------------------------------------------------- commutator


def run_commutator(cfg: ExperimentConfig) -> ExperimentReport:
    """||R_eps|| over the eps list on one fixed set of solution samples."""
    drift = cfg.build_drift()
    solve_eps = cfg.opt_float("solve_epsilon", 0.125) if drift.deriv is None else None
    cfg.validate(mollify_eps=solve_eps)
    if not cfg.epsilons:
        raise ConfigError("commutator needs an eps list")
    rep = ExperimentReport("commutator", cfg)
    x = spatial_grid(cfg.L, cfg.dx)
    grid = TimeGrid(0.0, cfg.T, cfg.n_steps)
    paths = sample_paths(grid, cfg.seed, cfg.n_paths)
    every = cfg.opt_int("record_every", max(1, cfg.n_steps // 8))
    with _timed(rep, "solve"):
        u = solve_by_characteristics(flow_drift(drift, solve_eps), cfg.build_initial(), paths, x, record_every=every)
    with _timed(rep, "commutator"):
        study = commutator_decay_study(drift, u, cfg.epsilons, cfg.threads)
    tab = rep.new_table("commutator", "epsilon", "l2_norm", "interior_l2")
    for r in study.records:
        tab.add(r.epsilon, r.l2_norm, r.interior_l2)
    norms = study.norms
    if np.all(norms <= cfg.tol("zero", 1e-14)):
        rep.add_check("vanishes", True, f"max norm {np.max(norms):.2e}")
        return rep
    rep.add_check("strictly_decreasing", study.strictly_decreasing, " > ".join(f"{v:.4g}" for v in norms))
    limit = cfg.tol("ratio", 0.5)
    rep.add_check("final_over_initial", study.ratio < limit, f"{study.ratio:.4g} < {limit:g}")
    if drift.smooth:
        rate = cfg.tol("min_rate", 1.0)
        rep.add_check("smooth_rate", study.rate >= rate, f"observed order {study.rate:.3f} >= {rate:g}")
    return rep


# ---------------------------------------------------------------- selection


def sign_sqrt_branches(kappa: float, radius: float, T: float, dt: float) -> dict:
    """Residual max_k |(x_{k+1} - x_k)/dt - b(x_k)| of the three ODE branches through 0."""
    grid = TimeGrid.from_dt(0.0, T, dt)
    t = grid.nodes
    b = _profile("sign_sqrt", {"kappa": kappa, "radius": radius}).value
    out = {}
    for name, xs in (("zero", np.zeros_like(t)), ("plus", (kappa * t / 2) ** 2), ("minus", -((kappa * t / 2) ** 2))):
        out[name] = (float(np.max(np.abs(np.diff(xs) / dt - b(xs[:-1])))), float(xs[-1]))
    return out


def _l1_distances(a: DensityField, b: DensityField, x, rows_a, rows_b):
    w = trapezoid_weights(x)
    return [np.abs(a.values[ra] - b.values[rb]) @ w for ra, rb in zip(rows_a, rows_b)]


def run_selection_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Cauchy-in-eps tables with and without noise, plus the ODE branches at 0."""
    cfg.validate()
    if len(cfg.epsilons) < 2:
        raise ConfigError("selection needs at least two eps levels")
    rep = ExperimentReport("selection", cfg)
    drift = cfg.build_drift()
    u0 = cfg.build_initial()
    x = spatial_grid(cfg.L, cfg.dx)
    levels = sweep_levels(cfg)
    grids = [g for _, g in levels]
    noisy_paths = path_chain(grids, cfg.seed, cfg.n_paths)
    still = [BrownianPath(g, np.zeros((1, g.n_steps + 1)), 0) for g in grids]

    def solve(job):
        k, paths = job
        eps, grid = levels[k]
        b = mollify(drift, eps)
        return solve_by_characteristics(b, mollify_initial(u0, eps, x), paths, x,
                                        record_every=quarter_stride(grid), epsilon=eps)

    summary = rep.new_table("distances", "mode", "eps_coarse", "eps_fine", "t", "mean_l1", "std_error")
    factors = rep.new_table("factors", "mode", "eps_coarse", "eps_fine", "distance", "factor")
    decay = cfg.tol("decay_factor", 1.5)
    for mode, chain in (("noisy", noisy_paths), ("deterministic", still)):
        with _timed(rep, mode):
            sols = blocked_map(solve, list(enumerate(chain)), cfg.threads)
        prev = None
        ok = True
        for k in range(len(levels) - 1):
            a, b = sols[k], sols[k + 1]
            d = _l1_distances(a, b, x, quarter_rows(a, cfg.T), quarter_rows(b, cfg.T))
            for q, dq in zip(QUARTERS, d):
                summary.add(mode, levels[k][0], levels[k + 1][0], q * cfg.T, float(np.mean(dq)), _sem(dq))
            dist = max(float(np.mean(dq)) for dq in d)
            factor = None if prev is None else prev / dist if dist > 0 else math.inf
            factors.add(mode, levels[k][0], levels[k + 1][0], dist, factor)
            if factor is not None and factor < decay:
                ok = False
            prev = dist
        if mode == "noisy":
            rep.add_check("noisy_cauchy", ok, f"every successive L1 distance shrinks by >= {decay:g}")

    if cfg.drift == "sign_sqrt":
        kappa = float(cfg.drift_params.get("kappa", 1.0))
        radius = float(cfg.drift_params.get("radius", 1.0))
        dts = sorted(cfg.opt_list("branch_dts", (1e-2, 1e-3, 1e-4)), reverse=True)
        br = rep.new_table("branches", "branch", "dt", "residual", "x_T")
        res = {}
        for dt in dts:
            for name, (r, xT) in sign_sqrt_branches(kappa, radius, cfg.T, dt).items():
                br.add(name, dt, r, xT)
                res.setdefault(name, []).append(r)
        tol = cfg.tol("branch_residual", 1e-3)
        ok = all(all(np.diff(v) <= 0) and v[-1] <= tol for v in res.values())
        rep.add_check("branches_solve_ode", ok, f"residuals nonincreasing, final <= {tol:g}")
        gap = 2 * (kappa * cfg.T / 2) ** 2
        rep.add_check("branches_distinct", gap > 0, f"x_plus(T) - x_minus(T) = {gap:.6g}")
    return rep


# ---------------------------------------------------------------- stability


def run_stability(cfg: ExperimentConfig, sequence: str | None = None) -> ExperimentReport:
    """|int (u^n - u) phi| at T/4, T/2, T for an approximating initial sequence."""
    cfg.validate()
    seq = sequence or str(cfg.opt("sequence", "bump"))
    if seq not in ("bump", "mollified", "constant"):
        raise ConfigError(f"unknown initial sequence {seq!r}")
    rep = ExperimentReport("stability", cfg)
    base = cfg.build_drift()
    eps = min(cfg.epsilons) if cfg.epsilons else None
    drift = flow_drift(base, eps)
    u0 = cfg.build_initial()
    x = spatial_grid(cfg.L, cfg.dx)
    grid = TimeGrid(0.0, cfg.T, cfg.n_steps)
    paths = sample_paths(grid, cfg.seed, cfg.n_paths)
    ns = [int(n) for n in cfg.opt_list("ns", (2, 4, 8, 16))]
    phis = [bump_test_function(c, w) for c, w in parse_test_functions(cfg.opt("test_functions", "0:1, 0.5:1.5"))]
    pc, pw = cfg.opt_float("perturb_center", 0.0), cfg.opt_float("perturb_width", 1.0)
    bump = initial_datum("bump", center=pc, width=pw)
    stride = quarter_stride(grid)
    w = trapezoid_weights(x)

    def initial(n):
        if n is None or seq == "constant":
            return u0
        if seq == "bump":
            return lambda y: u0(y) + bump(y) / n
        return mollify_initial(u0, 1.0 / n, x)

    pairing = str(cfg.opt("pairing", "lagrangian"))
    if pairing not in ("lagrangian", "eulerian"):
        raise ConfigError(f"unknown pairing {pairing!r}")

    if pairing == "lagrangian":
        # int u(t) phi dx = int u0(y) phi(X_t(y)) dy; one flow serves every n
        with _timed(rep, "flow"):
            sol = solve_forward(drift, paths, 0.0, x, record_every=stride)
        X = [sol.trajectories[r] for r in (int(np.argmin(np.abs(sol.times - q * cfg.T))) for q in QUARTERS)]
        tests = np.stack([np.stack([phi.phi(Xq) for phi in phis]) for Xq in X])  # (t, phi, path, x)

        def solve(n):
            return tests @ (w * initial(n)(x))
    else:
        def solve(n):
            u = solve_by_characteristics(drift, initial(n), paths, x, record_every=stride)
            rows = quarter_rows(u, cfg.T)
            return np.stack([[u.values[r] @ (w * phi.phi(x)) for phi in phis] for r in rows])  # (t, phi, path)

    with _timed(rep, "pairings"):
        out = blocked_map(solve, [None] + ns, cfg.threads)
    ref, rest = out[0], out[1:]
    closed = None
    if base.name == "zero" and seq == "bump":
        closed = _translation_oracle(bump, phis, paths, grid)
    tab = rep.new_table("differences", "n", "t", "phi", "mean_abs_diff", "std_error", "closed_form")
    worst_gap = 0.0
    ok = True
    for j, phi in enumerate(phis):
        for i, q in enumerate(QUARTERS):
            prev = None
            for n, vals in zip(ns, rest):
                d = np.abs(vals[i, j] - ref[i, j])
                cf = None if closed is None else closed[i, j] / n
                if cf is not None:
                    worst_gap = max(worst_gap, float(np.max(np.abs(d - cf))))
                tab.add(n, q * cfg.T, phi.name, float(np.mean(d)), _sem(d), None if cf is None else float(np.mean(cf)))
                if prev is not None and not np.mean(d) < prev and seq != "constant":
                    ok = False
                prev = float(np.mean(d))
    if seq == "constant":
        diff = max(float(np.max(np.abs(v - ref))) for v in rest)
        rep.add_check("identical_sequence", diff == 0.0, f"max difference {diff:.2e}")
    else:
        rep.add_check("decreasing_in_n", ok, f"over n = {', '.join(map(str, ns))}")
    if closed is not None:
        tol = cfg.tol("quadrature", 1e-9)
        rep.add_check("closed_form", worst_gap <= tol, f"max |difference - closed form| = {worst_gap:.2e}")
    return rep


def _translation_oracle(bump, phis, paths: BrownianPath, grid: TimeGrid) -> np.ndarray:
    """|int bump(x - B_t) phi(x) dx| per (time, phi, path), by adaptive quadrature."""
    out = np.zeros((len(QUARTERS), len(phis), len(paths)))
    for i, q in enumerate(QUARTERS):
        k = grid.index_of(q * grid.t_end)
        for j, phi in enumerate(phis):
            lo, hi = phi.support
            for p in range(len(paths)):
                shift = float(paths.values[p, k])
                val = quad(lambda y: float(bump(y - shift)) * float(phi.phi(y)), lo, hi,
                           epsabs=1e-13, epsrel=1e-12, limit=200)[0]
                out[i, j, p] = abs(val)
    return out


# ---------------------------------------------------------------- negative example


def deterministic_density(b0: DriftField, u0, t: float, q) -> np.ndarray:
    """v(t, q) for dv/dt + (b0 v)' = 0 by backward characteristics.

    Integrates y' = -b0(y), l' = b0'(y) from y(0) = q with a high-order
    adaptive scheme; v = u0(y(t)) exp(-l(t)).
    """
    q = np.asarray(q, dtype=float)
    if t == 0:
        return u0(q)
    n = q.size

    def rhs(_, z):
        y = z[:n]
        return np.concatenate((-b0.eval(0.0, y), b0.deriv(0.0, y)))

    sol = solve_ivp(rhs, (0.0, t), np.concatenate((q.ravel(), np.zeros(n))), method="DOP853",
                    rtol=1e-12, atol=1e-13)
    if not sol.success:
        raise RuntimeError(f"reference ODE solve failed: {sol.message}")
    y, ell = sol.y[:n, -1], sol.y[n:, -1]
    return (u0(y) * np.exp(-ell)).reshape(q.shape)


def _negative_base(cfg: ExperimentConfig):
    params = dict(cfg.drift_params)
    if cfg.drift == "shifted":
        name = params.pop("base", "bump")
    else:
        name = cfg.drift
    return name, params


def run_negative_example(cfg: ExperimentConfig) -> ExperimentReport:
    """Noisy solution with drift b0(x - B_t) against v(t, x - B_t)."""
    cfg.validate()
    rep = ExperimentReport("negative-example", cfg)
    base_name, params = _negative_base(cfg)
    b0 = catalog(base_name, **params)
    if b0.deriv is None:
        raise ConfigError("the negative example needs a smooth base drift")
    drift = catalog("shifted", base=base_name, **params)
    u0 = cfg.build_initial()
    x = spatial_grid(cfg.L, cfg.dx)
    n_levels = cfg.opt_int("levels", 3)
    grids = [TimeGrid(0.0, cfg.T, cfg.n_steps // 2 ** (n_levels - 1 - k)) for k in range(n_levels)]
    if any(g.n_steps * 2 ** (n_levels - 1 - k) != cfg.n_steps for k, g in enumerate(grids)):
        raise ConfigError(f"{cfg.n_steps} steps cannot be halved {n_levels - 1} times")
    chain = path_chain(grids, cfg.seed, cfg.n_paths)
    u0_sup = float(np.max(np.abs(u0(x))))

    # reference depends on the path only through B at the recorded times
    finest = chain[-1]
    ref = {}
    with _timed(rep, "reference"):
        for q in QUARTERS:
            k = finest.grid.index_of(q * cfg.T)
            shifts = finest.values[:, k]
            ref[q] = np.stack([deterministic_density(b0, u0, q * cfg.T, x - s) for s in shifts])

    def solve(p):
        return solve_by_characteristics(drift, u0, p, x, record_every=quarter_stride(p.grid))

    with _timed(rep, "solve"):
        sols = blocked_map(solve, chain, cfg.threads)
    tab = rep.new_table("mismatch", "dt", "sup_mismatch", "relative")
    mism = []
    for g, u in zip(grids, sols):
        rows = quarter_rows(u, cfg.T)
        m = max(float(np.max(np.abs(u.values[r] - ref[q]))) for r, q in zip(rows, QUARTERS))
        mism.append(m)
        tab.add(g.dt, m, m / u0_sup)
    dts = [g.dt for g in grids]
    rate = observed_order(dts, mism) if all(m > 0 for m in mism) else math.inf
    exact = all(m <= 1e-12 * u0_sup for m in mism)
    rep.add_check("mismatch_decays", exact or all(np.diff(mism) < 0), " > ".join(f"{m:.3e}" for m in mism))
    tol = cfg.tol("final_mismatch", 1e-2)
    rep.add_check("final_mismatch", mism[-1] < tol * u0_sup, f"{mism[-1] / u0_sup:.3e} < {tol:g} of sup|u0|")
    min_rate = cfg.tol("min_rate", 0.5)
    rep.add_check("rate", exact or rate >= min_rate, f"observed order {rate:.3f} >= {min_rate:g}")

    with _timed(rep, "semimartingale"):
        _semimartingale_identity(rep, drift, chain, cfg)
    if base_name == "bump":
        with _timed(rep, "norms"):
            _roughening_norms(rep, cfg, params, chain[0])
    return rep


def _semimartingale_identity(rep, drift: DriftField, chain, cfg) -> None:
    """max_t |b(t,x) - b(0,x) - int f ds - int g dB| at a few x, Ito sums."""
    xs = np.array(cfg.opt_list("identity_points", (-0.5, 0.0, 0.5)))
    tab = rep.new_table("semimartingale", "dt", "max_error")
    errs = []
    for p in chain:
        path = _row(p, 0)
        X = np.broadcast_to(xs, (1, len(xs)))
        t = path.times
        b = np.stack([drift.eval(tk, X, path) for tk in t])
        f = np.stack([drift.f(tk, X, path) for tk in t])
        g = np.stack([drift.g(tk, X, path) for tk in t])
        dB = path.increments[0][:, None, None]
        integral = np.concatenate((np.zeros_like(b[:1]), np.cumsum(f[:-1] * path.grid.dt + g[:-1] * dB, axis=0)))
        err = float(np.max(np.abs(b - b[0] - integral)))
        errs.append(err)
        tab.add(path.grid.dt, err)
    rep.add_check("semimartingale_identity", errs[-1] <= errs[0], " -> ".join(f"{e:.3e}" for e in errs))


def _roughening_norms(rep, cfg, params, paths: BrownianPath) -> None:
    widths = sorted(cfg.opt_list("roughen_widths", (1.0, 0.5, 0.25, 0.125)), reverse=True)
    tab = rep.new_table("roughening", "width", *NORM_NAMES)
    sample = BrownianPath(paths.grid, paths.values[: min(4, len(paths))], paths.seed)
    for w in widths:
        p = dict(params, width=w)
        d = catalog("shifted", base="bump", **p)
        z = np.arange(-cfg.L, cfg.L + w / 64, w / 32)
        norms = check_hypothesis(d, sample, z).norms
        tab.add(w, *(norms[k] for k in NORM_NAMES))


# ---------------------------------------------------------------- hypothesis check


def run_hypothesis_check(cfg: ExperimentConfig) -> ExperimentReport:
    """Hypothesis norms of the drift and of its mollifications, against caps."""
    cfg.validate()
    rep = ExperimentReport("hypothesis-check", cfg)
    drift = cfg.build_drift()
    caps = {k: v for k, v in cfg.tolerances.items() if k in NORM_NAMES}
    grid = TimeGrid(0.0, cfg.T, cfg.n_steps)
    paths = sample_paths(grid, cfg.seed, cfg.n_paths) if drift.time_dependent else None
    variants = [(None, drift)] + [(e, mollify(drift, e)) for e in sorted(cfg.epsilons, reverse=True)]
    tab = rep.new_table("norms", "variant", "epsilon", *NORM_NAMES, "passed")

    def run(v):
        eps, d = v
        h = cfg.dx if eps is None else min(cfg.dx, eps / 8)
        z = np.arange(-cfg.L, cfg.L + h / 2, h)
        return check_hypothesis(d, paths, z, caps=caps)

    with _timed(rep, "norms"):
        reports = blocked_map(run, variants, cfg.threads)
    for (eps, d), r in zip(variants, reports):
        tab.add(d.name, eps, *(r.norms.get(k) for k in NORM_NAMES), r.passed)
        rep.add_check(f"hypothesis[{d.name}]", r.passed,
                      ", ".join(f"{k}={r.norms[k]:.4g}" for k in NORM_NAMES if k in r.norms))
    return rep


SCENARIO_RUNNERS = {
    "simulate": run_simulate,
    "lemma-sweep": run_lemma_sweep,
    "commutator": run_commutator,
    "selection": run_selection_experiment,
    "stability": run_stability,
    "negative-example": run_negative_example,
    "hypothesis-check": run_hypothesis_check,
}
