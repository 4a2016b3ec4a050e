"""The twelve acceptance criteria, each at its stated tolerance and time budget.

Run alone with ``pytest tests/test_acceptance.py -v``; a summary with one
PASS/FAIL line per criterion is printed at the end of the session.
"""
from __future__ import annotations

import math
import time

import numpy as np
import pytest
from small_configs import SMALL

from rnlab.brownian import BrownianPath, TimeGrid, refine, sample_paths
from rnlab.drift import catalog, primitive_triple
from rnlab.estimates import estimate_inverse_jacobian_moment, observed_order
from rnlab.experiments import (
    parse_config,
    run_commutator,
    run_lemma_sweep,
    run_negative_example,
    run_selection_experiment,
    run_stability,
)
from rnlab.experiments.cli import default_config_text, main
from rnlab.experiments.config import SCENARIOS
from rnlab.flow import exponential_martingale, jacobian_iwk, jacobian_variational, solve_forward
from rnlab.spde import (
    bump_test_function,
    initial_datum,
    mollify_initial,
    relative_mass_drift,
    solve_by_characteristics,
    spatial_grid,
    weak_residual,
)

GAUSS = initial_datum("gaussian", width=0.5)


def _default(scenario):
    return parse_config(default_config_text(scenario), scenario)


def test_c01_zero_drift_exactness(criterion):
    start = time.perf_counter()
    paths = sample_paths(TimeGrid(0.0, 1.0, 200), 1, 4)
    x = spatial_grid(5.0, 0.01)
    zero = catalog("zero")
    sol = solve_forward(zero, paths, 0.0, x, record_every=20)
    flow_err = max(np.max(np.abs(X - (x + paths.values[:, k, None]))) for k, X in zip(sol.time_index, sol.trajectories))
    u0 = mollify_initial(GAUSS, 0.25, x)
    u = solve_by_characteristics(zero, u0, paths, x, record_every=20)
    dens_err = max(np.max(np.abs(row - u0(x - paths.values[:, k, None]))) for k, row in zip(u.time_index, u.values))
    m = estimate_inverse_jacobian_moment(zero, 0.0, 1.0, 0.3, 1000, 0.01, norm_grid=np.linspace(-5, 5, 101))
    elapsed = time.perf_counter() - start
    ok = flow_err < 1e-12 and dens_err < 1e-12 and m.mean == 1.0 and m.std_error == 0.0
    assert criterion(1, "zero-drift exactness", ok,
                     f"flow {flow_err:.1e}, density {dens_err:.1e}, E[1/J] = {m.mean!r} +/- {m.std_error!r}",
                     elapsed, 1.0)


def test_c02_ornstein_uhlenbeck_oracle(criterion):
    start = time.perf_counter()
    lam = 1.0
    d = catalog("linear", lam=lam)
    paths = sample_paths(TimeGrid(0.0, 1.0, 1000), 2, 200)
    J = jacobian_variational(solve_forward(d, paths, 0.0, np.array([-1.0, 0.0, 1.0])))[-1]
    spread = float(np.max(np.abs(J / math.exp(-lam) - 1)))
    m = estimate_inverse_jacobian_moment(d, 0.0, 1.0, 0.5, 10_000, 1e-3, seed=2, norm_grid=np.linspace(-5, 5, 101))
    elapsed = time.perf_counter() - start
    gap = abs(m.mean - math.e)
    ok = spread <= 1e-12 and gap <= 3 * m.std_error + 2e-3
    assert criterion(2, "Ornstein-Uhlenbeck oracle", ok,
                     f"J spread {spread:.1e}, |{m.mean:.6f} - e| = {gap:.2e} <= {3 * m.std_error + 2e-3:.2e}",
                     elapsed, 30.0)


def test_c03_jacobian_cross_validation(criterion):
    start = time.perf_counter()
    drifts = {
        "zero": catalog("zero"),
        "constant": catalog("constant", c=0.5),
        "linear": catalog("linear", lam=0.1),
        "bump": catalog("bump", amplitude=0.1),
        "shifted": catalog("shifted", base="bump", amplitude=0.1),
    }
    z = np.linspace(-12, 12, 24001)
    coarse = sample_paths(TimeGrid(0.0, 1.0, 100), 5, 256)
    levels = [coarse, refine(coarse, 5), refine(coarse, 10)]  # dt = 1e-2, 2e-3, 1e-3
    dts = [p.grid.dt for p in levels]
    x = np.linspace(-2, 2, 41)
    ok, parts = True, []
    for name, d in drifts.items():
        pr = primitive_triple(d, z)
        errs = []
        for p in levels:
            r = jacobian_iwk(solve_forward(d, p, 0.0, x), d, pr)
            errs.append(float(np.sqrt(np.mean(r.relative_error**2))))
        if max(errs) < 1e-12:
            # the identity is exact to roundoff, there is no order to measure
            parts.append(f"{name} exact ({max(errs):.0e})")
            continue
        order = observed_order(dts, errs)
        ok &= order >= 0.4 and errs[-1] < 1e-2
        parts.append(f"{name} order {order:.2f} final {errs[-1]:.1e}")
    elapsed = time.perf_counter() - start
    assert criterion(3, "Jacobian cross-validation", ok, "; ".join(parts), elapsed, 60.0)


def test_c04_exponential_martingale(criterion):
    start = time.perf_counter()
    paths = sample_paths(TimeGrid(0.0, 1.0, 100), 4, 100_000)
    v = exponential_martingale(np.ones(101), paths)
    se = v.std(ddof=1) / math.sqrt(len(v))
    elapsed = time.perf_counter() - start
    ok = abs(v.mean() - 1.0) <= 3 * se
    assert criterion(4, "exponential martingale", ok, f"mean {v.mean():.5f}, |mean - 1| <= 3 x {se:.1e}", elapsed, 30.0)


def test_c05_mass_conservation(criterion):
    start = time.perf_counter()
    paths = sample_paths(TimeGrid(0.0, 1.0, 1000), 5, 10)
    x = spatial_grid(5.0, 1e-3)
    d = catalog("bump", amplitude=0.5)
    drifts = []
    for i in range(len(paths)):
        one = BrownianPath(paths.grid, paths.values[i : i + 1], paths.seed)
        drifts.append(float(relative_mass_drift(solve_by_characteristics(d, GAUSS, one, x))[0]))
    elapsed = time.perf_counter() - start
    ok = max(drifts) < 1e-3
    assert criterion(5, "mass conservation", ok, f"max relative drift over 10 paths {max(drifts):.1e}", elapsed, 60.0)


def test_c06_weak_form_residual(criterion):
    # 256 paths, 3 levels halving (dt, dx) from (8e-3, 0.08); RMS over paths
    # of max_t |residual| / (int |u0| max |phi'|)
    start = time.perf_counter()
    d = catalog("bump", amplitude=0.5, width=1.0)
    phi = bump_test_function(0.5, 6.0)
    L = 7.0
    coarse = sample_paths(TimeGrid(0.0, 1.0, 125), 7, 256)
    r2 = refine(coarse, 2)
    levels = [(coarse, 0.08), (r2, 0.04), (refine(r2, 2), 0.02)]
    xr = np.linspace(-L, L, 20001)
    scale = np.trapezoid(np.abs(GAUSS(xr)), xr) * np.max(np.abs(phi.dphi(xr)))
    rms = []
    for p, dx in levels:
        x = spatial_grid(L, dx)
        worst = []
        for c in range(0, len(p), 16):
            chunk = BrownianPath(p.grid, p.values[c : c + 16], p.seed)
            u = solve_by_characteristics(d, GAUSS, chunk, x)
            worst.append(np.max(np.abs(weak_residual(u, d, phi).residual), axis=0))
        rel = np.concatenate(worst) / scale
        rms.append(float(np.sqrt(np.mean(rel**2))))
    slope = -np.polyfit([0, 1, 2], np.log2(rms), 1)[0]
    elapsed = time.perf_counter() - start
    ok = all(np.diff(rms) < 0) and slope >= 0.4 and rms[-1] < 1e-2
    assert criterion(6, "weak-form residual", ok,
                     " > ".join(f"{r:.2e}" for r in rms) + f", slope {slope:.2f}", elapsed, 120.0)


def test_c07_commutator_decay(criterion):
    start = time.perf_counter()
    rough = run_commutator(_default("commutator"))
    text = default_config_text("commutator").replace("name = sign_sqrt\nkappa = 1\nradius = 1",
                                                     "name = bump\namplitude = 0.5\nwidth = 1")
    smooth = run_commutator(parse_config(text, "commutator"))
    elapsed = time.perf_counter() - start
    ok = (rough.check("strictly_decreasing").passed and rough.check("final_over_initial").passed
          and smooth.check("smooth_rate").passed)
    detail = (f"sign-sqrt {rough.check('strictly_decreasing').detail}, ratio "
              f"{rough.check('final_over_initial').detail}; bump {smooth.check('smooth_rate').detail}")
    assert criterion(7, "commutator decay", ok, detail, elapsed, 120.0)


def test_c08_lemma_boundedness_sweep(criterion):
    start = time.perf_counter()
    cfg = parse_config(default_config_text("lemma-sweep").replace("ou = true", "ou = false")
                       .replace("limit_dt = 1e-4\n", ""), "lemma-sweep")
    rep = run_lemma_sweep(cfg)
    elapsed = time.perf_counter() - start
    trends = [c for c in rep.checks if c.name.startswith("no_blowup_trend")]
    ok = rep.check("bounded").passed and all(c.passed for c in trends)
    detail = rep.check("bounded").detail + "; " + "; ".join(
        f"{c.name[16:-1]}: {c.detail.split('= ')[-1]}" for c in trends)
    assert criterion(8, "boundedness sweep", ok, detail, elapsed, 300.0)


def test_c09_negative_example(criterion):
    start = time.perf_counter()
    rep = run_negative_example(_default("negative-example"))
    elapsed = time.perf_counter() - start
    ok = rep.check("mismatch_decays").passed and rep.check("final_mismatch").passed
    detail = f"{rep.check('mismatch_decays').detail}, final {rep.check('final_mismatch').detail}"
    assert criterion(9, "negative example", ok, detail, elapsed, 60.0)


def test_c10_stability(criterion):
    start = time.perf_counter()
    text = default_config_text("stability").replace("name = sign_sqrt\nkappa = 1\nradius = 1", "name = zero")
    text = text.replace("sequence = mollified", "sequence = bump").replace("epsilons = 0.125\n", "")
    closed = run_stability(parse_config(text, "stability"))
    rough = run_stability(_default("stability"))
    elapsed = time.perf_counter() - start
    ok = closed.check("closed_form").passed and rough.check("decreasing_in_n").passed
    detail = f"zero drift {closed.check('closed_form').detail}; rough drift decreasing over n = 2, 4, 8, 16: " \
             f"{rough.check('decreasing_in_n').passed}"
    assert criterion(10, "stability", ok, detail, elapsed, 120.0)


def test_c11_selection_exhibit(criterion):
    start = time.perf_counter()
    rep = run_selection_experiment(_default("selection"))
    elapsed = time.perf_counter() - start
    factors = [f for m, *_, f in rep.table("factors").rows if m == "noisy" and f is not None]
    ok = all(rep.check(n).passed for n in ("noisy_cauchy", "branches_solve_ode", "branches_distinct"))
    detail = f"noisy factors {', '.join(f'{f:.2f}' for f in factors)}; {rep.check('branches_solve_ode').detail}"
    assert criterion(11, "non-uniqueness exhibit", ok, detail, elapsed, 300.0)


def test_c12_replay_determinism(criterion, tmp_path):
    start = time.perf_counter()
    mismatched = []
    for scenario in SCENARIOS:
        cfg = tmp_path / f"{scenario}.ini"
        cfg.write_text(SMALL[scenario])
        runs = []
        for tag, threads in (("a", "1"), ("b", "1"), ("c", "3")):
            out = tmp_path / scenario / tag
            main([scenario, "--config", str(cfg), "--out", str(out), "--threads", threads])
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if not runs[0] or any(r != runs[0] for r in runs[1:]):
            mismatched.append(scenario)
    elapsed = time.perf_counter() - start
    ok = not mismatched
    detail = f"{len(SCENARIOS)} scenarios x (threads 1, 1, 3): " + ("byte-identical" if ok else f"differ: {mismatched}")
    assert criterion(12, "replay determinism", ok, detail, elapsed, 120.0)
