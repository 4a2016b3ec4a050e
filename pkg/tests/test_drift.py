from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from rnlab.brownian import TimeGrid, ito_integral, refine, sample_paths, time_integral
from rnlab.drift import (
    CATALOG,
    DriftField,
    catalog,
    check_hypothesis,
    cutoff,
    cutoff_prime,
    mollify,
    primitive,
    primitive_triple,
    rho,
    stationary,
)
from rnlab.errors import MissingSemimartingaleParts

SMOOTH = {
    "zero": {},
    "constant": {"c": 0.7},
    "linear": {"lam": 0.5},
    "bump": {"amplitude": 0.5, "width": 1.0},
}
X = np.linspace(-3, 3, 241)

# (b_bump * rho_eps)(x) for amplitude 0.5, width 1, by adaptive quadrature
BUMP_CONV_ORACLE = {(0.3, 0.25): 0.4464800615379553, (-0.8, 0.125): 0.08778909408494368}


def test_mollifier_has_unit_mass_and_cutoff_shape():
    for eps in (1.0, 0.25):
        assert quad(lambda y: float(rho(y, eps)), -eps, eps, epsabs=1e-13)[0] == pytest.approx(1.0, abs=1e-10)
    r = np.linspace(-3, 3, 601)
    c = cutoff(r)
    assert np.all(c[np.abs(r) <= 1] == 1.0)
    assert np.all(c[np.abs(r) >= 2] == 0.0)
    assert np.all((c >= 0) & (c <= 1))
    # derivative matches central differences, and vanishes at both joins
    h = 1e-6
    np.testing.assert_allclose(cutoff_prime(r), (cutoff(r + h) - cutoff(r - h)) / (2 * h), atol=1e-6)
    assert cutoff_prime(np.array([1.0, 2.0, -1.0, -2.0])).tolist() == [0.0, 0.0, 0.0, 0.0]


def test_mollified_zero_is_zero():
    for eps in (0.5, 0.1):
        b = mollify(catalog("zero"), eps)
        assert np.all(b(0.0, X) == 0.0)
        assert np.all(b.deriv(0.0, X) == 0.0)


@pytest.mark.parametrize("eps", [0.5, 0.25, 0.1])
def test_mollified_constant_at_origin(eps):
    b = mollify(catalog("constant", c=-1.3), eps)
    assert float(b(0.0, 0.0)) == pytest.approx(-1.3, abs=1e-14)


def test_mollified_sign_vanishes_at_origin():
    sign = stationary("sign", np.sign, smooth=False)
    for eps in (0.5, 0.125, 0.01):
        assert abs(float(mollify(sign, eps)(0.0, 0.0))) < 1e-14


@pytest.mark.parametrize("key", sorted(BUMP_CONV_ORACLE))
def test_mollified_bump_matches_quadrature_oracle(key):
    x, eps = key
    b = catalog("bump", amplitude=0.5, width=1.0)
    # default lattice (eps/16) is within 1e-5 relative, a finer lattice converges fast
    assert float(mollify(b, eps)(0.0, x)) == pytest.approx(BUMP_CONV_ORACLE[key], rel=1e-5)
    assert float(mollify(b, eps, spacing=eps / 64)(0.0, x)) == pytest.approx(BUMP_CONV_ORACLE[key], rel=1e-9)


def test_mollify_rejects_coarse_lattice_and_bad_eps():
    with pytest.raises(ValueError):
        mollify(catalog("bump"), 0.25, spacing=0.1)(0.0, 0.0)
    with pytest.raises(ValueError):
        mollify(catalog("bump"), 0.0)


@settings(max_examples=20, deadline=None)
@given(name=st.sampled_from(["bump", "sign_sqrt", "box"]), k=st.integers(1, 6))
def test_mollification_contracts_sup_norm(name, k):
    b = catalog(name)
    eps = 2.0**-k
    x = np.linspace(-4, 4, 2001)
    fine = np.linspace(-4, 4, 80001)
    assert np.max(np.abs(mollify(b, eps)(0.0, x))) <= np.max(np.abs(b(0.0, fine))) + 1e-12


def test_mollified_derivative_matches_finite_differences():
    b = mollify(catalog("box"), 0.25)
    x = np.linspace(-1, 2, 301)
    h = 1e-6
    fd = (b(0.0, x + h) - b(0.0, x - h)) / (2 * h)
    np.testing.assert_allclose(b.deriv(0.0, x), fd, atol=1e-5)
    v, d = b.value_and_deriv(0.0, x)
    np.testing.assert_array_equal(d, b.deriv(0.0, x))


def test_mollified_support_bound():
    b = mollify(catalog("constant", c=1.0), 0.25)
    assert np.all(b(0.0, np.array([8.0, -8.0, 9.5])) == 0.0)
    assert b.support_bound == pytest.approx(8.0)


def test_smooth_drift_mollification_error_is_second_order():
    b = catalog("bump", amplitude=0.5, width=1.0)
    x = np.linspace(-2, 2, 801)
    eps = [0.2, 0.1, 0.05, 0.025]
    err = [np.max(np.abs(mollify(b, e)(0.0, x) - b(0.0, x))) for e in eps]
    order = np.polyfit(np.log(eps), np.log(err), 1)[0]
    assert order >= 1.8


def test_mollification_converges_in_l1_for_rough_drifts():
    x = np.linspace(-4, 4, 16001)
    for name in ("box", "sign_sqrt"):
        b = catalog(name)
        errs = [np.trapezoid(np.abs(mollify(b, 2.0**-k)(0.0, x) - b(0.0, x)), x) for k in range(1, 7)]
        assert np.all(np.diff(errs) < 0), (name, errs)


def test_primitive_of_zero_and_box():
    z = np.linspace(-2, 3, 501)  # 0 and 1 are nodes
    assert np.all(primitive(lambda y: np.zeros_like(y), z) == 0.0)
    box = catalog("box")
    np.testing.assert_allclose(primitive(lambda y: box(0.0, y), z), np.clip(z, 0.0, 1.0), atol=1e-12)


def test_primitive_central_differences_are_second_order():
    b = catalog("bump", amplitude=0.5)
    errs = []
    for n in (200, 400, 800):
        z = np.linspace(-2, 2, n + 1)
        F = primitive(lambda y: b(0.0, y), z)
        dz = z[1] - z[0]
        cd = (F[2:] - F[:-2]) / (2 * dz)
        errs.append(np.max(np.abs(cd - b(0.0, z[1:-1]))))
    assert np.polyfit(np.log([4 / 200, 4 / 400, 4 / 800]), np.log(errs), 1)[0] >= 1.8


def test_primitive_rejects_non_finite_field():
    with pytest.raises(ValueError):
        primitive(lambda y: np.where(np.abs(y) < 1e-12, np.nan, 1.0), np.linspace(-1, 1, 10))


@pytest.mark.parametrize("name", ["bump", "box", "sign_sqrt"])
def test_primitive_sup_bounded_by_l1_norm(name):
    d = catalog(name)
    z = np.linspace(-5, 5, 10001)
    F = primitive_triple(d, z).btilde(0.0, z)
    l1 = check_hypothesis(d, None, z).norms["b_Linf_L1"]
    assert np.max(np.abs(F)) <= l1 + 1e-12


def test_primitive_triple_needs_semimartingale_parts():
    bare = DriftField("bare", lambda t, x, path=None: np.zeros(np.shape(x)))
    with pytest.raises(MissingSemimartingaleParts):
        primitive_triple(bare, np.linspace(-1, 1, 11))
    with pytest.raises(MissingSemimartingaleParts):
        check_hypothesis(bare, None, np.linspace(-1, 1, 11))


def test_hypothesis_norms_zero_and_box():
    z = np.linspace(-3, 3, 601)
    r = check_hypothesis(catalog("zero"), None, z, caps={"b_Linf": 0.0})
    assert r.passed and all(v == 0.0 for v in r.norms.values())
    r = check_hypothesis(catalog("box"), None, z)
    assert r.norms["b_Linf_L1"] == pytest.approx(1.0, abs=1e-14)
    assert r.norms["b_Linf"] == 1.0


def test_hypothesis_l1_norm_of_cauchy_profile():
    # tan-mapped nodes reach |x| ~ 1e7; the outermost cells are wide, so the
    # midpoint error is a few angular steps, plus 2 delta of truncated tail
    delta = 1e-7
    theta = np.linspace(-np.pi / 2 + delta, np.pi / 2 - delta, 400_001)
    z = np.tan(theta)
    d = stationary("cauchy", lambda x: 1.0 / (1.0 + np.asarray(x) ** 2))
    r = check_hypothesis(d, None, z)
    assert r.norms["b_Linf_L1"] == pytest.approx(math.pi, abs=4 * (theta[1] - theta[0]) + 2 * delta)


def test_hypothesis_caps_fail_the_report():
    r = check_hypothesis(catalog("box"), None, np.linspace(-2, 2, 401), caps={"b_Linf": 0.5})
    assert not r.passed


def test_hypothesis_norms_for_shifted_drift_use_paths():
    paths = sample_paths(TimeGrid(0.0, 1.0, 50), 0, 3)
    d = catalog("shifted", base="bump", amplitude=0.5)
    z = np.linspace(-8, 8, 3201)
    r = check_hypothesis(d, paths, z)
    assert r.norms["b_Linf"] == pytest.approx(0.5, rel=1e-3)
    assert r.norms["g_Linf_L1"] == pytest.approx(1.0, rel=1e-3)  # total variation of the bump
    with pytest.raises(ValueError):
        check_hypothesis(d, None, z)


def test_catalog_names_and_unknown():
    for name in CATALOG:
        assert isinstance(catalog(name), DriftField)
    with pytest.raises(KeyError):
        catalog("nope")
    assert np.all(catalog("zero")(0.3, X) == 0.0)


@pytest.mark.parametrize("name", sorted(SMOOTH))
def test_smooth_catalog_derivatives(name):
    d = catalog(name, **SMOOTH[name])
    x = np.linspace(-0.99, 0.99, 199)
    h = 1e-6
    fd = (d(0.0, x + h) - d(0.0, x - h)) / (2 * h)
    np.testing.assert_allclose(d.deriv(0.0, x), fd, atol=1e-6)


def test_rough_catalog_entries_have_no_derivative():
    assert catalog("box").deriv is None and not catalog("box").smooth
    assert catalog("sign_sqrt").deriv is None


def test_shifted_drift_at_time_zero_is_base():
    paths = sample_paths(TimeGrid(0.0, 1.0, 10), 2, 3)
    d = catalog("shifted", base="bump", amplitude=0.5)
    b0 = catalog("bump", amplitude=0.5)
    xb = np.broadcast_to(X, (3,) + X.shape)
    np.testing.assert_array_equal(d(0.0, xb, paths), b0(0.0, xb))
    np.testing.assert_array_equal(d(0.0, X, None), b0(0.0, X))


def test_shifted_drift_semimartingale_identity():
    d = catalog("shifted", base="bump", amplitude=0.5)
    x = np.array([-0.5, 0.0, 0.5])
    coarse = sample_paths(TimeGrid(0.0, 1.0, 64), 12, 200)
    rms, hs = [], []
    for factor in (1, 4, 16):
        p = coarse if factor == 1 else refine(coarse, factor)
        xb = np.broadcast_to(x, (len(p),) + x.shape)
        f = np.stack([d.f(t, xb, p) for t in p.times], axis=-1)
        g = np.stack([d.g(t, xb, p) for t in p.times], axis=-1)
        inc = p.increments[:, None, :]
        rhs = time_integral(f, p.grid) + np.sum(g[..., :-1] * inc, axis=-1)
        lhs = d(1.0, xb, p) - d(0.0, xb, p)
        rms.append(np.sqrt(np.mean((lhs - rhs) ** 2)))
        hs.append(p.grid.dt)
    assert np.all(np.diff(rms) < 0)
    assert np.polyfit(np.log(hs), np.log(rms), 1)[0] >= 0.4


def test_ito_integral_helper_agrees_with_manual_sum():
    # the identity above uses a manual left-point sum; both must coincide
    p = sample_paths(TimeGrid(0.0, 1.0, 32), 1, 2)
    h = np.cos(p.values)
    np.testing.assert_allclose(ito_integral(h, p), np.sum(h[:, :-1] * p.increments, axis=-1), rtol=0, atol=0)


def test_catalog_rejects_unknown_parameters():
    with pytest.raises(TypeError):
        catalog("bump", amplitud=1.0)
    with pytest.raises(TypeError):
        catalog("shifted", base="bump", kappa=1.0)
    assert catalog("shifted", base="bump", amplitude=0.2).params["amplitude"] == 0.2
