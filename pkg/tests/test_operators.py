import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dyadiclab.errors import InputError
from dyadiclab.measures import pullback_measure, sample_lebesgue
from dyadiclab.operators import (
    ConstantFit,
    MaximalOperator,
    TentTable,
    admissible_N,
    berezin_transform,
    carleson_report,
    check_exponent_identity,
    fit_constant,
    muckenhoupt_constant,
    pointwise_bound_check,
    power_table,
    sparse_sum,
    trending_up,
    weighted_estimate_check,
)
from dyadiclab import operators as ops
from dyadiclab.symbols import SymbolPair, TestFunction, Weight


@pytest.fixture(scope="module")
def leb(disc):
    return sample_lebesgue(disc, 20_000, 0)


@pytest.fixture(scope="module")
def leb_report(small_tree, leb):
    return carleson_report(small_tree, leb, 1.0, seed=1)


# -- Carleson ---------------------------------------------------------------


def test_lebesgue_carleson_ratio_is_one(leb_report):
    # density route: mu and Vol are estimated from the same draws
    assert np.allclose(leb_report.ratio[leb_report.volume > 0], 1.0, rtol=1e-12)


def test_dilation_misses_deep_tents(small_tree, disc):
    mu = pullback_measure(disc, SymbolPair(disc, "1", "z/2"), 20_000, 0)
    rep = carleson_report(small_tree, mu, 1.0, seed=1)
    deep = rep.generation >= 1
    assert np.all(rep.mu[deep] == 0.0)
    assert rep.ratio[rep.cube == 0][0] > 0


def test_atom_route_agrees_with_density_route(small_tree, disc):
    # phi' has no zero in the disc, so the pushforward density is bounded
    mu = pullback_measure(disc, SymbolPair(disc, "1", "z/2+z**2/8"), 40_000, 2)
    a = carleson_report(small_tree, mu, 1.0, seed=3, route="atoms")
    d = carleson_report(small_tree, mu, 1.0, seed=3, route="density", per_tent=256)
    assert np.allclose(a.mu[a.cube == 0], math.pi)
    shallow = a.generation <= 1
    z = np.abs(a.mu - d.mu)[shallow] / np.hypot(a.mu_se, d.mu_se)[shallow].clip(1e-12)
    assert np.mean(z < 3) > 0.95


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(1.0, 3.0))
def test_carleson_homogeneity_and_stable_argmax(small_tree, leb, leb_report, c, lam):
    base = carleson_report(small_tree, leb, lam, seed=1)
    scaled = carleson_report(small_tree, leb.scaled(c), lam, seed=1)
    assert scaled.sup_ratio == pytest.approx(c * base.sup_ratio, rel=1e-12)
    assert scaled.argmax == base.argmax


def test_carleson_rejects_small_lambda(small_tree, leb):
    with pytest.raises(InputError):
        carleson_report(small_tree, leb, 0.5)


# -- Berezin ----------------------------------------------------------------


@pytest.mark.parametrize("r", [0.0, 0.5, 0.9])
def test_berezin_of_lebesgue_is_one(disc, leb, r):
    est = berezin_transform(disc, leb, 2, 2, [r], count=40_000, seed=4)
    assert est.within(1.0, 3.0)


def test_berezin_at_origin_with_p_one(disc, leb):
    # |K(xi, 0)|^4 / K(0, 0)^2 = pi^-2 integrates to 1/pi
    est = berezin_transform(disc, leb, 1, 2, [0.0], count=20_000, seed=4)
    assert est.within(1 / math.pi, 3.0)


# -- maximal operators ------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.floats(1.01, 10.0), st.floats(0.0, 1.0))
def test_exponent_identity(p, frac):
    alpha = frac * 0.9 / p
    assume(alpha > 0)
    q = 1.0 / (1.0 / p - alpha)
    assert check_exponent_identity(p, q, alpha)


def test_exponent_identity_rejects_mismatch():
    with pytest.raises(InputError):
        check_exponent_identity(2.0, 3.0, 0.25)


@pytest.fixture(scope="module")
def maximal(small_tree):
    f = TestFunction.kernel(0.9)
    return MaximalOperator(small_tree, {"k": f, "one": TestFunction.constant()}, seed=2), f


def test_maximal_dominates_tent_averages(small_tree, maximal):
    op, f = maximal
    rng = np.random.default_rng(0)
    z = rng.uniform(-0.7, 0.7, (50, 1)) + 1j * rng.uniform(-0.7, 0.7, (50, 1))
    mz = op("k", z)
    for g in range(len(small_tree.grids)):
        ids = small_tree.tents_containing(g, z)
        avg = op.average("k", g)
        for i in range(len(z)):
            row = ids[i][ids[i] >= 0]
            assert mz[i] >= avg[row].max() - 1e-15


def test_maximal_of_constant_is_constant(maximal):
    op, _ = maximal
    z = np.array([[0.0], [0.5], [0.99j]])
    assert np.allclose(op("one", z), 1.0, atol=1e-12)


# -- Muckenhoupt ------------------------------------------------------------


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_constant_weight_has_unit_constant(small_tree, disc, p):
    rep = muckenhoupt_constant(small_tree, Weight(disc, "3.7"), p, seed=0)
    assert rep.constant == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=5, deadline=None)
@given(st.floats(0.1, 50.0))
def test_muckenhoupt_scale_invariance(small_tree, disc, c):
    om = Weight(disc, "(1-norm(z)**2)**0.5")
    a = muckenhoupt_constant(small_tree, om, 2.0, seed=0).constant
    b = muckenhoupt_constant(small_tree, om.scaled(c), 2.0, seed=0).constant
    assert b == pytest.approx(a, rel=1e-9)


def test_muckenhoupt_needs_p_above_one(small_tree, disc):
    with pytest.raises(InputError):
        muckenhoupt_constant(small_tree, Weight(disc), 1.0)


# -- sparse and pointwise ----------------------------------------------------


@pytest.mark.parametrize(
    "p,q,expected", [(2, 2, [1, 2]), (4, 5, [2, 3]), (2, 3, []), (3, 3.5, [1, 2]), (1, 2, [])]
)
def test_admissible_N(p, q, expected):
    assert admissible_N(p, q) == expected


def test_sparse_generation_sums_decay(small_tree):
    table = power_table(small_tree, {"one": TestFunction.constant()}, (1, 2), seed=0)
    s = sparse_sum(table, "one", 2, 2, 1)
    # f = 1: generation k sums Vol(T(Q)) = pi (1 - (1 - delta^k)^2) per grid
    K0 = len(small_tree.grids)
    for k, v in enumerate(s.per_generation):
        ell = small_tree.delta**k
        assert v == pytest.approx(K0 * math.pi * (1 - (1 - ell) ** 2), rel=0.05)
    with pytest.raises(InputError):
        sparse_sum(table, "one", 2, 3, 2)


def test_pointwise_bound_finite(small_tree, disc, leb):
    table = power_table(small_tree, {"one": TestFunction.constant()}, (1,), seed=0)
    r = pointwise_bound_check(table, leb, TestFunction.constant(), "one", 2, 2, 1, [0.5], count=20_000, seed=1)
    assert r.lhs > 0 and r.rhs > 0 and math.isfinite(r.ratio)


def test_constant_fit():
    assert fit_constant([1.0, 2.0], [2.4]).passed
    assert not fit_constant([1.0, 2.0], [2.6]).passed
    assert not ConstantFit(math.inf, 1.0).passed


def test_trending_up():
    assert trending_up([1, 3, 9])
    assert not trending_up([1, 1.2, 1.5])
    assert not trending_up([1, 5, 4])


# -- Sawyer-type testing ----------------------------------------------------


def test_identity_testing_sweep_matches_closed_form(disc):
    # int |K(z, xi)| dV(z) = log(1/(1-r^2)) / r^2 for u = 1, phi = id, omega = 1
    rep = ops.testing_sweep(disc, SymbolPair(disc, "1", "z"), Weight(disc), directions=2, count=40_000, seed=0)
    exact = [1.0] + [math.log(1 / (1 - r * r)) / (r * r) for r in rep.radii[1:]]
    for v, e, r in zip(rep.values, rep.errors, exact):
        assert abs(v[0] - r) < max(4 * e[0], 0.01 * r)
    assert rep.divergent
    assert rep.constant == math.inf


def test_weighted_estimate_homogeneity(disc):
    sym = SymbolPair(disc, "1", "z/2")
    om = Weight(disc, "(1-norm(z)**2)**0.5")
    fs = {"z": TestFunction.monomial([1])}
    a = weighted_estimate_check(disc, sym, om, 1.5, fs, count=20_000, seed=0, directions=2)
    b = weighted_estimate_check(disc, sym, om.scaled(7), 1.5, fs, count=20_000, seed=0, directions=2)
    assert not a.skipped and math.isfinite(a.max_ratio)
    # [w^s']^(1/s') scales like w, so the ratio is invariant
    assert b.max_ratio == pytest.approx(a.max_ratio, rel=1e-10)


# -- vectors ------------------------------------------------------------------


def test_weighted_composition_vectors(disc, leb):
    from dyadiclab.operators import apply_weighted_composition, operator_proxy

    f = TestFunction.monomial([3])
    z = np.array([[0.3 + 0.4j], [0.5]])
    assert np.allclose(apply_weighted_composition(SymbolPair(disc, "1", "z"), f, z), f(z))
    val = apply_weighted_composition(SymbolPair(disc, "z", "z**2"), TestFunction.constant(), [[0.5]])
    assert val[0] == pytest.approx(0.5)
    sym = SymbolPair(disc, "1", "z")
    assert operator_proxy(sym, leb, f, count=40_000, seed=1) == pytest.approx(1.0, rel=0.03)


def test_square_pullback_carleson_finite(small_tree, disc):
    mu = pullback_measure(disc, SymbolPair(disc, "1", "z**2"), 20_000, 0)
    rep = carleson_report(small_tree, mu, 1.0, seed=1)
    assert math.isfinite(rep.sup_ratio) and rep.sup_ratio > 0


def test_berezin_of_dilation_vanishes_at_boundary(disc):
    mu = pullback_measure(disc, SymbolPair(disc, "1", "z/2"), 50_000, 0)
    v = [berezin_transform(disc, mu, 2, 2, [r], count=50_000, seed=2).value for r in (0.9, 0.99)]
    assert v[1] < v[0]


def test_maximal_indicator_and_fractional_vectors(small_tree, disc):
    from dyadiclab.operators import basis_maximal, fractional_maximal

    g, q = 0, small_tree.grids[0].generation_slices[1].start
    ind = lambda x: small_tree.in_tent(g, q, x).astype(float)
    z = small_tree.sample_tent(g, q, 20, seed=0)
    assert np.allclose(basis_maximal(small_tree, ind, z, seed=0), 1.0)
    one = lambda x: np.ones(len(x))
    pts = np.array([[0.0], [0.7], [0.99j]])
    alpha = 0.25
    assert np.allclose(fractional_maximal(small_tree, one, alpha, pts, seed=0), math.pi**alpha)
    base = basis_maximal(small_tree, TestFunction.kernel(0.5), pts, seed=0)
    near = fractional_maximal(small_tree, TestFunction.kernel(0.5), 1e-9, pts, seed=0)
    assert np.allclose(near, base, rtol=1e-8)
    with pytest.raises(InputError):
        check_exponent_identity(2.0, 4.0, 0.3)
    assert check_exponent_identity(3.0, 6.0, 1 / 6)


def test_null_function_and_origin_pointwise(small_tree, disc, leb):
    zero, one = TestFunction.constant(0.0), TestFunction.constant(1.0)
    table = power_table(small_tree, {"0": zero, "1": one}, (1, 2), seed=0)
    r0 = pointwise_bound_check(table, leb, zero, "0", 2, 2, 1, [0.0], count=5000, seed=0)
    assert (r0.lhs, r0.rhs) == (0.0, 0.0)
    assert sparse_sum(table, "0", 2, 2, 1).value == 0.0
    # |K(0, w)| = 1/pi on the disc, so the lhs integrates to 1
    r1 = pointwise_bound_check(table, leb, one, "1", 2, 2, 1, [0.0], count=20_000, seed=0)
    assert abs(r1.lhs - 1.0) <= 3 * r1.lhs_se
    assert math.isfinite(r1.rhs) and r1.rhs > 0


def test_testing_constant_linearity_and_null_symbol(disc):
    sym = SymbolPair(disc, "(1-z)**2", "z")
    om = Weight(disc, "1-norm(z)**2")
    a = ops.sawyer_testing_constant(disc, sym, om, 1.5, directions=2, count=10_000, seed=0)
    b = ops.sawyer_testing_constant(disc, sym, om.scaled(2.5), 1.5, directions=2, count=10_000, seed=0)
    # [w^s'] is linear in w^s'
    assert b.sweep_max == pytest.approx(2.5**a.exponent * a.sweep_max, rel=1e-12)
    null = ops.testing_sweep(disc, SymbolPair(disc, "0", "z"), om, directions=2, count=5000, seed=0)
    assert null.sweep_max == 0.0
    ok = ops.testing_sweep(disc, SymbolPair(disc, "1", "z"), om, directions=2, count=40_000, seed=0)
    assert not ok.divergent and math.isfinite(ok.constant)


def test_null_weight(disc):
    sym = SymbolPair(disc, "1", "z/2")
    rep = weighted_estimate_check(
        disc, sym, Weight(disc, "0"), 1.5, {"1": TestFunction.constant()}, count=5000, seed=0, directions=2
    )
    assert rep.skipped or rep.max_ratio == 0.0 or math.isnan(rep.max_ratio)


def test_constant_weight_per_tent(small_tree, disc):
    rep = muckenhoupt_constant(small_tree, Weight(disc, "1"), 2.0, seed=0)
    assert all(v == pytest.approx(1.0, abs=1e-12) for v in rep.per_generation.values())
    assert rep.flagged == 0


def test_equivalence_identity_and_dilation(small_tree, disc):
    from dyadiclab.operators import boundedness_equivalence_suite

    fs = {"1": TestFunction.constant(), "z": TestFunction.monomial([1])}
    ident = SymbolPair(disc, "1", "z")
    rep = boundedness_equivalence_suite(
        small_tree, ident, pullback_measure(disc, ident, 20_000, 0), fs, directions=2, count=20_000, seed=0
    )
    assert rep.sup_ratio == pytest.approx(1.0, rel=1e-9)
    assert rep.berezin_sup == pytest.approx(1.0, rel=0.05)
    assert rep.operator_proxy == pytest.approx(1.0, rel=0.05)
    half = SymbolPair(disc, "1", "z/2")
    rep = boundedness_equivalence_suite(
        small_tree, half, pullback_measure(disc, half, 20_000, 0), fs, directions=2, count=20_000, seed=0
    )
    assert rep.finite and rep.verdict == "bounded"
    assert rep.sweeps["berezin"][-1] < rep.sweeps["berezin"][0]
