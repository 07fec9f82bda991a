import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyadiclab.errors import InputError, IntegrationError, SelfMapError
from dyadiclab.measures import (
    Proposal,
    ap_norm,
    dumps_measure,
    integrate,
    lebesgue_integral,
    loads_measure,
    measure_integral,
    pullback_measure,
    sample_lebesgue,
)
from dyadiclab.symbols import SymbolPair, TestFunction


def test_lebesgue_mass_is_exact(disc, ball2):
    assert sample_lebesgue(disc, 5000, 0).total_mass == pytest.approx(math.pi, rel=1e-14)
    assert sample_lebesgue(ball2, 5000, 0).total_mass == pytest.approx(math.pi**2 / 2, rel=1e-14)
    with pytest.raises(InputError):
        sample_lebesgue(disc, 10, 0)


def test_moment_of_radius(disc):
    # int |z|^2 dV over the disc = pi / 2
    est = lebesgue_integral(disc, lambda x: np.abs(x[:, 0]) ** 2, 40_000, 1)
    assert est.within(math.pi / 2)


@pytest.mark.parametrize("prop", ["boundary", "focus"])
def test_importance_proposals_are_unbiased(disc, prop):
    kw = {"boundary": True} if prop == "boundary" else {"focus": (np.array([0.9 + 0j]),)}
    p = Proposal(disc, uniform=True, **kw)
    m = sample_lebesgue(disc, 40_000, 2, proposal=p)
    assert m.total_mass == pytest.approx(math.pi, rel=0.03)


def test_pullback_density_of_square(disc):
    # u = z, phi = z^2: two preimages with |u|^2 / |phi'|^2 = 1/4 each
    sym = SymbolPair(disc, "z", "z**2", 2, 2)
    dens = sym.pushforward_density()
    w = np.array([0.1, 0.5j, -0.9, 0.3 + 0.3j])
    assert np.allclose(dens(w), 0.5)
    mu = pullback_measure(disc, sym, 40_000, 3)
    assert integrate(mu, lambda x: np.ones(len(x))).within(math.pi / 2)


def test_pullback_density_of_dilation(ball2):
    sym = SymbolPair(ball2, "1", "z/2", 2, 2)
    dens = sym.pushforward_density()
    w = np.array([[0.1, 0.1], [0.4, 0.4], [0.1, 0.0]], dtype=complex)
    assert np.allclose(dens(w), [16.0, 0.0, 16.0])


def test_density_and_atom_routes_agree(disc):
    sym = SymbolPair(disc, "1", "(z+z**2)/2", 2, 2)
    mu = pullback_measure(disc, sym, 50_000, 4)
    g = lambda x: np.abs(x[:, 0]) ** 2
    a = integrate(mu, g)
    b = measure_integral(mu, g, 50_000, 5)
    assert abs(a.value - b.value) < 4 * math.hypot(a.stderr, b.stderr)


def test_pullback_rejects_non_self_map(disc):
    with pytest.raises(SelfMapError):
        pullback_measure(disc, SymbolPair(disc, "1", "2*z"), 2000, 0)


def test_integrate_flags_non_finite(disc):
    mu = sample_lebesgue(disc, 2000, 0)
    with pytest.raises(IntegrationError):
        integrate(mu, lambda x: np.full(len(x), np.inf))


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 0.995), st.floats(0.0, 2 * math.pi))
def test_normalised_kernel_has_unit_norm(r, theta):
    from dyadiclab.domain import DomainModel

    disc = DomainModel(1)
    k = TestFunction.kernel(r * complex(math.cos(theta), math.sin(theta)))
    est = ap_norm(disc, k, 2, count=20_000, seed=7)
    assert abs(est.value - 1.0) < max(4 * est.stderr, 0.02)


def test_atom_file_round_trip(disc):
    mu = pullback_measure(disc, SymbolPair(disc, "1", "z/2"), 2000, 9)
    back = loads_measure(dumps_measure(mu))
    assert np.array_equal(back.points, mu.points)
    assert np.array_equal(back.weights, mu.weights)
    assert (back.provenance, back.seed) == (mu.provenance, mu.seed)
    with pytest.raises(InputError):
        loads_measure(b"garbage")


def test_lebesgue_vectors(disc):
    leb = sample_lebesgue(disc, 100_000, 0)
    assert np.all(leb.weights >= 0)
    assert integrate(leb, lambda x: np.ones(len(x))).value == pytest.approx(math.pi, rel=1e-12)
    mean_r2 = integrate(leb, lambda x: np.abs(x[:, 0]) ** 2 / math.pi)
    assert mean_r2.within(0.5)
    k0 = integrate(leb, lambda x: np.abs(disc.bergman_kernel(x, np.zeros((1, 1)))) ** 2)
    assert k0.within(1 / math.pi)


def test_identity_pullback_is_lebesgue(disc):
    mu = pullback_measure(disc, SymbolPair(disc, "1", "z"), 5000, 3)
    leb = sample_lebesgue(disc, 5000, 3)
    assert np.array_equal(mu.points, leb.points)
    assert np.allclose(mu.weights, leb.weights)


def test_dilation_pullback_range(disc):
    mu = pullback_measure(disc, SymbolPair(disc, "1", "z/2"), 20_000, 0)
    assert np.all(np.abs(mu.points) < 0.5)
    assert mu.total_mass == pytest.approx(math.pi)


def test_weight_moment_pullback(disc):
    mu = pullback_measure(disc, SymbolPair(disc, "z", "z"), 50_000, 1)
    assert integrate(mu, lambda x: np.ones(len(x))).within(math.pi / 2)


def test_pullback_consistency(disc):
    sym = SymbolPair(disc, "1+z/2", "(z+z**2)/2", 2, 2)
    mu = pullback_measure(disc, sym, 40_000, 6)
    leb = sample_lebesgue(disc, 40_000, 6)  # same seed pairing
    rng = np.random.default_rng(0)
    for _ in range(5):
        c = rng.normal(size=3) + 1j * rng.normal(size=3)
        f = lambda w, c=c: np.abs(c[0] + c[1] * w[:, 0] + c[2] * w[:, 0] ** 2) ** 2
        a = integrate(mu, f)
        b = integrate(leb, lambda x: f(sym.phi(x)) * np.abs(sym.u(x)) ** 2)
        assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr) + 1e-12


def test_standard_error_shrinks(disc):
    f = lambda x: np.abs(x[:, 0]) ** 2
    se = [lebesgue_integral(disc, f, 8000 * 2**i, 11).stderr for i in range(5)]
    for a, b in zip(se, se[1:]):
        assert b / a == pytest.approx(2**-0.5, rel=0.2)


def test_tent_indicator_matches_tent_tree(small_tree, disc):
    leb = sample_lebesgue(disc, 100_000, 0)
    q = small_tree.grids[0].generation_slices[1].start
    est = integrate(leb, lambda x: small_tree.in_tent(0, q, x).astype(float))
    assert est.within(small_tree.analytic_volume(0, q), 3.5)


def test_ap_norm_vectors(disc):
    one = ap_norm(disc, TestFunction.constant(), 2, count=20_000)
    assert one.value == pytest.approx(math.sqrt(math.pi), rel=0.01)
    z = ap_norm(disc, TestFunction.monomial([1]), 2, count=50_000)
    assert abs(z.value - math.sqrt(math.pi / 2)) <= 3 * z.stderr + 1e-3


def test_measures_are_deterministic(disc):
    sym = SymbolPair(disc, "1", "z**2")
    a, b = pullback_measure(disc, sym, 3000, 5), pullback_measure(disc, sym, 3000, 5)
    assert dumps_measure(a) == dumps_measure(b)
