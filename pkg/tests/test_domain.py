import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyadiclab._mc import rng_for, uniform_ball, uniform_sphere
from dyadiclab.domain import (
    DomainModel,
    certify_homogeneous_type,
    mobius,
    mobius_jacobian,
    model_from_name,
    norm2,
)
from dyadiclab.errors import InputError, ProjectionError


def test_model_names():
    assert model_from_name("disc").dimension == 1
    assert model_from_name("ball:3").dimension == 3
    with pytest.raises(InputError):
        model_from_name("annulus")
    with pytest.raises(InputError):
        DomainModel(4)
    with pytest.raises(InputError):
        DomainModel(1, eps0=1.5)


def test_volume_and_kernel_closed_forms(disc, ball2):
    assert disc.volume == pytest.approx(math.pi)
    assert ball2.volume == pytest.approx(math.pi**2 / 2)
    z, w = np.array([[0.3 + 0.1j]]), np.array([[-0.2j]])
    expected = 1.0 / (math.pi * (1 - z[0, 0] * np.conj(w[0, 0])) ** 2)
    assert disc.bergman_kernel(z, w)[0] == pytest.approx(expected, rel=1e-14)
    z2, w2 = np.array([[0.3, 0.1j]]), np.array([[0.2, -0.4]])
    ip = np.sum(z2 * np.conj(w2))
    assert ball2.bergman_kernel(z2, w2)[0] == pytest.approx(2 / (math.pi**2 * (1 - ip) ** 3), rel=1e-14)
    assert disc.kernel_diagonal(np.zeros((1, 1)))[0] == pytest.approx(1 / math.pi)


def test_quasimetric_on_circle(disc):
    a = np.array([[1.0 + 0j]])
    b = np.array([[1j]])
    assert disc.quasimetric(a, b)[0] == pytest.approx(math.sqrt(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2, 3]))
def test_mobius_is_an_involution(seed, n):
    rng = rng_for(seed, "t")
    a = 0.95 * uniform_ball(rng, 1, n)[0]
    z = uniform_ball(rng, 16, n)
    assert np.allclose(mobius(a, mobius(a, z)), z, atol=1e-10)
    assert np.allclose(mobius(a, a[None, :]), 0.0, atol=1e-12)
    assert np.all(norm2(mobius(a, z)) < 1.0)


def test_mobius_jacobian_integrates_to_volume(disc):
    # int J_a dV = Vol, since phi_a is a measure-preserving bijection after weighting
    a = np.array([0.9 + 0j])
    x = uniform_ball(rng_for(1, "jac"), 400_000, 1)
    assert np.mean(mobius_jacobian(a, x)) == pytest.approx(1.0, abs=0.03)


def test_kobayashi_ball_samples_stay_inside(ball2, rng):
    c = np.array([0.6, 0.5j])
    pts = ball2.sample_kobayashi_ball(rng, c, 0.7, 5000)
    assert np.all(ball2.kobayashi_tanh(c[None, :], pts) < 0.7)
    many = ball2.sample_kobayashi_balls(rng, np.stack([c, 0 * c]), 0.4, 2000)
    assert many.shape == (2, 2000, 2)
    inner = np.mean(ball2.kobayashi_tanh(c[None, :], many[0]) < 0.2)
    v_small = ball2.kobayashi_ball_volume(c[None, :], 0.2)[0]
    v_big = ball2.kobayashi_ball_volume(c[None, :], 0.4)[0]
    assert inner == pytest.approx(v_small / v_big, abs=0.02)


def test_kobayashi_ball_at_origin_is_euclidean(disc):
    assert disc.kobayashi_ball_volume(np.zeros((1, 1)), 0.5)[0] == pytest.approx(math.pi * 0.25)


def test_homogeneous_type_certificate(disc):
    cert = certify_homogeneous_type(disc, 4000, 0)
    # d is a chordal metric on the circle; doubling ratios of arcs stay below 4
    assert 0.99 < cert.kappa <= 1.0 + 1e-9
    assert 1.5 < cert.doubling < 4.0


def test_boundary_vectors(disc, ball2):
    assert float(disc.defining_function([0.3])) == pytest.approx(-0.7)
    assert float(ball2.defining_function([1.0, 0.0])) == pytest.approx(0.0)
    assert float(disc.defining_function([0.0])) == -1.0
    assert np.allclose(ball2.project_to_boundary([0.5, 0.0]), [[1.0, 0.0]])
    assert np.allclose(disc.project_to_boundary([0.9j]), [[1j]])
    with pytest.raises(ProjectionError):
        disc.project_to_boundary([0.0])
    assert float(disc.quasimetric([1.0], [1.0])) == 0.0
    assert float(ball2.quasimetric([1.0, 0.0], [0.0, 1.0])) == pytest.approx(1.0)
    with pytest.raises(InputError):
        disc.quasimetric([0.5], [1.0])


def test_kernel_and_kobayashi_vectors(disc, ball2):
    assert float(disc.kernel_diagonal([0.5])) == pytest.approx(16 / (9 * math.pi))
    assert float(ball2.kernel_diagonal([0.0, 0.0])) == pytest.approx(2 / math.pi**2)
    assert float(disc.kobayashi_tanh([0.0], [0.5])) == pytest.approx(0.5)
    assert float(disc.kobayashi_tanh([0.5], [0.8])) == pytest.approx(0.5)
    assert float(ball2.kobayashi_tanh([0.1, 0.2], [0.1, 0.2])) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_kernel_is_hermitian(n):
    model = DomainModel(n)
    rng = rng_for(3, "herm", n)
    z, w = uniform_ball(rng, 1000, n), uniform_ball(rng, 1000, n)
    assert np.max(np.abs(model.bergman_kernel(z, w) - np.conj(model.bergman_kernel(w, z)))) < 1e-12


@pytest.mark.parametrize("n", [1, 2])
def test_reproducing_property_on_monomials(n):
    from dyadiclab.measures import lebesgue_integral
    from dyadiclab.symbols import TestFunction

    model = DomainModel(n)
    rng = rng_for(4, "repro", n)
    zs = 0.8 * uniform_ball(rng, 10, n)
    monos = [(0,) * n, (1,) + (0,) * (n - 1), (2,) + (0,) * (n - 1), (0,) * (n - 1) + (3,)]
    for e in monos:
        f = TestFunction.monomial(e)
        for i, z in enumerate(zs):
            for part in (np.real, np.imag):
                est = lebesgue_integral(
                    model, lambda x: part(model.bergman_kernel(z[None, :], x) * f(x)), 20_000, 10 * i + sum(e)
                )
                assert est.within(float(part(f(z[None, :])[0])), 3.5), (e, z)


def test_kernel_upper_bound_fitted_constant(ball2):
    rng = rng_for(5, "bound")
    n = ball2.dimension
    t = 10.0 ** rng.uniform(-4, 0, size=(2, 1000))
    p = uniform_sphere(rng, 1000, n) * (1 - t[0])[:, None]
    q = uniform_sphere(rng, 1000, n) * (1 - t[1])[:, None]
    ratio = np.abs(ball2.bergman_kernel(p, q)) * ball2.kernel_bound_scale(p, q) ** (n + 1)
    check = ratio.max()
    # t_p + t_q <= 2 |1 - <p,q>| and d(pi p, pi q) <= 2 |1 - <p,q>|, so C = 4^(n+1) n!/pi^n suffices
    assert check <= 4.0 ** (n + 1) * 2 / math.pi**2


def test_circle_kappa_against_dense_scan(disc):
    # oracle: d(x,y)/(d(x,z)+d(z,y)) over a dense angle grid with x = 1
    th = np.linspace(0, 2 * np.pi, 721)
    a, b = np.meshgrid(th, th)
    dxy = np.abs(1 - np.exp(1j * a))
    dxz = np.abs(1 - np.exp(1j * b))
    dzy = np.abs(np.exp(1j * b) - np.exp(1j * a))
    den = dxz + dzy
    oracle = float(np.max(np.where(den > 0, dxy / np.where(den > 0, den, 1), 0)))
    assert oracle == pytest.approx(1.0, abs=1e-9)
    k = [certify_homogeneous_type(disc, 4000, s).kappa for s in (0, 1, 2)]
    assert max(k) <= oracle + 1e-9 and min(k) >= 0.95 * oracle
    assert certify_homogeneous_type(disc, 4000, 0) == certify_homogeneous_type(disc, 4000, 0)


def test_sphere_certificate(ball2):
    a = certify_homogeneous_type(ball2, 20_000, 0)
    b = certify_homogeneous_type(ball2, 20_000, 1)
    # sqrt(d) is a metric, so kappa <= 2; tangential triples approach 2
    assert 1.9 <= a.kappa <= 2.0
    assert a.kappa == pytest.approx(b.kappa, rel=0.05)
    assert math.isfinite(a.doubling)
