"""Closed-form geometry on the model domains: the unit disc and unit balls.

Points are complex numpy arrays whose last axis has length ``n`` (the
complex dimension).  Every function broadcasts over leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._mc import rng_for, uniform_sphere
from .errors import InputError, ProjectionError

BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class DomainModel:
    """The unit ball of C^n (``n == 1`` is the disc).

    ``eps0`` is the width of the projection neighbourhood; tents over sets
    with side length at least ``eps0`` are the whole domain.
    """

    dimension: int
    eps0: float = 0.5

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise InputError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if not 0.0 < self.eps0 < 1.0:
            raise InputError(f"eps0 must lie in (0, 1), got {self.eps0}")

    @property
    def name(self) -> str:
        return "disc" if self.dimension == 1 else f"ball:{self.dimension}"

    @property
    def volume(self) -> float:
        """Lebesgue volume of the domain, pi^n / n!."""
        return math.pi**self.dimension / math.factorial(self.dimension)

    @property
    def kernel_constant(self) -> float:
        """Normalisation n!/pi^n of the Bergman kernel."""
        return math.factorial(self.dimension) / math.pi**self.dimension

    @property
    def sphere_area(self) -> float:
        """Unnormalised surface area of the boundary sphere."""
        n = self.dimension
        return 2 * math.pi**n / math.factorial(n - 1)

    # -- validation -------------------------------------------------------

    def points(self, z, *, where: str = "any") -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        if z.ndim == 0:
            z = z.reshape(1)
        if z.shape[-1] != self.dimension:
            raise InputError(
                f"expected points with {self.dimension} coordinates, got shape {z.shape}"
            )
        if where == "any":
            return z
        r = np.linalg.norm(z, axis=-1)
        if where == "interior" and np.any(r >= 1.0):
            raise InputError("interior point required, got |z| >= 1")
        if where == "boundary" and np.any(np.abs(r - 1.0) > BOUNDARY_TOL):
            raise InputError("boundary point required, got |z| != 1")
        return z

    # -- geometry ---------------------------------------------------------

    def defining_function(self, z) -> np.ndarray:
        """Signed Euclidean distance |z| - 1 (unit gradient on the boundary)."""
        return np.linalg.norm(self.points(z), axis=-1) - 1.0

    def project_to_boundary(self, z) -> np.ndarray:
        """Nearest boundary point, z/|z|; undefined at the origin."""
        z = self.points(z)
        r = np.linalg.norm(z, axis=-1, keepdims=True)
        if np.any(r == 0.0):
            raise ProjectionError("the boundary projection is undefined at the origin")
        return z / r

    def quasimetric(self, zeta, eta, *, check: bool = True) -> np.ndarray:
        """Boundary quasi-metric d(zeta, eta) = |1 - <zeta, eta>|."""
        if check:
            zeta = self.points(zeta, where="boundary")
            eta = self.points(eta, where="boundary")
        return np.abs(1.0 - inner(zeta, eta))

    def bergman_kernel(self, z, w) -> np.ndarray:
        """K(z, w) = n!/(pi^n (1 - <z, w>)^(n+1))."""
        z = self.points(z)
        w = self.points(w)
        return self.kernel_constant / (1.0 - inner(z, w)) ** (self.dimension + 1)

    def kernel_diagonal(self, z) -> np.ndarray:
        """K(z, z), computed without forming the complex power."""
        z = self.points(z)
        return self.kernel_constant / (1.0 - norm2(z)) ** (self.dimension + 1)

    def normalized_kernel(self, w, z) -> np.ndarray:
        """k_w(z) = K(z, w)/sqrt(K(w, w)); unit A^2 norm."""
        return self.bergman_kernel(z, w) / np.sqrt(self.kernel_diagonal(w))

    def kobayashi_tanh(self, z, w) -> np.ndarray:
        """tanh of the Kobayashi distance: the pseudo-hyperbolic |phi_z(w)|."""
        z = self.points(z, where="interior")
        w = self.points(w, where="interior")
        return np.linalg.norm(mobius(z, w), axis=-1)

    def kernel_bound_scale(self, p, q) -> np.ndarray:
        """|rho(p)| + |rho(q)| + d(pi(p), pi(q)), the kernel upper-bound scale."""
        p = self.points(p, where="interior")
        q = self.points(q, where="interior")
        dist = self.quasimetric(self.project_to_boundary(p), self.project_to_boundary(q), check=False)
        return np.abs(self.defining_function(p)) + np.abs(self.defining_function(q)) + dist

    # -- boundary measure --------------------------------------------------

    def ball_measure(self, r) -> np.ndarray:
        """Normalised surface measure of a quasi-ball of radius ``r``.

        Rotation invariance makes this independent of the centre.  On the
        circle it is an arc; for n >= 2 the first coordinate of a uniform
        boundary point has density (n-1)/pi (1-|w|^2)^(n-2) on the disc.
        """
        r = np.asarray(r, dtype=float)
        if self.dimension == 1:
            half = 2 * np.arcsin(np.clip(r / 2, 0.0, 1.0))
            return half / math.pi
        return _lens_measure(r, self.dimension)

    # -- Kobayashi balls ---------------------------------------------------

    def kobayashi_ellipsoid(self, c, radius):
        """Centre and semi-axes of the Kobayashi ball B(c, radius).

        The pseudo-hyperbolic ball is a Euclidean ellipsoid: semi-axis ``a``
        along the complex line through ``c``, ``b`` in the orthogonal complex
        directions.
        """
        c = self.points(c, where="interior")
        s2 = norm2(c)
        r2 = radius * radius
        centre = c * ((1 - r2) / (1 - r2 * s2))[..., None]
        a = radius * (1 - s2) / (1 - r2 * s2)
        b = radius * np.sqrt(1 - s2) / np.sqrt(1 - r2 * s2)
        return centre, a, b

    def kobayashi_ball_volume(self, c, radius) -> np.ndarray:
        _, a, b = self.kobayashi_ellipsoid(c, radius)
        return self.volume * a**2 * b ** (2 * (self.dimension - 1))

    def sample_kobayashi_ball(self, rng: np.random.Generator, c, radius, count: int) -> np.ndarray:
        """Uniform (Lebesgue) samples of B(c, radius) for one centre ``c``."""
        c = np.asarray(c, dtype=complex).reshape(self.dimension)
        centre, a, b = self.kobayashi_ellipsoid(c[None, :], radius)
        v = uniform_sphere(rng, count, self.dimension) * (
            rng.random(count) ** (1.0 / (2 * self.dimension))
        )[:, None]
        s = math.sqrt(norm2(c))
        if s == 0.0:
            return v * radius
        u = c / s
        par = inner(v, u)[:, None] * u[None, :]
        perp = v - par
        return centre + a[0] * par + b[0] * perp


    def sample_kobayashi_balls(self, rng: np.random.Generator, centres, radius, per: int) -> np.ndarray:
        """``per`` uniform samples in B(c, radius) for each centre, shape (len(centres), per, n)."""
        c = np.asarray(centres, dtype=complex).reshape(-1, self.dimension)
        centre, a, b = self.kobayashi_ellipsoid(c, radius)
        T, n = len(c), self.dimension
        v = uniform_sphere(rng, T * per, n).reshape(T, per, n)
        v = v * (rng.random((T, per)) ** (1.0 / (2 * n)))[:, :, None]
        s = np.sqrt(norm2(c))
        u = np.where((s > 0)[:, None], c / np.where(s > 0, s, 1.0)[:, None], 0.0)
        par = inner(v, u[:, None, :])[:, :, None] * u[:, None, :]
        perp = v - par
        return centre[:, None, :] + a[:, None, None] * par + b[:, None, None] * perp


def inner(z, w) -> np.ndarray:
    """Hermitian product <z, w> = sum z_j conj(w_j) over the last axis."""
    return np.sum(np.asarray(z) * np.conj(w), axis=-1)


def norm2(z) -> np.ndarray:
    z = np.asarray(z)
    return np.sum(z.real**2 + z.imag**2, axis=-1)


def mobius(a, z) -> np.ndarray:
    """The involutive automorphism phi_a of the ball, applied to ``z``.

    phi_a(z) = (a - P_a z - s_a Q_a z)/(1 - <z, a>) with s_a = sqrt(1-|a|^2),
    P_a the projection onto the complex line of ``a`` and Q_a = I - P_a.
    """
    a = np.asarray(a, dtype=complex)
    z = np.asarray(z, dtype=complex)
    a, z = np.broadcast_arrays(a, z)
    aa = norm2(a)
    za = inner(z, a)
    safe = np.where(aa > 0, aa, 1.0)
    proj = (za / safe)[..., None] * a
    proj = np.where((aa > 0)[..., None], proj, 0.0)
    s = np.sqrt(1.0 - aa)[..., None]
    out = (a - proj - s * (z - proj)) / (1.0 - za)[..., None]
    return np.where(np.all(a == z, axis=-1)[..., None], 0.0, out)


def mobius_jacobian(a, z) -> np.ndarray:
    """Real Jacobian of phi_a at z: ((1-|a|^2)/|1-<z,a>|^2)^(n+1)."""
    a = np.asarray(a, dtype=complex)
    z = np.asarray(z, dtype=complex)
    n = z.shape[-1]
    return ((1.0 - norm2(a)) / np.abs(1.0 - inner(z, a)) ** 2) ** (n + 1)


def _lens_measure(r, n) -> np.ndarray:
    """sigma{eta : |1 - eta_1| < r} for the sphere in C^n, n >= 2."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty_like(r)
    for i, ri in enumerate(r):
        out[i] = _lens_single(float(ri), n)
    return out if out.size > 1 else out.reshape(())


def _lens_single(r: float, n: int) -> float:
    if r <= 0:
        return 0.0
    if r >= 2:
        return 1.0
    # eta_1 = 1 - t e^{i theta}; integrate the density over the lens in
    # polar coordinates about 1: t < r, |1 - t e^{i theta}| < 1
    from scipy import integrate

    def radial(t):
        # |1 - t e^{i th}|^2 < 1  <=>  cos th > t/2
        th_max = math.acos(min(1.0, t / 2))

        def dens(th):
            w2 = 1 - 2 * t * math.cos(th) + t * t
            return (n - 1) / math.pi * max(0.0, 1 - w2) ** (n - 2) * t

        if n == 2:
            return (n - 1) / math.pi * t * 2 * th_max
        val, _ = integrate.quad(dens, -th_max, th_max, limit=200)
        return val

    val, _ = integrate.quad(radial, 0.0, r, limit=200)
    return min(1.0, val)


def cap_fraction(theta, m: int) -> np.ndarray:
    """Normalised area of a geodesic cap of polar angle ``theta`` on S^(m-1)."""
    theta = np.asarray(theta, dtype=float)
    if m == 2:
        return np.clip(theta / math.pi, 0.0, 1.0)
    a = (m - 1) / 2.0
    s2 = np.sin(np.minimum(theta, math.pi - 1e-300)) ** 2
    half = 0.5 * special.betainc(a, 0.5, s2)
    return np.where(theta <= math.pi / 2, half, 1.0 - half)


def cap_angle_inverse(u, m: int) -> np.ndarray:
    """Polar angle whose cap has normalised area ``u`` (inverse of cap_fraction)."""
    u = np.asarray(u, dtype=float)
    if m == 2:
        return u * math.pi
    a = (m - 1) / 2.0
    low = u <= 0.5
    x = special.betaincinv(a, 0.5, np.where(low, 2 * u, 2 * (1 - u)))
    theta = np.arcsin(np.sqrt(np.clip(x, 0.0, 1.0)))
    return np.where(low, theta, math.pi - theta)


def random_unitary(n: int, seed: int, *keys) -> np.ndarray:
    """Haar-random n x n unitary from a named seeded stream."""
    rng = rng_for(seed, "unitary", *keys)
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    d = np.diag(r)
    return q * (d / np.abs(d))


def model_from_name(name: str, eps0: float = 0.5) -> DomainModel:
    """Parse ``"disc"``, ``"ball:2"`` or ``"ball:3"``."""
    if name == "disc":
        return DomainModel(1, eps0)
    if name.startswith("ball:"):
        try:
            n = int(name.split(":", 1)[1])
        except ValueError:
            raise InputError(f"bad model name {name!r}") from None
        return DomainModel(n, eps0)
    raise InputError(f"unknown model {name!r}; expected disc, ball:2 or ball:3")


@dataclass(frozen=True)
class QuasiMetricCertificate:
    kappa: float
    doubling: float
    sample_count: int


def certify_homogeneous_type(model: DomainModel, sample_count: int, seed: int) -> QuasiMetricCertificate:
    """Measured quasi-triangle constant and doubling constant of (bOmega, d, sigma).

    Half the triples are uniform; the other half cluster at a random scale
    around a common point, where the supremum of d(x,y)/(d(x,z)+d(z,y)) is
    approached.  Doubling ratios use the empirical measure of a uniform
    boundary sample, over radii where a ball holds at least 64 samples.
    """
    if sample_count < 1000:
        raise InputError("sample_count must be at least 1000")
    n = model.dimension
    rng = rng_for(seed, "certify", model.name)
    half = sample_count // 2

    x = uniform_sphere(rng, sample_count, n)
    y = uniform_sphere(rng, sample_count, n)
    z = uniform_sphere(rng, sample_count, n)
    # clustered triples: perturb z at scale h in random directions
    h = 10.0 ** rng.uniform(-4, 0, size=sample_count - half)
    base = z[half:]
    for arr in (x, y):
        step = uniform_sphere(rng, sample_count - half, n) * h[:, None]
        moved = base + step
        arr[half:] = moved / np.linalg.norm(moved, axis=1, keepdims=True)
    if n >= 2:
        # equally spaced triples on complex-tangential great circles, where
        # d is quadratic in the step and the ratio 1 + cos(s) approaches 2
        m = sample_count // 4
        b = z[:m]
        v = uniform_sphere(rng, m, n)
        v = v - inner(v, b)[:, None] * b
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        s = 10.0 ** rng.uniform(-3, 0, size=m)[:, None]
        x[:m] = np.cos(s) * b - np.sin(s) * v
        y[:m] = np.cos(s) * b + np.sin(s) * v
    dxy = model.quasimetric(x, y, check=False)
    dxz = model.quasimetric(x, z, check=False)
    dzy = model.quasimetric(z, y, check=False)
    denom = dxz + dzy
    ok = denom > 0
    kappa = float(np.max(dxy[ok] / denom[ok]))

    pts = uniform_sphere(rng, sample_count, n)
    n_centres = min(200, sample_count)
    centres = pts[rng.choice(sample_count, n_centres, replace=False)]
    # smallest radius whose ball is expected to hold 64 samples
    grid_r = np.geomspace(1e-4, 1.0, 400)
    meas = np.asarray(model.ball_measure(grid_r))
    r_lo = float(grid_r[np.searchsorted(meas * sample_count, 64)])
    radii = np.exp(rng.uniform(math.log(r_lo), 0.0, size=n_centres))
    doubling = 1.0
    for c, r in zip(centres, radii):
        d = model.quasimetric(pts, c[None, :], check=False)
        inner_count = np.count_nonzero(d < r)
        outer_count = np.count_nonzero(d < 2 * r)
        if inner_count:
            doubling = max(doubling, outer_count / inner_count)
    return QuasiMetricCertificate(kappa=kappa, doubling=float(doubling), sample_count=sample_count)
