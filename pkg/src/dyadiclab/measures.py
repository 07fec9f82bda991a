"""Monte-Carlo measures on the ball: Lebesgue, pullbacks, integrals and norms.

Samples are drawn in fixed-size chunks, each from its own keyed stream,
so a measure depends only on (model, count, seed, proposal), never on how
the work is split.  Importance proposals are stratified mixtures of:

* ``uniform``: Lebesgue measure on the ball;
* ``boundary``: uniform direction, 1 - |x| log-uniform on [1e-7, 1];
* Möbius images of uniform points around each ``focus`` point a,
  with density J_a(x) / Vol, where J_a is the real Jacobian of phi_a.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._mc import batch_mean, dominant_share, rng_for, uniform_ball, uniform_sphere
from .domain import DomainModel, mobius, mobius_jacobian, model_from_name, norm2
from .errors import InputError, IntegrationError, SelfMapError
from .symbols import SymbolPair, TestFunction

CHUNK = 65536
BOUNDARY_TMIN = 1e-7
DIVERGENCE_SHARE = 0.2
_ATOM_MAGIC = b"DYATOM\x00\x01"


@dataclass(frozen=True)
class Proposal:
    """Stratified mixture proposal on the ball."""

    model: DomainModel
    uniform: bool = True
    boundary: bool = False
    focus: tuple = ()

    def components(self) -> list:
        out = ["uniform"] if self.uniform else []
        if self.boundary:
            out.append("boundary")
        out.extend(("focus", tuple(complex(x) for x in np.atleast_1d(a))) for a in self.focus)
        if not out:
            raise InputError("proposal needs at least one component")
        return out

    @property
    def tag(self) -> str:
        parts = []
        if self.uniform:
            parts.append("uniform")
        if self.boundary:
            parts.append("boundary")
        if self.focus:
            parts.append(f"focus{len(self.focus)}")
        return "+".join(parts)

    def _counts(self, count: int) -> list[int]:
        k = len(self.components())
        base = [count // k] * k
        base[0] += count - sum(base)
        return base

    def sample(self, count: int, seed: int, key: str) -> tuple[np.ndarray, np.ndarray]:
        """Points and proposal density (w.r.t. dV) at each point, in shuffled order."""
        n = self.model.dimension
        comps = self.components()
        counts = self._counts(count)
        pts = []
        for j, (comp, c) in enumerate(zip(comps, counts)):
            chunks = []
            for i, start in enumerate(range(0, c, CHUNK)):
                size = min(CHUNK, c - start)
                rng = rng_for(seed, key, self.model.name, j, i)
                if comp == "uniform":
                    chunks.append(uniform_ball(rng, size, n))
                elif comp == "boundary":
                    t = np.exp(rng.uniform(math.log(BOUNDARY_TMIN), 0.0, size))
                    chunks.append(uniform_sphere(rng, size, n) * (1.0 - t)[:, None])
                else:
                    a = np.asarray(comp[1])
                    chunks.append(mobius(a, uniform_ball(rng, size, n)))
            pts.append(np.concatenate(chunks) if chunks else np.zeros((0, n), complex))
        x = np.concatenate(pts)
        perm = rng_for(seed, key, self.model.name, "perm").permutation(len(x))
        x = x[perm]
        return x, self.density(x, counts)

    def density(self, x: np.ndarray, counts: Sequence[int] | None = None) -> np.ndarray:
        n = self.model.dimension
        vol = self.model.volume
        comps = self.components()
        if counts is None:
            counts = self._counts(10**6)
        weights = np.asarray(counts, dtype=float) / float(sum(counts))
        r = np.sqrt(norm2(x))
        out = np.zeros(len(x))
        for w, comp in zip(weights, comps):
            if comp == "uniform":
                out += w / vol
            elif comp == "boundary":
                t = 1.0 - r
                ok = (t >= BOUNDARY_TMIN) & (t <= 1.0) & (r > 0)
                p_t = np.where(ok, 1.0 / (np.maximum(t, BOUNDARY_TMIN) * math.log(1 / BOUNDARY_TMIN)), 0.0)
                area = 2 * n * vol
                with np.errstate(divide="ignore", invalid="ignore"):
                    out += w * np.where(ok, p_t / (area * np.maximum(r, 1e-300) ** (2 * n - 1)), 0.0)
            else:
                out += w * mobius_jacobian(np.asarray(comp[1]), x) / vol
        return out


@dataclass(frozen=True, eq=False)
class SampledMeasure:
    """Weighted atoms on the ball, optionally with a known density w.r.t. dV."""

    model: DomainModel
    points: np.ndarray
    weights: np.ndarray
    provenance: str
    seed: int
    density: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    @property
    def count(self) -> int:
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def scaled(self, factor: float) -> "SampledMeasure":
        dens = None
        if self.density is not None:
            base = self.density
            dens = lambda x: factor * base(x)  # noqa: E731
        return SampledMeasure(self.model, self.points, self.weights * factor, f"{factor:g}*{self.provenance}", self.seed, dens)


def sample_lebesgue(
    model: DomainModel, count: int, seed: int, *, proposal: Proposal | None = None
) -> SampledMeasure:
    """Lebesgue measure on the ball as MC atoms.

    With the default uniform proposal every weight is Vol / count, so the
    total mass is exact.  Other proposals give importance weights.
    """
    if count < 1000:
        raise InputError("count must be at least 1000")
    if proposal is None or proposal.tag == "uniform":
        x, _ = Proposal(model).sample(count, seed, "lebesgue")
        w = np.full(count, model.volume / count)
        prov = "lebesgue"
    else:
        x, m = proposal.sample(count, seed, "lebesgue")
        w = 1.0 / (count * m)
        prov = f"lebesgue[{proposal.tag}]"
    return SampledMeasure(model, x, w, prov, seed, density=lambda z: np.ones(len(z)))


def pullback_measure(
    model: DomainModel,
    sym: SymbolPair,
    count: int,
    seed: int,
    *,
    proposal: Proposal | None = None,
) -> SampledMeasure:
    """mu_{u,phi,q}: atoms phi(x_i) with weights |u(x_i)|^q / (count m(x_i)).

    For the uniform proposal m = 1/Vol, i.e. weights |u|^q Vol / count.
    When the pushforward has a computable density w.r.t. dV it is attached
    (see ``SymbolPair.pushforward_density``).
    """
    if sym.model != model:
        raise InputError("symbol and measure use different models")
    proposal = proposal or Proposal(model)
    # same stream as sample_lebesgue, so phi = id reproduces the Lebesgue atoms exactly
    x, m = proposal.sample(count, seed, "lebesgue")
    atoms = sym.phi(x)
    r = np.sqrt(norm2(atoms))
    if not np.all(r < 1.0):
        bad = int(np.argmax(~(r < 1.0)))
        raise SelfMapError(f"phi maps sample {bad} to |phi| = {r[bad]!r}")
    weights = np.abs(sym.u(x)) ** sym.q / (count * m)
    density = sym.pushforward_density()
    prov = f"pullback({sym.u_source}, {sym.phi_source}, {sym.q:g})[{proposal.tag}]"
    return SampledMeasure(model, atoms, weights, prov, seed, density)


@dataclass
class Estimate:
    value: float
    stderr: float
    count: int
    divergent: bool = False

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.stderr


def integrate(measure: SampledMeasure, f: Callable[[np.ndarray], np.ndarray]) -> Estimate:
    """Weighted atom sum with a 32-batch-means standard error."""
    vals = np.asarray(f(measure.points), dtype=float)
    terms = measure.weights * vals
    bad = ~np.isfinite(terms)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise IntegrationError(f"non-finite integrand at atom {i} (point {measure.points[i]})")
    mean, se = batch_mean(terms * measure.count)
    return Estimate(mean, se, measure.count, dominant_share(terms) > DIVERGENCE_SHARE)


def measure_integral(
    mu: SampledMeasure, g, count: int, seed: int, *, focus=(), boundary: bool = True
) -> Estimate:
    """int g dmu, through the density when known (importance-sampled dV), else the atoms."""
    if mu.density is None:
        return integrate(mu, g)
    prop = Proposal(mu.model, uniform=True, boundary=boundary, focus=tuple(focus))
    dens = mu.density
    return lebesgue_integral(mu.model, lambda x: g(x) * dens(x), count, seed, proposal=prop)


def lebesgue_integral(
    model: DomainModel, f, count: int, seed: int, *, proposal: Proposal | None = None
) -> Estimate:
    return integrate(sample_lebesgue(model, count, seed, proposal=proposal), f)


def ap_norm(
    model: DomainModel, f: TestFunction, p: float, count: int = 200_000, seed: int = 0
) -> Estimate:
    """||f||_p = (int |f|^p dV)^(1/p) with a delta-method standard error.

    Kernels k_w are integrated with a proposal focused at w; the estimate
    is flagged divergent when one atom carries a dominant share of the sum.
    """
    if p < 1:
        raise InputError("p must be >= 1")
    focus = ()
    if f.kind == "kernel":
        focus = (np.asarray(f.params[0]),)
    prop = Proposal(model, uniform=True, boundary=True, focus=focus)
    est = lebesgue_integral(model, lambda x: np.abs(f(x)) ** p, count, seed, proposal=prop)
    value = max(est.value, 0.0) ** (1.0 / p)
    se = value / (p * est.value) * est.stderr if est.value > 0 else 0.0
    return Estimate(value, se, count, est.divergent)


# -- serialisation ---------------------------------------------------------


def dumps_measure(measure: SampledMeasure) -> bytes:
    header = {
        "model": measure.model.name,
        "eps0": measure.model.eps0,
        "provenance": measure.provenance,
        "seed": measure.seed,
        "count": measure.count,
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = measure.points.astype("<c16").tobytes() + measure.weights.astype("<f8").tobytes()
    return _ATOM_MAGIC + struct.pack("<Q", len(head)) + head + body


def loads_measure(data: bytes) -> SampledMeasure:
    if not data.startswith(_ATOM_MAGIC):
        raise InputError("not an atom file")
    (hlen,) = struct.unpack("<Q", data[len(_ATOM_MAGIC) : len(_ATOM_MAGIC) + 8])
    start = len(_ATOM_MAGIC) + 8
    header = json.loads(data[start : start + hlen])
    model = model_from_name(header["model"], header["eps0"])
    n, count = model.dimension, header["count"]
    body = data[start + hlen :]
    pts = np.frombuffer(body, dtype="<c16", count=count * n).reshape(count, n).astype(complex)
    w = np.frombuffer(body, dtype="<f8", count=count, offset=16 * count * n).astype(float)
    return SampledMeasure(model, pts, w, header["provenance"], header["seed"])


@dataclass
class IntegralRecord:
    integrand: str
    value: float
    stderr: float
    count: int
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def integral_log(records: Sequence[IntegralRecord]) -> str:
    out = io.StringIO()
    for r in records:
        out.write(r.to_json() + "\n")
    return out.getvalue()
