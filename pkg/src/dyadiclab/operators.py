"""Operator-side quantities on the tent structure.

Everything here is a Monte-Carlo estimate over a built ``TentTree``:
Carleson ratios, Berezin transforms, the basis and fractional maximal
operators, the pointwise and sparse bounds, the compactness diagnostic,
Muckenhoupt and Sawyer-type testing constants and the weighted estimate.

Tent averages are computed once per integrand set (``TentTable``) and
then read along the chain of tents containing each point.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ._mc import rng_for, uniform_sphere
from .domain import DomainModel, mobius, norm2
from .errors import InputError
from .measures import Estimate, Proposal, SampledMeasure, lebesgue_integral, measure_integral
from .symbols import SymbolPair, TestFunction, Weight, kernel_sequence
from .tents import TentTree

LOW_CONFIDENCE = 0.2
SWEEP_RADII = (0.9, 0.99, 0.999)
SAWYER_RADII = (0.0, 0.5, 0.9, 0.99, 0.999)
TREND_FACTOR = 2.0


def apply_weighted_composition(sym: SymbolPair, f, z) -> np.ndarray:
    """(W_{u,phi} f)(z) = u(z) f(phi(z)) at interior points."""
    z = sym.model.points(z, where="interior")
    return sym.apply(f, z)


def _focus_of(f) -> tuple:
    if isinstance(f, TestFunction) and f.kind == "kernel":
        w = np.asarray(f.params[0], dtype=complex).reshape(-1)
        if norm2(w) > 0:
            return (w,)
    return ()


def sweep_directions(model: DomainModel, count: int = 8) -> np.ndarray:
    """Unit boundary directions; the first is e_1 (the point 1 on the circle)."""
    n = model.dimension
    if n == 1:
        return np.exp(2j * np.pi * np.arange(count) / count)[:, None]
    rest = uniform_sphere(rng_for(0, "sweep-directions", n), count - 1, n)
    e1 = np.zeros((1, n), dtype=complex)
    e1[0, 0] = 1.0
    return np.concatenate([e1, rest])


def _norm_q(model, f, p, count, seed) -> Estimate:
    prop = Proposal(model, uniform=True, boundary=True, focus=_focus_of(f))
    return lebesgue_integral(model, lambda x: np.abs(f(x)) ** p, count, seed, proposal=prop)


# -- tent tables ------------------------------------------------------------


class TentTable:
    """Tent integrals of a fixed set of integrands, indexed per grid by cube id."""

    def __init__(
        self,
        tree: TentTree,
        integrands: Mapping[str, Callable] | None = None,
        *,
        seed: int = 0,
        per_tent: int = 64,
        target_hits: int | None = 48,
        max_per_tent: int = 4096,
        focus: Mapping[str, np.ndarray] | None = None,
    ):
        self.tree = tree
        self.ints = tree.integrate_tents(
            integrands, per_tent=per_tent, seed=seed, target_hits=target_hits, max_per_tent=max_per_tent, focus=focus
        )
        sizes = [g.n_cubes for g in tree.grids]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])

    def values(self, name: str, g: int) -> np.ndarray:
        return self.ints.estimates[name][self._offsets[g] : self._offsets[g + 1]]

    def errors(self, name: str, g: int) -> np.ndarray:
        return self.ints.errors[name][self._offsets[g] : self._offsets[g + 1]]

    def volume(self, g: int) -> np.ndarray:
        return self.values("volume", g)

    def average(self, name: str, g: int) -> np.ndarray:
        vol = self.volume(g)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(vol > 0, self.values(name, g) / vol, 0.0)

    def chains(self, z) -> list[np.ndarray]:
        """Per grid, the (count, depth+1) ids of the tents containing each point (-1: none)."""
        return [self.tree.tents_containing(g, z) for g in range(len(self.tree.grids))]


def _chain_reduce(table: TentTable, per_cube: Sequence[np.ndarray], z, reduce: str) -> np.ndarray:
    """Max or sum of a per-cube quantity over every tent containing each point."""
    chains = table.chains(z)
    out = None
    for g, ids in enumerate(chains):
        vals = np.where(ids >= 0, per_cube[g][np.maximum(ids, 0)], 0.0 if reduce == "sum" else -np.inf)
        part = vals.sum(axis=1) if reduce == "sum" else vals.max(axis=1)
        out = part if out is None else (out + part if reduce == "sum" else np.maximum(out, part))
    return out


# -- Carleson ratios --------------------------------------------------------


@dataclass
class CarlesonReport:
    lam: float
    grid: np.ndarray
    cube: np.ndarray
    generation: np.ndarray
    mu: np.ndarray
    mu_se: np.ndarray
    volume: np.ndarray
    volume_se: np.ndarray
    ratio: np.ndarray
    low_confidence: np.ndarray
    route: str

    @property
    def sup_ratio(self) -> float:
        return float(self.ratio.max())

    @property
    def argmax(self) -> tuple[int, int]:
        """First cube (in grid, cube order) within a relative 1e-12 of the sup, so ties are stable."""
        top = self.ratio.max()
        i = int(np.flatnonzero(self.ratio >= top - 1e-12 * abs(top))[0])
        return int(self.grid[i]), int(self.cube[i])

    @property
    def per_cube(self) -> list[tuple]:
        return [
            (int(g), int(q), float(m), float(v), float(r))
            for g, q, m, v, r in zip(self.grid, self.cube, self.mu, self.volume, self.ratio)
        ]

    @property
    def boundary_trend(self) -> list[tuple[int, float]]:
        ks = np.unique(self.generation)
        return [(int(k), float(self.ratio[self.generation == k].max())) for k in ks]

    def ratio_of(self, g: int, q: int) -> float:
        i = np.flatnonzero((self.grid == g) & (self.cube == q))
        return float(self.ratio[i[0]])

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "route": self.route,
            "supRatio": self.sup_ratio,
            "argmax": list(self.argmax),
            "boundaryTrend": [list(t) for t in self.boundary_trend],
            "lowConfidence": int(self.low_confidence.sum()),
            "cubes": int(len(self.ratio)),
        }


def carleson_report(
    tree: TentTree,
    mu: SampledMeasure,
    lam: float,
    *,
    seed: int = 0,
    per_tent: int = 64,
    target_hits: int | None = 48,
    route: str = "auto",
    table: TentTable | None = None,
) -> CarlesonReport:
    """Ratios mu(T(Q)) / Vol(T(Q))^lam over every cube of every grid.

    ``route="density"`` integrates the density of mu over tent samples
    (shared with the volume estimate); ``route="atoms"`` sums the atoms
    falling in each tent.  ``auto`` uses the density when mu has one.
    """
    if lam < 1:
        raise InputError("lambda must be >= 1")
    if mu.model != tree.model:
        raise InputError("measure and tree use different models")
    if route == "auto":
        route = "density" if mu.density is not None else "atoms"
    if route == "density" and mu.density is None:
        raise InputError("measure has no density")
    if table is None:
        integrands = {"mu": mu.density} if route == "density" else None
        table = TentTable(tree, integrands, seed=seed, per_tent=per_tent, target_hits=target_hits)
    rows = {k: [] for k in ("g", "q", "k", "mu", "mu_se", "vol", "vol_se")}
    for g, grid in enumerate(tree.grids):
        vol = table.volume(g)
        if route == "density":
            m, mse = table.values("mu", g), table.errors("mu", g)
        else:
            m, mse = _atom_tent_mass(tree, g, mu)
        rows["g"].append(np.full(grid.n_cubes, g))
        rows["q"].append(np.arange(grid.n_cubes))
        rows["k"].append(grid.cube_generation)
        rows["mu"].append(m)
        rows["mu_se"].append(mse)
        rows["vol"].append(vol)
        rows["vol_se"].append(table.errors("volume", g))
    cat = {k: np.concatenate(v) for k, v in rows.items()}
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(cat["vol"] > 0, cat["mu"] / cat["vol"] ** lam, 0.0)
        low = ~(cat["vol_se"] <= LOW_CONFIDENCE * cat["vol"])
    return CarlesonReport(
        lam, cat["g"], cat["q"], cat["k"], cat["mu"], cat["mu_se"], cat["vol"], cat["vol_se"], ratio, low, route
    )


def _atom_tent_mass(tree: TentTree, g: int, mu: SampledMeasure):
    """mu(T(Q)) and its standard error from the atoms, for every cube of grid g."""
    n_cubes = tree.grids[g].n_cubes
    ids = tree.tents_containing(g, mu.points)
    s1 = np.zeros(n_cubes)
    s2 = np.zeros(n_cubes)
    for k in range(ids.shape[1]):
        col = ids[:, k]
        ok = col >= 0
        s1 += np.bincount(col[ok], weights=mu.weights[ok], minlength=n_cubes)
        s2 += np.bincount(col[ok], weights=mu.weights[ok] ** 2, minlength=n_cubes)
    var = np.maximum(s2 - s1**2 / mu.count, 0.0)
    return s1, np.sqrt(var)


def carleson_sweep(tree: TentTree, report: CarlesonReport, points) -> float:
    """Largest ratio over the tents containing any of ``points``."""
    table_like = [report.ratio[report.grid == g] for g in range(len(tree.grids))]
    best = -np.inf
    for g in range(len(tree.grids)):
        ids = tree.tents_containing(g, points)
        vals = table_like[g][ids[ids >= 0]]
        if vals.size:
            best = max(best, float(vals.max()))
    return best


# -- Berezin transform ------------------------------------------------------


def berezin_transform(
    model: DomainModel, mu: SampledMeasure, p: float, q: float, z, *, count: int = 100_000, seed: int = 0
) -> Estimate:
    """int |K(xi, z)|^(2q/p) / K(z, z)^(q/p) dmu(xi) at one interior point z."""
    if not 1.0 <= p <= q:
        raise InputError("need 1 <= p <= q")
    z = model.points(z, where="interior").reshape(1, -1)
    lam = q / p
    kzz = float(model.kernel_diagonal(z)[0])

    def g(xi):
        return np.abs(model.bergman_kernel(xi, z)) ** (2 * lam) / kzz**lam

    focus = (z[0],) if norm2(z[0]) > 0 else ()
    return measure_integral(mu, g, count, seed, focus=focus)


@dataclass
class SweepValues:
    radii: list[float]
    values: list[list[float]]
    errors: list[list[float]]

    @property
    def per_radius(self) -> list[float]:
        return [max(v) for v in self.values]

    @property
    def sup(self) -> float:
        return max(self.per_radius)


def berezin_sweep(
    model: DomainModel,
    mu: SampledMeasure,
    p: float,
    q: float,
    *,
    radii: Sequence[float] = SWEEP_RADII,
    directions: int = 8,
    count: int = 50_000,
    seed: int = 0,
) -> SweepValues:
    dirs = sweep_directions(model, directions)
    vals, errs = [], []
    for r in radii:
        row = [berezin_transform(model, mu, p, q, r * d, count=count, seed=seed) for d in dirs]
        vals.append([e.value for e in row])
        errs.append([e.stderr for e in row])
    return SweepValues(list(radii), vals, errs)


# -- maximal operators ------------------------------------------------------


class MaximalOperator:
    """M_T f(z) = sup over tents containing z of <|f|>_T, from one tent table.

    The fractional version multiplies each average by Vol(T)^alpha.
    """

    def __init__(self, tree: TentTree, functions: Mapping[str, Callable], *, seed: int = 0, **table_kw):
        self.tree = tree
        self.names = list(functions)
        integrands = {name: (lambda x, f=f: np.abs(f(x))) for name, f in functions.items()}
        focus = {name: _focus_of(f)[0] for name, f in functions.items() if _focus_of(f)}
        self.table = TentTable(tree, integrands, seed=seed, focus=focus, **table_kw)

    def average(self, name: str, g: int) -> np.ndarray:
        return self.table.average(name, g)

    def __call__(self, name: str, z, alpha: float = 0.0) -> np.ndarray:
        per_cube = []
        for g in range(len(self.tree.grids)):
            a = self.average(name, g)
            if alpha:
                a = a * self.table.volume(g) ** alpha
            per_cube.append(a)
        return _chain_reduce(self.table, per_cube, z, "max")


def basis_maximal(tree: TentTree, f, z, *, seed: int = 0, **table_kw) -> np.ndarray:
    return MaximalOperator(tree, {"f": f}, seed=seed, **table_kw)("f", z)


def fractional_maximal(tree: TentTree, f, alpha: float, z, *, seed: int = 0, **table_kw) -> np.ndarray:
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)")
    return MaximalOperator(tree, {"f": f}, seed=seed, **table_kw)("f", z, alpha)


def check_exponent_identity(p: float, q: float, alpha: float) -> bool:
    """1 + alpha q - q + q/p' = 0 whenever 1/p - 1/q = alpha."""
    if not p > 1.0 or abs(1.0 / p - 1.0 / q - alpha) > 1e-12:
        raise InputError(f"need p > 1 and 1/p - 1/q = alpha, got p={p}, q={q}, alpha={alpha}")
    p_dual = p / (p - 1.0)
    return abs(1.0 + alpha * q - q + q / p_dual) <= 1e-12


@dataclass
class MaximalReport:
    p: float
    q: float
    alpha: float
    weight: str
    ratios: dict[str, float]
    weak: dict[str, float] = field(default_factory=dict)

    @property
    def constant(self) -> float:
        return max(self.ratios.values())

    @property
    def weak_constant(self) -> float:
        return max(self.weak.values()) if self.weak else 0.0


def maximal_inequality(
    op: MaximalOperator,
    functions: Mapping[str, Callable],
    p: float,
    *,
    alpha: float = 0.0,
    q: float | None = None,
    weight: Weight | None = None,
    count: int = 50_000,
    seed: int = 0,
    thresholds: Sequence[float] = (),
) -> MaximalReport:
    """||M_{T,alpha} f||_{L^q(w)} / ||f||_{L^p(w)} per function, plus weak-type ratios.

    The weak-type ratio is sup_t t^q w{M f > t} / ||f||_{L^p(w)}^q over
    ``thresholds`` (multiplied by M f at the origin to follow its scale).
    """
    q = p if q is None else q
    model = op.tree.model
    ratios, weak = {}, {}
    for name, f in functions.items():
        focus = _focus_of(f)
        prop = Proposal(model, uniform=True, boundary=True, focus=focus)
        x, dens = prop.sample(count, seed, f"maximal:{name}")
        w = 1.0 / (count * dens)
        if weight is not None:
            w = w * weight(x)
        mf = op(name, x, alpha)
        fx = np.abs(f(x))
        lhs = math.fsum(w * mf**q) ** (1.0 / q)
        rhs = math.fsum(w * fx**p) ** (1.0 / p)
        ratios[name] = lhs / rhs if rhs > 0 else 0.0
        if thresholds and rhs > 0:
            scale = float(op(name, np.zeros((1, model.dimension)), alpha)[0])
            vals = [t * scale for t in thresholds]
            weak[name] = max(t**q * math.fsum(w[mf > t]) for t in vals) / rhs**q
    label = weight.label if weight is not None else "1"
    return MaximalReport(p, q, alpha, label, ratios, weak)


# -- pointwise and sparse bounds --------------------------------------------


def admissible_N(p: float, q: float) -> list[int]:
    """Integers N for the sparse theorems: 1 <= N <= p when p = q, else N < p < q < p + N."""
    if not 1.0 <= p <= q:
        raise InputError("need 1 <= p <= q")
    top = int(math.floor(p))
    if p == q:
        return list(range(1, top + 1))
    return [N for N in range(1, top + 1) if N < p < q < p + N]


def _check_N(N, p, q):
    if int(N) != N or not 1 <= N <= p:
        raise InputError(f"N must be an integer in [1, p], got {N}")
    if p < q and N not in admissible_N(p, q):
        raise InputError(f"N={N} is not in Z_(p,q) for p={p}, q={q}")


def _power_name(label: str, e: float) -> str:
    return f"{label}^{e:g}"


def power_table(tree: TentTree, functions: Mapping[str, Callable], exponents, *, seed: int = 0, **kw) -> TentTable:
    """Tent integrals of |f|^e for every function and every positive exponent."""
    integrands, focus = {}, {}
    for name, f in functions.items():
        for e in sorted(set(float(x) for x in exponents if x > 0)):
            integrands[_power_name(name, e)] = lambda x, f=f, e=e: np.abs(f(x)) ** e
            if _focus_of(f):
                focus[_power_name(name, e)] = _focus_of(f)[0]
    return TentTable(tree, integrands, seed=seed, focus=focus, **kw)


def _power_average(table: TentTable, name: str, e: float, g: int) -> np.ndarray:
    if e == 0:
        return (table.volume(g) > 0).astype(float)
    return table.average(_power_name(name, e), g)


@dataclass
class SparseSum:
    value: float
    per_generation: list[float]


def sparse_sum(table: TentTable, name: str, p: float, q: float, N: int) -> SparseSum:
    """sum_i sum_Q Vol(T(Q))^(q/p) <|f|^N>_T <|f|^(q-N)>_T over all tents, root included.

    ``table`` must hold |f|^N and |f|^(q-N) under ``name`` (see ``power_table``).
    """
    _check_N(N, p, q)
    tree = table.tree
    per_gen = np.zeros(tree.depth + 1)
    for g, grid in enumerate(tree.grids):
        terms = table.volume(g) ** (q / p) * _power_average(table, name, N, g) * _power_average(table, name, q - N, g)
        per_gen += np.bincount(grid.cube_generation, weights=terms, minlength=tree.depth + 1)
    return SparseSum(math.fsum(per_gen), per_gen.tolist())


@dataclass
class SparseReport:
    symbol: str
    function: str
    N: int
    p: float
    q: float
    lhs: float
    rhs: float

    @property
    def empirical_c(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else 0.0


def sparse_reports(
    tree: TentTree,
    table: TentTable,
    sym: SymbolPair,
    mu: SampledMeasure,
    functions: Mapping[str, Callable],
    *,
    count: int = 100_000,
    seed: int = 0,
) -> list[SparseReport]:
    """||W f||_q^q against the sparse sum for every admissible N and function."""
    p, q = sym.p, sym.q
    out = []
    for name, f in functions.items():
        lhs = measure_integral(mu, lambda x, f=f: np.abs(f(x)) ** q, count, seed, focus=_focus_of(f)).value
        for N in admissible_N(p, q):
            rhs = sparse_sum(table, name, p, q, N).value
            out.append(SparseReport(sym.label, name, N, p, q, lhs, rhs))
    return out


@dataclass
class PointwiseResult:
    lhs: float
    lhs_se: float
    rhs: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else 0.0


def pointwise_bound_check(
    table: TentTable,
    mu: SampledMeasure,
    f,
    name: str,
    p: float,
    q: float,
    N: int,
    z,
    *,
    count: int = 50_000,
    seed: int = 0,
) -> PointwiseResult:
    """Both sides of the pointwise bound at one interior point z.

    lhs = int |f(w)|^(q-N) |K(z, w)| dmu(w);
    rhs = sum over tents T containing z of Vol(T)^(q/p - 1) <|f|^(q-N)>_T.
    """
    _check_N(N, p, q)
    model = mu.model
    z = model.points(z, where="interior").reshape(1, -1)
    e = q - N

    def g(w):
        return np.abs(f(w)) ** e * np.abs(model.bergman_kernel(w, z))

    focus = ((z[0],) if norm2(z[0]) > 0 else ()) + _focus_of(f)
    est = measure_integral(mu, g, count, seed, focus=focus)
    tree = table.tree
    per_cube = [table.volume(gi) ** (q / p - 1.0) * _power_average(table, name, e, gi) for gi in range(len(tree.grids))]
    rhs = float(_chain_reduce(table, per_cube, z, "sum")[0])
    return PointwiseResult(est.value, est.stderr, rhs)


@dataclass
class ConstantFit:
    """A '<~' check: C fitted on one seed, then checked on a fresh seed with a margin."""

    constant: float
    check_max: float
    margin: float = 0.25

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.constant)) and self.check_max <= (1.0 + self.margin) * self.constant


def fit_constant(calibration: Sequence[float], check: Sequence[float], margin: float = 0.25) -> ConstantFit:
    return ConstantFit(float(max(calibration)), float(max(check)), margin)


# -- compactness ------------------------------------------------------------


@dataclass
class CompactnessReport:
    beta: float
    N: int
    rows: list[dict]
    per_generation: dict[int, float]
    skipped_leaves: int

    @property
    def deep_max(self) -> float:
        deepest = max(self.per_generation)
        return self.per_generation[deepest]


def compactness_diagnostic(
    tree: TentTree,
    sym: SymbolPair,
    mu: SampledMeasure,
    N: int = 1,
    *,
    beta: float,
    m_max: int = 10,
    seed: int = 0,
    ball_samples: int = 32,
    union_samples: int = 64,
    table: TentTable | None = None,
    grids: Sequence[int] | None = None,
    per_tent: int = 64,
    target_hits: int | None = 48,
) -> CompactnessReport:
    """Per cube Q, max over m of

        sum_{Q' offspring of Q} mu(kube Q') <|f_m|^(q-N)>_{B(c_Q', beta)}
        / ( Vol(T(Q)) <|f_m|^(q-N)>_{T^E(Q)} )

    with f_m = k_{w_m}, |w_m| = 1 - 2^-m.  T^E(Q) is the union of the
    offspring balls; its average is sampled from a volume-weighted ball
    mixture with each point down-weighted by its multiplicity.  Leaf
    cubes have no offspring and are skipped.
    """
    if not 0.0 < beta < 1.0:
        raise InputError("beta must lie in (0, 1)")
    _check_N(N, sym.p, sym.q)
    model = tree.model
    e = sym.q - N
    fseq = kernel_sequence(model, m_max)
    if table is None:
        integrands = {"mu": mu.density} if mu.density is not None else None
        table = TentTable(tree, integrands, seed=seed, per_tent=per_tent, target_hits=target_hits)

    def powers(x):
        flat = x.reshape(-1, model.dimension)
        out = np.stack([np.abs(f(flat)) ** e for f in fseq], axis=-1) if e else np.ones((len(flat), len(fseq)))
        return out.reshape(x.shape[:-1] + (len(fseq),))

    rows, per_gen, skipped = [], {}, 0
    for g in grids if grids is not None else range(len(tree.grids)):
        grid = tree.grids[g]
        n_cubes = grid.n_cubes
        if mu.density is not None:
            mu_kube = table.values("mu|kube", g)
        else:
            lab = tree.kube_of(g, mu.points)
            mu_kube = np.bincount(lab, weights=mu.weights, minlength=n_cubes)
        centres = tree.world_tent_centers(g)
        rng = rng_for(seed, "compact-balls", g)
        avg_ball = np.zeros((n_cubes, len(fseq)))
        for start in range(1, n_cubes, 4096):
            sl = slice(start, min(n_cubes, start + 4096))
            pts = model.sample_kobayashi_balls(rng, centres[sl], beta, ball_samples)
            avg_ball[sl] = powers(pts).mean(axis=1)
        # numerator: subtree sums over strict descendants, deepest generation first
        own = mu_kube[:, None] * avg_ball
        acc = np.zeros_like(own)
        for k in range(tree.depth, 0, -1):
            sl = grid.generation_slices[k]
            ids = np.arange(sl.start, sl.stop)
            np.add.at(acc, grid.cube_parent[ids], own[ids] + acc[ids])
        vol = table.volume(g)
        for k in range(tree.depth):
            sl = grid.generation_slices[k]
            for q in range(sl.start, sl.stop):
                kids = tree.offspring(g, q)
                if kids.size == 0:
                    skipped += 1
                    continue
                den = _union_average(model, centres[kids], beta, union_samples, rng_for(seed, "compact-union", g, q), powers)
                with np.errstate(divide="ignore", invalid="ignore"):
                    r = np.where(den > 0, acc[q] / (vol[q] * den), 0.0)
                m_best = int(np.argmax(r))
                dist = 1.0 - math.sqrt(float(norm2(centres[q])))
                rows.append({"grid": g, "cube": q, "k": k, "dist": dist, "ratio": float(r[m_best]), "m": m_best + 1})
                per_gen[k] = max(per_gen.get(k, 0.0), float(r[m_best]))
        skipped += int(grid.generation_slices[tree.depth].stop - grid.generation_slices[tree.depth].start)
    return CompactnessReport(beta, N, rows, per_gen, skipped)


def _union_average(model, centres, beta, samples, rng, powers) -> np.ndarray:
    """Average of ``powers`` over the union of B(c_j, beta), one value per sequence member."""
    vols = model.kobayashi_ball_volume(centres, beta)
    pick = rng.choice(len(centres), size=samples, p=vols / vols.sum())
    x = model.sample_kobayashi_balls(rng, centres[pick], beta, 1)[:, 0, :]
    mult = np.zeros(samples)
    for start in range(0, len(centres), 8192):
        c = centres[start : start + 8192]
        t = np.sqrt(norm2(mobius(c[None, :, :], x[:, None, :])))
        mult += (t < beta).sum(axis=1)
    inv = 1.0 / np.maximum(mult, 1.0)
    return (powers(x) * inv[:, None]).sum(axis=0) / inv.sum()


# -- Muckenhoupt and Sawyer-type constants ----------------------------------


@dataclass
class MuckenhouptReport:
    p: float
    weight: str
    constant: float
    per_generation: dict[int, float]
    flagged: int
    argmax: tuple[int, int]


def muckenhoupt_constant(
    tree: TentTree, omega: Weight, p: float, *, seed: int = 0, per_tent: int = 64, target_hits: int | None = 48
) -> MuckenhouptReport:
    """sup over tents of <w>_T <w^(1-p')>_T^(p-1).

    Tents where the estimate of <w^(1-p')> has relative error above 50%
    or no samples are flagged and left out of the supremum.
    """
    if not p > 1:
        raise InputError("p must be > 1")
    expo = 1.0 - p / (p - 1.0)

    def inv(x):
        w = omega(x)
        with np.errstate(divide="ignore"):
            return np.where(w > 0, w, np.nan) ** expo

    table = TentTable(tree, {"w": omega, "winv": inv}, seed=seed, per_tent=per_tent, target_hits=target_hits)
    best, arg, flagged, per_gen = -np.inf, (0, 0), 0, {}
    for g, grid in enumerate(tree.grids):
        a = table.average("w", g)
        b = table.average("winv", g)
        est, se = table.values("winv", g), table.errors("winv", g)
        bad = ~np.isfinite(b) | (table.volume(g) <= 0) | ~(se <= 0.5 * est)
        prod = np.where(bad, -np.inf, a * np.where(np.isfinite(b), b, 0.0) ** (p - 1.0))
        flagged += int(bad.sum())
        i = int(np.argmax(prod))
        if prod[i] > best:
            best, arg = float(prod[i]), (g, i)
        for k in range(tree.depth + 1):
            sl = grid.generation_slices[k]
            v = float(prod[sl].max())
            per_gen[k] = max(per_gen.get(k, -np.inf), v)
    return MuckenhouptReport(p, omega.label, best, per_gen, flagged, arg)


@dataclass
class SawyerReport:
    exponent: float
    radii: list[float]
    values: list[list[float]]
    errors: list[list[float]]
    divergent: bool
    slope: float

    @property
    def per_radius(self) -> list[float]:
        return [max(v) for v in self.values]

    @property
    def constant(self) -> float:
        """Sup over the sweep; infinite when the sweep is flagged divergent."""
        return math.inf if self.divergent else max(self.per_radius)

    @property
    def sweep_max(self) -> float:
        return max(self.per_radius)


def testing_sweep(
    model: DomainModel,
    sym: SymbolPair,
    omega: Weight,
    *,
    exponent: float = 1.0,
    radii: Sequence[float] = SAWYER_RADII,
    directions: int = 8,
    count: int = 100_000,
    seed: int = 0,
) -> SawyerReport:
    """[omega^exponent]_B over a xi-sweep: sup_xi int |u|^q omega^exponent |K(phi(z), xi)| dV(z).

    The sweep is flagged divergent when the increment over the last decade
    of 1/(1-|xi|) is both significant and at least half the previous one
    (logarithmic or faster growth); ``slope`` is the least-squares slope
    against log(1/(1-|xi|)) over the three outermost radii.
    """
    dirs = sweep_directions(model, directions)
    vals, errs = [], []

    def base(x):
        return np.abs(sym.u(x)) ** sym.q * omega(x) ** exponent

    for r in radii:
        row_v, row_e = [], []
        for d in dirs if r > 0 else dirs[:1]:
            xi = (r * d).reshape(1, -1)
            prop = Proposal(model, uniform=True, boundary=True, focus=(xi[0],) if r > 0 else ())
            est = lebesgue_integral(
                model, lambda x, xi=xi: base(x) * np.abs(model.bergman_kernel(sym.phi(x), xi)), count, seed, proposal=prop
            )
            row_v.append(est.value)
            row_e.append(est.stderr)
        vals.append(row_v)
        errs.append(row_e)
    per = np.array([max(v) for v in vals])
    per_se = np.array([e[int(np.argmax(v))] for v, e in zip(vals, errs)])
    radii = list(radii)
    divergent, slope = False, 0.0
    if len(radii) >= 3:
        L = np.log(1.0 / (1.0 - np.asarray(radii[-3:])))
        slope = float(np.polyfit(L, per[-3:], 1)[0])
        inc_prev, inc_last = per[-2] - per[-3], per[-1] - per[-2]
        noise = 3.0 * math.hypot(per_se[-1], per_se[-2])
        divergent = bool(inc_last > noise and inc_last >= 0.5 * inc_prev)
    return SawyerReport(exponent, radii, vals, errs, divergent, slope)


def sawyer_testing_constant(
    model: DomainModel, sym: SymbolPair, omega: Weight, s: float, **kw
) -> SawyerReport:
    """[omega^s']_B with s' = s/(s-1), for s in (1, q')."""
    q_dual = sym.q / (sym.q - 1.0) if sym.q > 1 else math.inf
    if not 1.0 < s < q_dual:
        raise InputError(f"s must lie in (1, q') = (1, {q_dual:g})")
    return testing_sweep(model, sym, omega, exponent=s / (s - 1.0), **kw)


@dataclass
class WeightedReport:
    s: float
    s_prime: float
    testing: SawyerReport
    ratios: dict[str, float]
    skipped: bool = False
    reason: str = ""

    @property
    def max_ratio(self) -> float:
        return max(self.ratios.values()) if self.ratios else math.nan


def weighted_estimate_check(
    model: DomainModel,
    sym: SymbolPair,
    omega: Weight,
    s: float,
    functions: Mapping[str, Callable],
    *,
    count: int = 100_000,
    seed: int = 0,
    testing: SawyerReport | None = None,
    **sweep_kw,
) -> WeightedReport:
    """Per f: int |W f|^q w dV / ([w^s']_B^(1/s') ||f||_q^q)."""
    model = getattr(model, "model", model)
    s_prime = s / (s - 1.0)
    testing = testing or sawyer_testing_constant(model, sym, omega, s, count=count, seed=seed, **sweep_kw)
    if testing.divergent:
        return WeightedReport(s, s_prime, testing, {}, True, "testing constant diverges along the sweep")
    scale = testing.sweep_max ** (1.0 / s_prime)
    ratios = {}
    for name, f in functions.items():
        focus = _focus_of(f)
        prop = Proposal(model, uniform=True, boundary=True, focus=focus)
        lhs = lebesgue_integral(
            model, lambda x, f=f: np.abs(sym.apply(f, x)) ** sym.q * omega(x), count, seed, proposal=prop
        ).value
        norm = _norm_q(model, f, sym.q, count, seed).value
        ratios[name] = lhs / (scale * norm) if scale * norm > 0 else 0.0
    return WeightedReport(s, s_prime, testing, ratios)


# -- boundedness equivalence ------------------------------------------------


def trending_up(values: Sequence[float], factor: float = TREND_FACTOR) -> bool:
    """Strictly increasing along the sweep and growing by more than ``factor``."""
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) > 0) and v[-1] > factor * v[0])


@dataclass
class EquivalenceReport:
    symbol: str
    sup_ratio: float
    berezin_sup: float
    operator_proxy: float
    radii: list[float]
    sweeps: dict[str, list[float]]

    @property
    def trends(self) -> dict[str, bool]:
        return {k: trending_up(v) for k, v in self.sweeps.items()}

    @property
    def finite(self) -> bool:
        return all(math.isfinite(x) for x in (self.sup_ratio, self.berezin_sup, self.operator_proxy))

    @property
    def verdict(self) -> str:
        t = list(self.trends.values())
        if all(t):
            return "blow-up"
        if not any(t) and self.finite:
            return "bounded"
        return "discordant"

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(trends=self.trends, verdict=self.verdict, finite=self.finite)
        return d


def operator_proxy(
    sym: SymbolPair, mu: SampledMeasure, f, *, count: int = 100_000, seed: int = 0
) -> float:
    """||W f||_q / ||f||_p, with ||W f||_q^q = int |f|^q dmu."""
    num = measure_integral(mu, lambda x: np.abs(f(x)) ** sym.q, count, seed, focus=_focus_of(f)).value
    den = _norm_q(sym.model, f, sym.p, count, seed).value
    return (max(num, 0.0) ** (1.0 / sym.q)) / den ** (1.0 / sym.p) if den > 0 else 0.0


def boundedness_equivalence_suite(
    tree: TentTree,
    sym: SymbolPair,
    mu: SampledMeasure,
    functions: Mapping[str, Callable],
    *,
    radii: Sequence[float] = SWEEP_RADII,
    directions: int = 8,
    count: int = 50_000,
    seed: int = 0,
    carleson: CarlesonReport | None = None,
    **table_kw,
) -> EquivalenceReport:
    """Carleson sup ratio, Berezin sweep and operator-norm proxy, each also along a boundary sweep."""
    model = tree.model
    lam = sym.q / sym.p
    carleson = carleson or carleson_report(tree, mu, lam, seed=seed, **table_kw)
    dirs = sweep_directions(model, directions)
    bz = berezin_sweep(model, mu, sym.p, sym.q, radii=radii, directions=directions, count=count, seed=seed)
    c_sweep, o_sweep = [], []
    for r in radii:
        pts = r * dirs
        c_sweep.append(carleson_sweep(tree, carleson, pts))
        o_sweep.append(
            max(operator_proxy(sym, mu, TestFunction.kernel(w), count=count, seed=seed) for w in pts)
        )
    proxy = max([operator_proxy(sym, mu, f, count=count, seed=seed) for f in functions.values()] + o_sweep)
    sweeps = {"carleson": c_sweep, "berezin": bz.per_radius, "operator": o_sweep}
    return EquivalenceReport(sym.label, carleson.sup_ratio, bz.sup, proxy, list(radii), sweeps)
