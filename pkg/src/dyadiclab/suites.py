"""Verification suites: a fixed registry, a shared experiment context, JSON and CSV reports.

Every suite is a function of an ``ExperimentContext`` returning a
``SuiteResult`` (assertions, nested results, flat rows).  Seeds are
explicit: the config seed builds the grid family and is the calibration
seed ("seed A"); ``seed + 1`` is the fresh check seed ("seed B").
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._mc import rng_for, uniform_sphere
from .domain import model_from_name
from .grid import (
    build_adjacent_family,
    build_mesh,
    cover_certificate,
    dumps_family,
    loads_family,
    verify_grid,
)
from .measures import pullback_measure, sample_lebesgue
from .operators import (
    MaximalOperator,
    admissible_N,
    berezin_sweep,
    berezin_transform,
    boundedness_equivalence_suite,
    carleson_report,
    check_exponent_identity,
    compactness_diagnostic,
    fit_constant,
    maximal_inequality,
    muckenhoupt_constant,
    pointwise_bound_check,
    power_table,
    sparse_reports,
    sparse_sum,
    testing_sweep,
    weighted_estimate_check,
)
from .symbols import SymbolPair, Weight, default_test_family
from .tents import (
    TentTree,
    audit_sandwich,
    calibrate_kube_params,
    kube_partition_check,
    submean_check,
    volume_comparability,
)

FIT_MARGIN = 0.25
GROWTH_FACTOR = 2.0
SE_TOL = 3.0
ALIASES = {"berezin-identity": "berezin-sweep"}


# -- results ------------------------------------------------------------------


@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SuiteResult:
    name: str
    assertions: list[Assertion] = field(default_factory=list)
    results: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def check(self, name: str, ok, detail: str = "") -> bool:
        self.assertions.append(Assertion(name, bool(ok), detail))
        return bool(ok)

    def failures(self) -> list[Assertion]:
        return [a for a in self.assertions if not a.passed]


def jsonable(x):
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    if isinstance(x, complex):
        return [jsonable(x.real), jsonable(x.imag)]
    return x


def report_json(result: SuiteResult, config) -> str:
    suite = SUITES[result.name]
    cfg = config.to_mapping()
    cfg.pop("out", None)
    cfg.pop("suites", None)
    doc = {
        "suite": result.name,
        "description": suite.description,
        "theorem": suite.theorem,
        "passed": result.passed,
        "config": cfg,
        "assertions": [{"name": a.name, "passed": a.passed, "detail": a.detail} for a in result.assertions],
        "results": result.results,
    }
    return json.dumps(jsonable(doc), sort_keys=True, indent=2) + "\n"


def report_csv(result: SuiteResult) -> str:
    rows = [jsonable(r) for r in result.rows]
    cols = sorted({k for r in rows for k in r})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r)
    return buf.getvalue()


def write_reports(result: SuiteResult, config, out: str) -> str:
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"{result.name}.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_json(result, config))
    with open(os.path.join(out, f"{result.name}.csv"), "w", encoding="utf-8") as fh:
        fh.write(report_csv(result))
    return path


# -- context --------------------------------------------------------------------


def _bounded_symbols(n: int) -> list[tuple[str, str]]:
    if n == 1:
        return [("1", "z"), ("1", "z/2"), ("z", "z**2"), ("(1-z)**2", "z")]
    return [("1", "z"), ("1", "z/2"), ("(1-z1)**2", "z")]


def _blowup_symbol(n: int) -> tuple[str, str]:
    return ("1/(1-z)", "z") if n == 1 else ("1/(1-z1)", "z")


class ExperimentContext:
    """Lazily built, memoised objects shared by the suites of one run.

    With ``cache_dir`` the grid family is read from / written to
    ``<cache_dir>/grid.bin`` (plus a ``grid.json`` key recording the
    build parameters, so a stale cache is rebuilt rather than reused).
    """

    def __init__(self, config, cache_dir: str | None = None, log: Callable[[str], None] | None = None):
        self.config = config
        self.cache_dir = cache_dir
        self.log = log or (lambda msg: None)
        self.model = model_from_name(config.model_name, config.eps0)
        self._memo: dict = {}
        self._locks = defaultdict(threading.Lock)
        self._guard = threading.Lock()

    def memo(self, key, build):
        with self._guard:
            lock = self._locks[key]
        with lock:
            if key not in self._memo:
                self._memo[key] = build()
            return self._memo[key]

    # seeds
    @property
    def seed_a(self) -> int:
        return self.config.seed

    @property
    def seed_b(self) -> int:
        return self.config.seed + 1

    # geometry
    def grid_key(self) -> dict:
        c = self.config
        return {
            "model": self.model.name,
            "delta": c.delta,
            "depth": c.depth,
            "K0": c.K0,
            "meshResolution": c.meshResolution,
            "seed": c.seed,
            "eps0": c.eps0,
        }

    def build_family(self):
        c = self.config
        self.log(f"building {c.K0} grids on {self.model.name}, depth {c.depth}")
        mesh = build_mesh(self.model, c.meshResolution, c.seed)
        return build_adjacent_family(self.model, mesh, c.delta, c.depth, c.K0, c.seed)

    def _load_family(self):
        if self.cache_dir is None:
            return self.build_family()
        bin_path = os.path.join(self.cache_dir, "grid.bin")
        key_path = os.path.join(self.cache_dir, "grid.json")
        key = json.dumps(self.grid_key(), sort_keys=True)
        if os.path.exists(bin_path) and os.path.exists(key_path):
            with open(key_path, encoding="utf-8") as fh:
                if fh.read().strip() == key:
                    self.log(f"loading cached grid {bin_path}")
                    with open(bin_path, "rb") as fb:
                        return loads_family(fb.read())
        family = self.build_family()
        os.makedirs(self.cache_dir, exist_ok=True)
        with open(bin_path, "wb") as fb:
            fb.write(dumps_family(family))
        with open(key_path, "w", encoding="utf-8") as fh:
            fh.write(key + "\n")
        return family

    @property
    def family(self):
        return self.memo("family", self._load_family)

    @property
    def tree(self) -> TentTree:
        return self.memo("tree", lambda: TentTree(self.family))

    def sample(self, key: str) -> int:
        return self.config.sample(key)

    @property
    def table_kw(self) -> dict:
        return {"per_tent": self.sample("perTent"), "target_hits": self.sample("targetHits")}

    @property
    def tent_volumes(self):
        return self.memo(
            "tent-volumes",
            lambda: self.tree.integrate_tents(seed=self.seed_a, include_root=False, **self.table_kw),
        )

    @property
    def kube_params(self):
        return self.memo(
            "kube-params", lambda: calibrate_kube_params(self.tree, self.sample("sandwich"), self.seed_a)
        )

    # analysis objects
    @property
    def functions(self) -> dict:
        def build():
            degree = 3 if self.model.dimension == 1 else 2
            return {f.label: f for f in default_test_family(self.model, degree=degree)}

        return self.memo("functions", build)

    def symbol(self, u=None, phi=None, p=None, q=None) -> SymbolPair:
        s = self.config.symbol
        return SymbolPair(
            self.model,
            s.u if u is None else u,
            s.phi if phi is None else phi,
            s.p if p is None else p,
            s.q if q is None else q,
        )

    def measure(self, sym: SymbolPair, seed: int):
        key = ("measure", sym.u_source, sym.phi_source, sym.q, seed)
        return self.memo(key, lambda: pullback_measure(self.model, sym, self.config.measureCount, seed))

    def lebesgue(self, seed: int):
        return self.memo(("lebesgue", seed), lambda: sample_lebesgue(self.model, self.config.measureCount, seed))

    def power_table(self, seed: int):
        return self.memo(
            ("powers", seed),
            lambda: power_table(self.tree, self.functions, (1, 2, 3), seed=seed, **self.table_kw),
        )

    @property
    def maximal_operator(self) -> MaximalOperator:
        return self.memo(
            "maximal", lambda: MaximalOperator(self.tree, self.functions, seed=self.seed_a, **self.table_kw)
        )

    def design_points(self, key: str, *, r_max: float = 0.999) -> np.ndarray:
        """Fixed interior probe points: 1-|z| log-uniform in [1 - r_max, 1], uniform directions."""
        count = max(self.sample("designPoints"), len(self.functions))
        rng = rng_for(self.config.seed, "design", key)
        dirs = uniform_sphere(rng, count, self.model.dimension)
        t = (1.0 - r_max) ** rng.random(count)
        return (1.0 - t)[:, None] * dirs

    @property
    def bounded_symbols(self) -> list[tuple[str, str]]:
        return _bounded_symbols(self.model.dimension)

    @property
    def blowup_symbol(self) -> tuple[str, str]:
        return _blowup_symbol(self.model.dimension)


# -- suites ---------------------------------------------------------------------


def run_grid_verify(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("grid-verify")
    fam = ctx.family
    grids = []
    for grid in fam.grids:
        v = verify_grid(grid)
        grids.append(v)
        res.check(f"grid {grid.grid_id}: six grid properties", v.passed, "; ".join(v.violations[:5]))
        res.rows.append(
            {
                "grid": grid.grid_id,
                "covering": v.covering,
                "nesting": v.nesting,
                "has_child": v.has_child,
                "unique_parent": v.unique_parent,
                "center_membership": v.center_membership,
                "epsilon": v.epsilon,
                "frak_c": v.frak_c,
                "lower_sandwich_violations": v.lower_sandwich_violations,
                "cubes": sum(v.generation_sizes),
            }
        )
    eps = min(v.epsilon for v in grids)
    frak_c = max(v.frak_c for v in grids)
    res.check("epsilon > 0", eps > 0, f"epsilon = {eps:.6g}")
    cover = cover_certificate(fam, ctx.sample("cover"), ctx.seed_a)
    res.check(
        "adjacent cover",
        cover.passed,
        f"{cover.failures} of {cover.samples} quasi-balls uncovered at K0 = {cover.K0}",
    )
    res.results = {
        "model": ctx.model.name,
        "meshSize": fam.mesh.size,
        "epsilon": eps,
        "frakC": frak_c,
        "generationSizes": [v.generation_sizes for v in grids],
        "cover": {
            "K0": cover.K0,
            "samples": cover.samples,
            "ctilde": cover.ctilde,
            "cap": cover.cap,
            "failures": cover.failures,
            "maxGenerationUsed": cover.max_generation_used,
        },
    }
    return res


def run_kube_partition(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("kube-partition")
    part = kube_partition_check(ctx.tree, ctx.sample("partition"), ctx.seed_a)
    res.check(
        "kubes partition the domain",
        part.passed,
        f"{part.exceptions} exceptions, {part.disagreements} disagreements in {part.samples} points",
    )
    vc = volume_comparability(ctx.tree, ctx.tent_volumes)
    res.check("Vol(T)/l^(n+1) spread below 20", vc.spread < 20.0, f"c3/c2 = {vc.spread:.4g}")
    res.check("kube/tent volume floor positive", vc.c1 > 0, f"c1 = {vc.c1:.4g}")
    res.results = {
        "partition": {"samples": part.samples, "exceptions": part.exceptions, "disagreements": part.disagreements},
        "volume": {"c1": vc.c1, "c2": vc.c2, "c3": vc.c3, "spread": vc.spread, "lowConfidence": vc.low_confidence},
    }
    res.rows = list(vc.per_generation)
    return res


def run_kobayashi_sandwich(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("kobayashi-sandwich")
    params = ctx.kube_params
    audit = audit_sandwich(ctx.tree, params, ctx.sample("sandwich"), ctx.seed_b)
    res.check(
        "0 < alpha < beta < 1", 0.0 < params.alpha < params.beta < 1.0, f"alpha={params.alpha}, beta={params.beta}"
    )
    res.check(
        "fresh-sample audit",
        audit.passed,
        f"{audit.lower_violations} lower and {audit.upper_violations} upper violations in {audit.samples}",
    )
    res.results = {
        "alpha": params.alpha,
        "beta": params.beta,
        "betaTilde": params.beta_tilde,
        "calibrationSamples": params.samples,
        "audit": {
            "samples": audit.samples,
            "lowerViolations": audit.lower_violations,
            "upperViolations": audit.upper_violations,
        },
    }
    res.rows = list(params.per_generation)
    return res


def run_submean(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("submean")
    hs = list(ctx.functions.values())
    p = ctx.config.symbol.p
    kw = dict(beta=ctx.kube_params.beta, kube_volumes=ctx.tent_volumes)
    a = submean_check(ctx.tree, hs, p, ctx.sample("submean"), ctx.seed_a, **kw)
    b = submean_check(ctx.tree, hs, p, ctx.sample("submean"), ctx.seed_b, **kw)
    res.check("finite constant", math.isfinite(a.constant) and a.constant > 0, f"C = {a.constant:.4g}")
    res.check(
        "no growth across generations",
        b.growth_ok(a.constant, GROWTH_FACTOR),
        f"fresh-seed generation maxima {_fmt(b.per_generation.values())} vs {GROWTH_FACTOR:g} x {a.constant:.4g}",
    )
    res.results = {
        "p": p,
        "betaTilde": a.beta_tilde,
        "constant": a.constant,
        "checkConstant": b.constant,
        "perGeneration": a.per_generation,
        "checkPerGeneration": b.per_generation,
        "flagged": a.flagged + b.flagged,
        "samples": a.samples,
    }
    for tag, rep in (("A", a), ("B", b)):
        res.rows += [{"seed": tag, "k": k, "max_ratio": v} for k, v in sorted(rep.per_generation.items())]
    return res


def _se_ratio(rep) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.hypot(rep.mu_se / np.where(rep.mu > 0, rep.mu, 1.0), rep.lam * rep.volume_se / rep.volume)
    return rep.ratio * rel


def run_carleson(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("carleson")
    tree, kw = ctx.tree, ctx.table_kw
    leb = ctx.lebesgue(ctx.seed_a)
    rep = carleson_report(tree, leb, 1.0, seed=ctx.seed_a, **kw)
    dev = np.abs(rep.ratio - 1.0)
    ok = dev <= np.maximum(SE_TOL * _se_ratio(rep), 1e-12)
    res.check("Lebesgue: every tent ratio 1 within 3 SE", ok.all(), f"{int((~ok).sum())} of {ok.size} outside")
    atoms = carleson_report(tree, leb, 1.0, seed=ctx.seed_a, route="atoms", table=None, **kw)
    shallow = atoms.generation <= 2
    z = np.abs(atoms.ratio - 1.0) / np.maximum(_se_ratio(atoms), 1e-300)
    atom_within = float(np.mean(z[shallow] <= SE_TOL))

    half = ctx.symbol("1", "z/2", 2.0, 2.0)
    hrep = carleson_report(tree, ctx.measure(half, ctx.seed_a), 1.0, seed=ctx.seed_a, **kw)
    small = tree.delta ** hrep.generation.astype(float) < 0.5
    worst = float(hrep.ratio[small].max()) if small.any() else 0.0
    res.check("phi = z/2: zero on every cube with l < 1/2", worst == 0.0, f"max ratio {worst!r}")

    sym = ctx.symbol()
    lam = sym.q / sym.p
    mu = ctx.measure(sym, ctx.seed_a)
    srep = carleson_report(tree, mu, lam, seed=ctx.seed_a, **kw)
    scaled = carleson_report(tree, mu.scaled(3.0), lam, seed=ctx.seed_a, **kw)
    res.check(
        "argmax stable under mu -> 3 mu",
        scaled.argmax == srep.argmax and math.isclose(scaled.sup_ratio, 3.0 * srep.sup_ratio, rel_tol=1e-9),
        f"{srep.argmax} vs {scaled.argmax}",
    )
    res.results = {
        "lebesgue": rep.summary() | {"maxDeviation": float(dev.max())},
        "lebesgueAtoms": atoms.summary() | {"shallowWithin3SE": atom_within},
        "halfDisc": hrep.summary() | {"maxRatioSmallCubes": worst},
        "symbol": srep.summary() | {"label": sym.label},
    }
    for name, r in (("lebesgue", rep), ("half", hrep), ("symbol", srep)):
        res.rows += [
            {"case": name, "grid": g, "cube": q, "k": int(k), "mu": m, "volume": v, "ratio": x}
            for (g, q, m, v, x), k in zip(r.per_cube, r.generation)
        ]
    return res


def run_berezin_sweep(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("berezin-sweep")
    model, count = ctx.model, ctx.sample("integral")
    leb = ctx.lebesgue(ctx.seed_a)
    pts = ctx.design_points("berezin")[: ctx.sample("designPoints")]
    pts[0] = 0.0
    values = []
    for i, z in enumerate(pts):
        est = berezin_transform(model, leb, 2.0, 2.0, z, count=count, seed=ctx.seed_a)
        values.append(est)
        res.rows.append({"case": "identity", "i": i, "abs_z": float(np.linalg.norm(z)), "value": est.value, "se": est.stderr})
    bad = [i for i, e in enumerate(values) if not e.within(1.0, SE_TOL)]
    res.check(f"B_1(Lebesgue) = 1 within 3 SE at {len(pts)} points", not bad, f"failing points {bad}")
    results = {"identity": [{"z": z, "value": e.value, "se": e.stderr} for z, e in zip(pts, values)]}
    if model.dimension == 1:
        est = berezin_transform(model, leb, 1.0, 2.0, np.zeros(1), count=count, seed=ctx.seed_a)
        res.check("disc q/p = 2 at 0 equals 1/pi", est.within(1.0 / math.pi, SE_TOL), f"{est.value:.6g} +- {est.stderr:.2g}")
        results["discOrigin"] = {"value": est.value, "se": est.stderr, "expected": 1.0 / math.pi}
    sym = ctx.symbol()
    sw = berezin_sweep(model, ctx.measure(sym, ctx.seed_a), sym.p, sym.q, count=count, seed=ctx.seed_a)
    results["symbol"] = {"label": sym.label, "radii": sw.radii, "perRadius": sw.per_radius, "sup": sw.sup}
    res.rows += [{"case": "sweep", "radius": r, "value": v} for r, v in zip(sw.radii, sw.per_radius)]
    res.results = results
    return res


WEAK_THRESHOLDS = (0.25, 0.5, 1.0, 2.0)


def run_maximal(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("maximal")
    op, fs, count = ctx.maximal_operator, ctx.functions, ctx.sample("integral")
    cases = [(p, None) for p in (1.5, 2.0, 3.0)] + [(p, "(1-norm(z)**2)**0.5") for p in (2.0, 3.0)]
    out = []
    for p, w in cases:
        weight = Weight(ctx.model, w) if w else None
        rep = maximal_inequality(op, fs, p, weight=weight, count=count, seed=ctx.seed_a, thresholds=WEAK_THRESHOLDS)
        label = rep.weight
        res.check(f"strong ({p:g},{p:g}) with w = {label}", _finite_pos(rep.constant), f"C = {rep.constant:.4g}")
        out.append({"p": p, "weight": label, "constant": rep.constant, "weak": rep.weak_constant, "ratios": rep.ratios})
        res.rows += [{"p": p, "weight": label, "function": k, "ratio": v} for k, v in rep.ratios.items()]
    res.results = {"cases": out}
    return res


def run_fractional_maximal(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("fractional-maximal")
    for p, q, a in ((2.0, 4.0, 0.25), (1.5, 3.0, 1.0 / 3.0), (3.0, 6.0, 1.0 / 6.0)):
        p_dual = p / (p - 1.0)
        residual = 1.0 + a * q - q + q / p_dual
        res.check(f"exponent identity p={p:g} q={q:g}", check_exponent_identity(p, q, a), f"residual {residual:.3g}")
    rep = maximal_inequality(
        ctx.maximal_operator, ctx.functions, 2.0, alpha=0.25, q=4.0,
        count=ctx.sample("integral"), seed=ctx.seed_a, thresholds=WEAK_THRESHOLDS,
    )
    res.check("L^2 -> L^4 constant at alpha = 1/4", _finite_pos(rep.constant), f"C = {rep.constant:.4g}")
    res.check("weak-type constant finite", math.isfinite(rep.weak_constant), f"{rep.weak_constant:.4g}")
    res.results = {"alpha": 0.25, "p": 2.0, "q": 4.0, "constant": rep.constant, "weak": rep.weak_constant, "ratios": rep.ratios}
    res.rows = [{"function": k, "ratio": v, "weak": rep.weak.get(k)} for k, v in rep.ratios.items()]
    return res


POINTWISE_CASES = ((2.0, 2.0, 1), (2.0, 2.0, 2), (4.0, 5.0, 2), (4.0, 5.0, 3))


def run_pointwise_bound(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("pointwise-bound")
    fs = ctx.functions
    names = list(fs)
    pts = ctx.design_points("pointwise")
    pairs = [(z, names[i % len(names)]) for i, z in enumerate(pts)]
    count = ctx.sample("integral")
    fits = []
    for u, phi in ctx.bounded_symbols:
        for p, q, N in POINTWISE_CASES:
            sym = ctx.symbol(u, phi, p, q)
            ratios = {}
            for tag, seed in (("A", ctx.seed_a), ("B", ctx.seed_b)):
                table, mu = ctx.power_table(seed), ctx.measure(sym, seed)
                ratios[tag] = []
                for i, (z, name) in enumerate(pairs):
                    r = pointwise_bound_check(table, mu, fs[name], name, p, q, N, z, count=count, seed=seed)
                    ratios[tag].append(r.ratio)
                    res.rows.append(
                        {"u": u, "phi": phi, "p": p, "q": q, "N": N, "seed": tag, "i": i,
                         "function": name, "lhs": r.lhs, "lhs_se": r.lhs_se, "rhs": r.rhs, "ratio": r.ratio}
                    )
            fit = fit_constant(ratios["A"], ratios["B"], FIT_MARGIN)
            res.check(
                f"u={u} phi={phi} (p,q,N)=({p:g},{q:g},{N})",
                fit.passed,
                f"C_A = {fit.constant:.4g}, max on B = {fit.check_max:.4g}",
            )
            fits.append({"u": u, "phi": phi, "p": p, "q": q, "N": N, "C": fit.constant, "checkMax": fit.check_max})
    res.results = {"points": len(pairs), "margin": FIT_MARGIN, "fits": fits}
    return res


def run_sparse(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("sparse")
    fs, count = ctx.functions, ctx.sample("integral")
    fits, infima = [], []
    for u, phi in ctx.bounded_symbols:
        for p, q in ((2.0, 2.0), (4.0, 5.0)):
            sym = ctx.symbol(u, phi, p, q)
            Ns = admissible_N(p, q)
            if not Ns:
                res.check(f"u={u} phi={phi} (p,q)=({p:g},{q:g})", True, "no admissible N; skipped")
                continue
            reps = {}
            for tag, seed in (("A", ctx.seed_a), ("B", ctx.seed_b)):
                reps[tag] = sparse_reports(ctx.tree, ctx.power_table(seed), sym, ctx.measure(sym, seed), fs, count=count, seed=seed)
                res.rows += [
                    {"u": u, "phi": phi, "p": p, "q": q, "N": r.N, "seed": tag, "function": r.function,
                     "lhs": r.lhs, "rhs": r.rhs, "ratio": r.empirical_c}
                    for r in reps[tag]
                ]
            for N in Ns:
                a = [r.empirical_c for r in reps["A"] if r.N == N]
                b = [r.empirical_c for r in reps["B"] if r.N == N]
                fit = fit_constant(a, b, FIT_MARGIN)
                res.check(
                    f"u={u} phi={phi} (p,q,N)=({p:g},{q:g},{N})",
                    fit.passed,
                    f"C_A = {fit.constant:.4g}, max on B = {fit.check_max:.4g}",
                )
                fits.append({"u": u, "phi": phi, "p": p, "q": q, "N": N, "C": fit.constant, "checkMax": fit.check_max})
            # the infimum over N of the sparse bound, per function
            best = {}
            for r in reps["A"]:
                if r.function not in best or r.rhs < best[r.function].rhs:
                    best[r.function] = r
            c_inf = max(r.empirical_c for r in best.values())
            infima.append({"u": u, "phi": phi, "p": p, "q": q, "C": c_inf, "argminN": {k: r.N for k, r in best.items()}})
    ones = {k: v for k, v in fs.items() if k == "1"}
    gen = {}
    if ones:
        table = ctx.power_table(ctx.seed_a)
        gen = {f"N={N}": sparse_sum(table, "1", 2.0, 2.0, N).per_generation for N in admissible_N(2.0, 2.0)}
    res.results = {"margin": FIT_MARGIN, "fits": fits, "infimumOverN": infima, "constantFunctionGenerations": gen}
    return res


def run_compactness(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("compactness")
    beta = ctx.kube_params.beta
    out = {}
    for label, phi in (("contraction", "z/2"), ("identity", "z")):
        sym = ctx.symbol("1", phi, 2.0, 2.0)
        rep = compactness_diagnostic(
            ctx.tree, sym, ctx.measure(sym, ctx.seed_a), 1, beta=beta, seed=ctx.seed_a, **ctx.table_kw
        )
        out[label] = {"phi": phi, "perGeneration": rep.per_generation, "skippedLeaves": rep.skipped_leaves}
        res.rows += [dict(r, phi=phi) for r in rep.rows]
        if label == "contraction":
            deep = {k: v for k, v in rep.per_generation.items() if ctx.tree.delta**k < 0.5}
            res.check("phi = z/2: exactly 0 at deep generations", all(v == 0.0 for v in deep.values()), _fmt(deep.values()))
        else:
            floor = min(rep.per_generation.values())
            out[label]["floor"] = floor
            res.check("phi = id: bounded below by a positive value", floor > 0, f"floor = {floor:.4g}")
    res.results = {"beta": beta, "N": 1, **out}
    return res


def run_muckenhoupt(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("muckenhoupt")
    tree, kw = ctx.tree, dict(seed=ctx.seed_a, **ctx.table_kw)
    out = []

    def record(rep):
        out.append({"p": rep.p, "weight": rep.weight, "constant": rep.constant, "flagged": rep.flagged,
                    "perGeneration": rep.per_generation, "argmax": rep.argmax})
        res.rows += [{"p": rep.p, "weight": rep.weight, "k": k, "max": v} for k, v in rep.per_generation.items()]
        return rep

    for src in ("1", "3.7"):
        for p in (1.5, 2.0, 3.0):
            rep = record(muckenhoupt_constant(tree, Weight(ctx.model, src), p, **kw))
            res.check(f"w = {src}, p = {p:g}: constant 1", abs(rep.constant - 1.0) <= 1e-9, f"{rep.constant!r}")
    w = Weight(ctx.model, "(1-norm(z)**2)**0.5")
    for p in (2.0, 3.0):
        rep = record(muckenhoupt_constant(tree, w, p, **kw))
        res.check(f"w = {w.label}, p = {p:g}: finite", _finite_pos(rep.constant), f"{rep.constant:.4g}, {rep.flagged} flagged")
        big = record(muckenhoupt_constant(tree, w.scaled(7.0), p, **kw))
        res.check(
            f"scale invariance w -> 7w, p = {p:g}",
            math.isclose(big.constant, rep.constant, rel_tol=1e-9),
            f"{rep.constant!r} vs {big.constant!r}",
        )
    res.results = {"cases": out}
    return res


def run_sawyer_weighted(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("sawyer-weighted")
    model, count, fs = ctx.model, ctx.sample("integral"), ctx.functions
    u = "(1-z)**2" if model.dimension == 1 else "(1-z1)**2"
    sym = ctx.symbol(u, "z", 2.0, 2.0)
    omega = Weight(model, "1-norm(z)**2")
    s, lam = 1.5, 7.0
    a = weighted_estimate_check(model, sym, omega, s, fs, count=count, seed=ctx.seed_a)
    res.check("certified triple: finite testing constant", math.isfinite(a.testing.constant), f"{a.testing.constant:.4g}")
    res.check("certified triple: finite max ratio", _finite_pos(a.max_ratio), f"{a.max_ratio:.4g}")
    b = weighted_estimate_check(model, sym, omega.scaled(lam), s, fs, count=count, seed=ctx.seed_a)
    rel = abs(b.max_ratio - a.max_ratio) / a.max_ratio if a.max_ratio else math.inf
    res.check("homogeneity w -> 7w", rel <= 1e-10, f"relative change {rel:.3g}")

    div = testing_sweep(model, ctx.symbol("1", "z", 2.0, 2.0), Weight(model, "1"), count=count, seed=ctx.seed_a)
    per = div.per_radius
    incs = np.diff(per[-3:])
    growth = float(incs[1] / incs[0]) if incs[0] > 0 else math.inf
    res.check("w = 1, phi = id flagged divergent", div.divergent, f"sweep {_fmt(per)}")
    res.check(
        "logarithmic growth of the sweep",
        div.slope > 0 and 0.5 <= growth <= 2.0,
        f"slope {div.slope:.4g} per unit log(1/(1-r)), decade increment ratio {growth:.3g}",
    )
    res.results = {
        "s": s,
        "sPrime": a.s_prime,
        "testing": {"radii": a.testing.radii, "perRadius": a.testing.per_radius, "constant": a.testing.constant},
        "ratios": a.ratios,
        "scaledRatios": b.ratios,
        "homogeneityRelChange": rel,
        "divergent": {"radii": div.radii, "perRadius": per, "slope": div.slope, "incrementRatio": growth},
    }
    res.rows = [{"case": "certified", "function": k, "ratio": v} for k, v in a.ratios.items()]
    res.rows += [{"case": "divergent", "radius": r, "value": v} for r, v in zip(div.radii, per)]
    return res


def run_equivalence(ctx: ExperimentContext) -> SuiteResult:
    res = SuiteResult("equivalence")
    count = ctx.sample("integral")
    reports = []

    def one(u, phi):
        sym = ctx.symbol(u, phi, 2.0, 2.0)
        rep = boundedness_equivalence_suite(
            ctx.tree, sym, ctx.measure(sym, ctx.seed_a), ctx.functions, count=count, seed=ctx.seed_a, **ctx.table_kw
        )
        reports.append(rep.to_dict())
        for crit, vals in rep.sweeps.items():
            res.rows += [{"symbol": rep.symbol, "criterion": crit, "radius": r, "value": v} for r, v in zip(rep.radii, vals)]
        return rep

    for u, phi in ctx.bounded_symbols:
        rep = one(u, phi)
        res.check(f"bounded u={u} phi={phi}: all three finite", rep.finite, f"verdict {rep.verdict}")
    rep = one(*ctx.blowup_symbol)
    res.check(
        f"blow-up u={ctx.blowup_symbol[0]}: all three trend upward",
        all(rep.trends.values()),
        f"trends {rep.trends}",
    )
    cfg = (ctx.config.symbol.u, ctx.config.symbol.phi)
    if cfg not in ctx.bounded_symbols and cfg != ctx.blowup_symbol:
        one(*cfg)
    res.results = {"reports": reports}
    return res


def _finite_pos(x) -> bool:
    return bool(math.isfinite(x) and x > 0)


def _fmt(values) -> str:
    return "[" + ", ".join(f"{v:.4g}" for v in values) + "]"


# -- registry -------------------------------------------------------------------


@dataclass(frozen=True)
class Suite:
    name: str
    description: str
    theorem: str
    run: Callable[[ExperimentContext], SuiteResult]


_REGISTRY = [
    Suite("grid-verify", "six dyadic grid properties at mesh level plus the adjacent-cover certificate",
          "dyadic grids and adjacent families on the boundary", run_grid_verify),
    Suite("kube-partition", "kubes partition the domain; tent volume comparability",
          "kube decomposition of the Bergman tree", run_kube_partition),
    Suite("kobayashi-sandwich", "calibrated alpha, beta with B(c,alpha) in kube in B(c,beta), fresh audit",
          "kubes are comparable to Kobayashi balls", run_kobayashi_sandwich),
    Suite("submean", "sub-mean value constant of |h|^p over kubes and Kobayashi balls",
          "sub-mean value property of plurisubharmonic functions", run_submean),
    Suite("carleson", "tent Carleson ratios: Lebesgue identity, contraction zeros, argmax stability",
          "dyadic Carleson characterisation", run_carleson),
    Suite("berezin-sweep", "Berezin transform identity at probe points and boundary sweep",
          "Berezin transform characterisation", run_berezin_sweep),
    Suite("maximal", "strong (p,p) constants of the tent maximal operator, weighted and unweighted",
          "tents form a Muckenhoupt basis", run_maximal),
    Suite("fractional-maximal", "fractional tent maximal operator L^2 -> L^4 and the exponent identity",
          "fractional maximal bound", run_fractional_maximal),
    Suite("pointwise-bound", "pointwise kernel bound by tent sums, fitted on one seed and checked on another",
          "pointwise dyadic bound", run_pointwise_bound),
    Suite("sparse", "||W f||_q^q against sparse sums for admissible N, fit and check",
          "sparse domination of weighted composition operators", run_sparse),
    Suite("compactness", "vanishing diagnostic over kernel sequences and tree offspring",
          "compactness characterisation", run_compactness),
    Suite("muckenhoupt", "A_p-type constants over tents",
          "Muckenhoupt weights over tents", run_muckenhoupt),
    Suite("sawyer-weighted", "Sawyer-type testing constant and the weighted estimate",
          "weighted estimate under a testing condition", run_sawyer_weighted),
    Suite("equivalence", "Carleson, Berezin and operator proxies: finite together or growing together",
          "boundedness equivalence", run_equivalence),
]

SUITES = {s.name: s for s in _REGISTRY}


def suite_names() -> list[str]:
    return [s.name for s in _REGISTRY]


def resolve_suites(selection) -> list[str]:
    """Registry-ordered, de-duplicated suite names; ``all`` selects everything."""
    chosen = set()
    for name in selection:
        if name == "all":
            chosen.update(SUITES)
            continue
        name = ALIASES.get(name, name)
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}")
        chosen.add(name)
    return [n for n in suite_names() if n in chosen]


def list_suites() -> str:
    width = max(len(n) for n in SUITES)
    return "\n".join(f"{s.name:<{width}}  {s.description} [{s.theorem}]" for s in _REGISTRY) + "\n"


def run_suite(name: str, ctx: ExperimentContext) -> SuiteResult:
    return SUITES[ALIASES.get(name, name)].run(ctx)
