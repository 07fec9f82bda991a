"""Experiment configuration: a YAML file with an explicit seed."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .errors import ConfigError, InputError
from .symbols import Expression

MODELS = {"disc": (1,), "ball": (2, 3)}

# per-suite Monte-Carlo budgets; every key may be overridden under ``samples``
DEFAULT_SAMPLES = {
    "cover": 1000,
    "partition": 10_000,
    "sandwich": 100_000,
    "submean": 1000,
    "perTent": 64,
    "targetHits": 48,
    "integral": 50_000,
    "designPoints": 20,
}


@dataclass(frozen=True)
class SymbolConfig:
    u: str = "1"
    phi: str = "z"
    p: float = 2.0
    q: float = 2.0


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "disc"
    dimension: int = 1
    delta: float = 0.125
    depth: int = 4
    K0: int = 3
    meshResolution: int = 65536
    seed: int = 0
    eps0: float = 0.5
    symbol: SymbolConfig = field(default_factory=SymbolConfig)
    measureCount: int = 100_000
    suites: tuple[str, ...] = ("all",)
    out: str = "out"
    samples: dict = field(default_factory=lambda: dict(DEFAULT_SAMPLES))

    @property
    def model_name(self) -> str:
        return "disc" if self.model == "disc" else f"ball:{self.dimension}"

    def sample(self, key: str) -> int:
        return int(self.samples[key])

    def with_overrides(self, *, seed=None, out=None) -> "ExperimentConfig":
        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if out is not None:
            kw["out"] = str(out)
        return validate(replace(self, **kw)) if kw else self

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["model"] = {"name": self.model, "dimension": self.dimension}
        del d["dimension"]
        d["suites"] = list(self.suites)
        d["samples"] = dict(sorted(self.samples.items()))
        return d

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=True)


def _int(d, key, lo, hi=None):
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    if v < lo or (hi is not None and v > hi):
        raise ConfigError(key, f"must lie in [{lo}, {hi if hi is not None else 'inf'}], got {v}")
    return v


def _real(d, key):
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(key, f"expected a finite number, got {v!r}")
    return float(v)


def from_mapping(data) -> ExperimentConfig:
    """Build and validate a config from a parsed mapping; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)} - {"dimension"}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(extra[0], "unknown field")
    base = ExperimentConfig()
    d = {f.name: getattr(base, f.name) for f in fields(ExperimentConfig)}
    d.update({k: v for k, v in data.items() if k not in ("model", "symbol", "samples")})

    model = data.get("model", {"name": base.model, "dimension": base.dimension})
    if isinstance(model, str):
        name, _, dim = model.partition(":")
        if dim and not dim.isdigit():
            raise ConfigError("model", f"cannot read dimension from {model!r}")
        model = {"name": name, "dimension": int(dim) if dim else (1 if name == "disc" else 2)}
    if not isinstance(model, dict) or model.get("name") not in MODELS:
        raise ConfigError("model", f"name must be one of {sorted(MODELS)}")
    d["model"] = model["name"]
    d["dimension"] = model.get("dimension", MODELS[model["name"]][0])
    if d["dimension"] not in MODELS[d["model"]]:
        raise ConfigError("model.dimension", f"{d['model']} supports dimensions {MODELS[d['model']]}")

    sym = data.get("symbol", {})
    if not isinstance(sym, dict) or set(sym) - {"u", "phi", "p", "q"}:
        raise ConfigError("symbol", "expected a mapping with keys u, phi, p, q")
    sd = asdict(SymbolConfig()) | sym
    for key in ("u", "phi"):
        if not isinstance(sd[key], str) or not sd[key].strip():
            raise ConfigError(f"symbol.{key}", "expected an expression string")
    p, q = _real(sd, "p"), _real(sd, "q")
    if not 1.0 <= p <= q:
        raise ConfigError("symbol.p", f"need 1 <= p <= q, got p={p}, q={q}")
    d["symbol"] = SymbolConfig(str(sd["u"]), str(sd["phi"]), p, q)

    samples = data.get("samples", {})
    if not isinstance(samples, dict) or set(samples) - set(DEFAULT_SAMPLES):
        raise ConfigError("samples", f"keys must be among {sorted(DEFAULT_SAMPLES)}")
    merged = dict(DEFAULT_SAMPLES) | samples
    for key in merged:
        _int(merged, key, 1)
    d["samples"] = merged

    suites = d["suites"]
    if isinstance(suites, str):
        suites = [suites]
    if not isinstance(suites, (list, tuple)) or not all(isinstance(s, str) for s in suites):
        raise ConfigError("suites", "expected a list of suite names")
    d["suites"] = tuple(suites)
    d["out"] = str(d["out"])
    return validate(ExperimentConfig(**d))


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    from .suites import resolve_suites

    d = asdict(cfg)
    eps0 = _real(d, "eps0")
    if not 0.0 < eps0 < 1.0:
        raise ConfigError("eps0", f"must lie in (0, 1), got {eps0}")
    delta = _real(d, "delta")
    if not 0.0 < delta < eps0:
        raise ConfigError("delta", f"must lie in (0, eps0) = (0, {eps0}), got {delta}")
    _int(d, "depth", 1, 8)
    _int(d, "K0", 1, 16)
    _int(d, "meshResolution", 256)
    _int(d, "seed", 0)
    _int(d, "measureCount", 1000)
    for key in ("u", "phi"):
        try:
            Expression.parse(getattr(cfg.symbol, key), cfg.dimension)
        except InputError as exc:
            raise ConfigError(f"symbol.{key}", str(exc)) from None
    try:
        resolve_suites(cfg.suites)
    except KeyError as exc:
        raise ConfigError("suites", str(exc.args[0])) from None
    return cfg


def loads(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return from_mapping(data if data is not None else {})


def load(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
