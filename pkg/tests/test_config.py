import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyadiclab import config as cfgmod
from dyadiclab.config import ExperimentConfig, SymbolConfig
from dyadiclab.errors import ConfigError
from dyadiclab.suites import suite_names

configs = st.builds(
    ExperimentConfig,
    model=st.just("ball"),
    dimension=st.sampled_from([2, 3]),
    delta=st.floats(0.01, 0.49),
    depth=st.integers(1, 8),
    K0=st.integers(1, 16),
    meshResolution=st.integers(256, 10**6),
    seed=st.integers(0, 2**31),
    symbol=st.builds(SymbolConfig, st.sampled_from(["1", "z1", "(1-z1)**2"]), st.just("z/2"), st.just(2.0), st.floats(2.0, 8.0)),
    suites=st.lists(st.sampled_from(suite_names()), min_size=1, unique=True).map(tuple),
)


@settings(max_examples=50, deadline=None)
@given(configs)
def test_yaml_round_trip(cfg):
    back = cfgmod.loads(cfg.dumps())
    assert back == cfg
    assert back.dumps() == cfg.dumps()


def test_defaults_and_string_model():
    cfg = cfgmod.loads("model: ball:3\nseed: 4\n")
    assert (cfg.model, cfg.dimension, cfg.seed, cfg.delta) == ("ball", 3, 4, 0.125)
    assert cfg.sample("cover") == 1000
    assert cfgmod.loads("") == ExperimentConfig()


@pytest.mark.parametrize(
    "text,field",
    [
        ("delta: 1.5", "delta"),
        ("delta: 0.6", "delta"),
        ("eps0: 1.0", "eps0"),
        ("depth: 0", "depth"),
        ("depth: 2.5", "depth"),
        ("model: torus", "model"),
        ("model: ball:7", "model.dimension"),
        ("suites: [nope]", "suites"),
        ("symbol: {phi: 'exp(z)'}", "symbol.phi"),
        ("symbol: {u: ''}", "symbol.u"),
        ("symbol: {p: 3, q: 2}", "symbol.p"),
        ("samples: {cover: 0}", "cover"),
        ("samples: {bogus: 1}", "samples"),
        ("colour: red", "colour"),
        ("[unclosed", "<file>"),
        ("- 1", "<root>"),
    ],
)
def test_rejections_name_the_field(text, field):
    with pytest.raises(ConfigError) as info:
        cfgmod.loads(text)
    assert info.value.field == field


def test_overrides_revalidate():
    cfg = ExperimentConfig()
    assert cfg.with_overrides(seed=9, out="x").seed == 9
    assert cfg.with_overrides() is cfg
    with pytest.raises(ConfigError):
        cfg.with_overrides(seed=-1)
