import pytest
from hypothesis import given, settings, strategies as st

from twoscale_llg.config import (EXPERIMENTS, ConfigError, ExperimentConfig, parse_config,
                                 parse_text, preset, serialize, with_overrides)


def test_presets_parse():
    for name in EXPERIMENTS[:-1]:
        cfg = parse_text(f"experiment = {name}\n")
        assert cfg.experiment == name and cfg.N_ref >= cfg.N_hom


def test_full_presets():
    cfg = parse_text("experiment = periodic2d", full=True)
    assert cfg.N_ref == 180 and cfg.n_periods == (2, 3, 4, 5, 6)
    assert cfg.checkpoints == (10, 100, 1000)
    cfg3 = parse_text("experiment = periodic3d", full=True)
    assert (cfg3.N_ref, cfg3.N_hom, cfg3.n_periods) == (30, 24, (2, 3, 5))


def test_overrides_and_comments():
    cfg = parse_text("""
# desk check
experiment = neumann2d
n_periods = 2, 3   # two values
h_ref = 1/120
dt = 1e-5
terms = exchange, anisotropy
""")
    assert cfg.n_periods == (2, 3) and cfg.N_ref == 120 and cfg.dt == 1e-5
    assert cfg.terms == ("exchange", "anisotropy") and cfg.bc == "neumann"


@pytest.mark.parametrize("text,line,fragment", [
    ("experiment = periodic2d\nbogus = 1\n", 2, "unknown key"),
    ("experiment = periodic2d\ndt = 1\ndt = 2\n", 3, "duplicate"),
    ("experiment = periodic2d\nscheme = fast\n", 2, "scheme"),
    ("experiment = periodic2d\nn_periods = 1, 2\n", 2, "at least 2"),
    ("experiment = periodic2d\ncheckpoints = 100, 10\n", 2, "increasing"),
    ("experiment = periodic2d\nh_ref = 0.03\n", 2, "1/N"),
    ("experiment = periodic2d\nh_ref = 1/40\nh_hom = 1/80\n", 2, "fine"),
    ("experiment = periodic2d\ndt = soon\n", 2, "float"),
    ("experiment = periodic2d\nalpha\n", 2, "key = value"),
    ("experiment = neumann2d\ninit_method = projection\n", 2, "periodic"),
])
def test_errors_name_the_line(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_text(text)
    assert info.value.lineno == line
    assert fragment in str(info.value)


def test_missing_keys():
    with pytest.raises(ConfigError, match="experiment"):
        parse_text("dt = 1e-6\n")
    with pytest.raises(ConfigError, match="h_ref"):
        parse_text("experiment = custom\ncoefficients = cosine2d\ndim = 2\nbc = periodic\n"
                   "dt = 1e-6\nn_periods = 2\ncheckpoints = 10\n")


def test_custom_experiment():
    cfg = parse_text("experiment = custom\ncoefficients = layered\ndim = 3\nbc = neumann\n"
                     "dt = 1e-5\nn_periods = 2, 4\ncheckpoints = 5\nh_ref = 1/8\n")
    assert cfg.N_hom == 8 and cfg.dim == 3
    with pytest.raises(ConfigError):
        parse_text("experiment = custom\ncoefficients = cosine2d\ndim = 3\nbc = neumann\n"
                   "dt = 1e-5\nn_periods = 2\ncheckpoints = 5\nh_ref = 1/8\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.cfg")


@settings(max_examples=40, deadline=None)
@given(experiment=st.sampled_from(EXPERIMENTS[:-1]),
       dt=st.floats(1e-9, 1e-2, allow_nan=False),
       ns=st.sets(st.integers(2, 9), min_size=1, max_size=4),
       cps=st.sets(st.integers(1, 2000), min_size=1, max_size=3),
       alpha=st.floats(0.01, 5.0),
       scheme=st.sampled_from(["original", "improved"]),
       full=st.booleans())
def test_serialize_roundtrip(experiment, dt, ns, cps, alpha, scheme, full):
    base = parse_text(f"experiment = {experiment}", full=full)
    cfg = with_overrides(base, dt=dt, n_periods=tuple(sorted(ns)), checkpoints=tuple(sorted(cps)),
                         alpha=alpha, scheme=scheme)
    text = serialize(cfg)
    assert parse_text(text) == cfg
    assert serialize(parse_text(text)) == text


def test_with_overrides_validates():
    cfg = parse_text("experiment = periodic2d")
    with pytest.raises(ConfigError):
        with_overrides(cfg, alpha=-1.0)
    assert isinstance(preset("periodic3d"), dict)
    with pytest.raises(ConfigError):
        preset("nonsense")
    assert isinstance(cfg, ExperimentConfig) and cfg.h_ref == 1 / 90
