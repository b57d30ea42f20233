"""Experiment configuration: a line-oriented ``key = value`` format.

Blank lines and ``#`` comments are ignored. A file names an experiment
preset and may override any of its keys::

    experiment = periodic2d
    n_periods = 2, 3
    checkpoints = 10

Mesh sizes are written as ``1/N``. Lists are comma separated. The
``custom`` experiment has no defaults for the keys in :data:`REQUIRED_CUSTOM`.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

from .llg import TERMS

EXPERIMENTS = ("periodic2d", "neumann2d", "periodic2d_stray", "periodic3d", "custom")
SCALES = ("homogenized", "multiscale")
SCHEMES = ("original", "improved")
INIT_METHODS = ("expansion", "projection")
COEFFICIENT_PRESETS = ("cosine2d", "cosine3d", "layered", "constant")


class ConfigError(ValueError):
    """Parse or validation failure; ``lineno`` is set when a line is at fault."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    coefficients: str = "cosine2d"
    dim: int = 2
    bc: str = "periodic"
    terms: tuple = ("exchange",)
    alpha: float = 1.0
    scheme: str = "improved"
    threshold: float = 1e-8
    max_iter: int = 100
    dt: float = 1e-6
    n_periods: tuple = (2, 3, 4)
    checkpoints: tuple = (10, 100)
    N_ref: int = 90
    N_hom: int = 90
    cell_n: int = 128
    a_mean: float = 1.1
    a_amp: float = 0.25
    mu_mean: float = 1.0
    mu_amp: float = 0.0
    init_method: str = "expansion"
    scale: str = "homogenized"
    steps: int = 10
    snapshot_stride: int = 10
    bench_dts: tuple = (1e-4, 1e-5, 1e-6)
    bench_steps: int = 2
    bench_N: int = 90
    out_dir: str = "out"

    @property
    def h_ref(self) -> float:
        return 1.0 / self.N_ref

    @property
    def h_hom(self) -> float:
        return 1.0 / self.N_hom

    @property
    def periodic(self) -> bool:
        return self.bc == "periodic"

    def coefficient_set(self):
        from .coefficients import make_preset

        if self.coefficients in ("cosine2d", "cosine3d"):
            return make_preset(self.coefficients, a_mean=self.a_mean, a_amp=self.a_amp,
                               mu_mean=self.mu_mean, mu_amp=self.mu_amp)
        if self.coefficients == "layered":
            return make_preset("layered", dim=self.dim)
        return make_preset("constant", dim=self.dim, a=self.a_mean)


# (config key, dataclass field, kind); the key order is the canonical serialization order
_KEYS = [
    ("experiment", "experiment", "choice"),
    ("coefficients", "coefficients", "choice"),
    ("dim", "dim", "int"),
    ("bc", "bc", "choice"),
    ("terms", "terms", "terms"),
    ("alpha", "alpha", "float"),
    ("scheme", "scheme", "choice"),
    ("threshold", "threshold", "float"),
    ("max_iter", "max_iter", "int"),
    ("dt", "dt", "float"),
    ("n_periods", "n_periods", "ints"),
    ("checkpoints", "checkpoints", "ints"),
    ("h_ref", "N_ref", "h"),
    ("h_hom", "N_hom", "h"),
    ("cell_n", "cell_n", "int"),
    ("a_mean", "a_mean", "float"),
    ("a_amp", "a_amp", "float"),
    ("mu_mean", "mu_mean", "float"),
    ("mu_amp", "mu_amp", "float"),
    ("init_method", "init_method", "choice"),
    ("scale", "scale", "choice"),
    ("steps", "steps", "int"),
    ("snapshot_stride", "snapshot_stride", "int"),
    ("bench_dts", "bench_dts", "floats"),
    ("bench_steps", "bench_steps", "int"),
    ("bench_h", "bench_N", "h"),
    ("out_dir", "out_dir", "str"),
]
KEYS = {k: (f, kind) for k, f, kind in _KEYS}
CHOICES = {
    "experiment": EXPERIMENTS, "coefficients": COEFFICIENT_PRESETS,
    "bc": ("periodic", "neumann"), "scheme": SCHEMES, "init_method": INIT_METHODS,
    "scale": SCALES,
}
REQUIRED_CUSTOM = ("coefficients", "dim", "bc", "dt", "n_periods", "checkpoints", "h_ref")


def _desk_2d(**kw):
    return dict(dim=2, coefficients="cosine2d", dt=1e-6, alpha=1.0, n_periods=(2, 3, 4),
                checkpoints=(10, 100), N_ref=90, N_hom=90, bench_N=90, cell_n=128, **kw)


PRESETS = {
    "periodic2d": _desk_2d(bc="periodic"),
    "neumann2d": _desk_2d(bc="neumann"),
    "periodic2d_stray": _desk_2d(bc="periodic", terms=("exchange", "stray2d"),
                                 mu_mean=1.1, mu_amp=0.25),
    "periodic3d": dict(dim=3, coefficients="cosine3d", bc="periodic", dt=5e-5, alpha=1.0,
                       n_periods=(2, 3, 5), checkpoints=(10, 100), N_ref=12, N_hom=12,
                       bench_N=12, cell_n=16),
}

FULL = {
    2: dict(n_periods=(2, 3, 4, 5, 6), checkpoints=(10, 100, 1000), N_ref=180, N_hom=180,
            bench_N=180),
    3: dict(N_ref=30, N_hom=24, bench_N=30, cell_n=32),
}


def preset(experiment: str, full: bool = False) -> dict:
    """Default field values for a named experiment (desk or full scale)."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    if experiment == "custom":
        return {}
    values = dict(PRESETS[experiment])
    if full:
        values.update(FULL[values["dim"]])
    return values


def _parse_value(key: str, kind: str, raw: str, lineno: int):
    def fail(msg):
        raise ConfigError(f"{key}: {msg} (got {raw!r})", lineno)

    items = [t.strip() for t in raw.split(",") if t.strip()]
    try:
        if kind == "str":
            return raw
        if kind == "choice":
            if raw not in CHOICES[key]:
                fail(f"expected one of {', '.join(CHOICES[key])}")
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "ints":
            if not items:
                fail("empty list")
            return tuple(int(t) for t in items)
        if kind == "floats":
            if not items:
                fail("empty list")
            return tuple(float(t) for t in items)
        if kind == "terms":
            bad = [t for t in items if t not in TERMS]
            if bad or not items:
                fail(f"terms must be drawn from {', '.join(sorted(TERMS))}")
            return tuple(items)
        if kind == "h":
            h = Fraction(raw)
            if h <= 0 or h.numerator != 1:
                fail("mesh size must be 1/N with integer N")
            return h.denominator
    except ConfigError:
        raise
    except (ValueError, ZeroDivisionError):
        fail(f"cannot parse as {kind}")
    raise AssertionError(kind)


def parse_text(text: str, full: bool = False) -> ExperimentConfig:
    """Parse configuration text; see the module docstring for the format."""
    seen: dict = {}
    lines: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno)
        if not raw:
            raise ConfigError(f"{key}: missing value", lineno)
        fname, kind = KEYS[key]
        seen[key] = _parse_value(key, kind, raw, lineno)
        lines[key] = lineno
    if "experiment" not in seen:
        raise ConfigError("missing keys: experiment")
    experiment = seen["experiment"]
    if experiment == "custom":
        missing = [k for k in REQUIRED_CUSTOM if k not in seen]
        if missing:
            raise ConfigError(f"missing keys for a custom experiment: {', '.join(missing)}")
    values = preset(experiment, full=full)
    for key, value in seen.items():
        values[KEYS[key][0]] = value
    if "h_ref" in seen and "h_hom" not in seen and experiment == "custom":
        values["N_hom"] = values["N_ref"]
    cfg = ExperimentConfig(**values)
    validate(cfg, lines)
    return cfg


def parse_config(path, full: bool = False) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"configuration file {str(p)!r} not found")
    return parse_text(p.read_text(), full=full)


def validate(cfg: ExperimentConfig, lines: dict | None = None) -> None:
    """Cross-field checks; ``lines`` maps keys to line numbers for messages."""
    lines = lines or {}

    def fail(key, msg):
        raise ConfigError(f"{key}: {msg}", lines.get(key))

    if cfg.dim not in (2, 3):
        fail("dim", "must be 2 or 3")
    if cfg.coefficients == "cosine2d" and cfg.dim != 2 or cfg.coefficients == "cosine3d" and cfg.dim != 3:
        fail("coefficients", f"preset {cfg.coefficients} does not match dim = {cfg.dim}")
    if "stray2d" in cfg.terms and cfg.dim != 2:
        fail("terms", "stray2d needs dim = 2")
    if cfg.alpha <= 0:
        fail("alpha", "must be positive")
    if cfg.dt <= 0:
        fail("dt", "must be positive")
    if any(d <= 0 for d in cfg.bench_dts):
        fail("bench_dts", "must be positive")
    if cfg.threshold <= 0:
        fail("threshold", "must be positive")
    for key in ("max_iter", "steps", "bench_steps", "cell_n"):
        if getattr(cfg, key) < 1:
            fail(key, "must be at least 1")
    if cfg.snapshot_stride < 0:
        fail("snapshot_stride", "must be non-negative")
    if any(n < 2 for n in cfg.n_periods):
        fail("n_periods", "every entry must be at least 2")
    if len(set(cfg.n_periods)) != len(cfg.n_periods):
        fail("n_periods", "duplicate entries")
    cp = cfg.checkpoints
    if any(j < 1 for j in cp) or list(cp) != sorted(set(cp)):
        fail("checkpoints", "must be positive, strictly increasing step indices")
    if cfg.N_ref < cfg.N_hom:
        fail("h_ref", "the reference mesh must be at least as fine as the homogenized mesh")
    if cfg.bc == "neumann" and cfg.init_method == "projection":
        fail("init_method", "projection initial data is only available for periodic problems")
    if cfg.mu_amp < 0 or cfg.mu_mean - cfg.mu_amp <= 0:
        fail("mu_amp", "mu must stay positive")
    if abs(cfg.a_amp) >= cfg.a_mean:
        fail("a_amp", "the exchange coefficient must stay positive")


def _format(kind: str, value) -> str:
    if kind in ("ints", "floats", "terms"):
        return ", ".join(repr(v) if kind == "floats" else str(v) for v in value)
    if kind == "h":
        return f"1/{value}"
    if kind == "float":
        return repr(float(value))
    return str(value)


def serialize(cfg: ExperimentConfig) -> str:
    """Canonical form: every key in a fixed order. ``parse_text`` inverts it."""
    return "".join(f"{key} = {_format(kind, getattr(cfg, fname))}\n" for key, fname, kind in _KEYS)


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    out = replace(cfg, **changes)
    validate(out)
    return out


__all__ = [
    "ConfigError", "ExperimentConfig", "EXPERIMENTS", "KEYS", "REQUIRED_CUSTOM",
    "parse_config", "parse_text", "preset", "serialize", "validate", "with_overrides",
]
