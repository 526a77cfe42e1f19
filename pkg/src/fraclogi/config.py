"""Experiment configuration: TOML files with strictly checked keys.

Example::

    seed = 7

    [grid]
    dimension = 1
    omega = [-1.0, 1.0]
    refuge = [-0.4, 0.4]
    nodes = 201

    [operator]
    s = 0.5
    p = 2.0

    [problem]
    q = 1.0
    r = 2.0
    lambda = 0.5
    lambda_unit = "range"     # absolute | lambda1_omega | lambda1_refuge | range
    b0 = 1.0

    [scheme]
    T = 50.0

    [initial]
    kind = "bump"
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODES = ("eigen", "steady", "sweep", "evolve", "classify", "verify")
LAMBDA_UNITS = ("absolute", "lambda1_omega", "lambda1_refuge", "range")
INITIAL_KINDS = ("bump", "distance", "refuge_distance", "refuge_eigen", "omega_eigen", "steady", "zero")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class GridSection:
    dimension: int = 1
    omega: list = field(default_factory=lambda: [-1.0, 1.0])
    refuge: list = field(default_factory=lambda: [-0.4, 0.4])
    nodes: int = 201
    holes: list = field(default_factory=list)
    collar: int = 0


@dataclass
class OperatorSection:
    s: float = 0.5
    p: float = 2.0
    cache_dir: str = ""


@dataclass
class ProblemSection:
    q: float = 1.0
    r: float = 2.0
    b0: float = 1.0
    # either a single lambda or a list (sweep); interpreted in lambda_unit
    lambda_: float | None = None
    lambdas: list = field(default_factory=list)
    lambda_unit: str = "absolute"
    domain: str = "omega"  # "refuge" poses the problem on the refuge alone


@dataclass
class SchemeSection:
    T: float = 10.0
    dt: float | None = None
    R: float | None = None
    blowup_cap: float = 1e6
    tol: float = 1e-12
    snapshot_stride: int = 10
    adaptive: bool = True


@dataclass
class InitialSection:
    kind: str = "bump"
    amplitude: float = 1.0
    radius: float = 0.8
    path: str = ""


@dataclass
class EigenSection:
    mu: list = field(default_factory=list)


@dataclass
class SweepSection:
    compact_masks: list = field(default_factory=list)


@dataclass
class VerifySection:
    samples: int = 100_000
    random_pairs: int = 50


@dataclass
class OutputSection:
    dir: str = "out"
    figures: bool = True


@dataclass
class ExperimentConfig:
    mode: str = ""
    seed: int = 0
    grid: GridSection = field(default_factory=GridSection)
    operator: OperatorSection = field(default_factory=OperatorSection)
    problem: ProblemSection = field(default_factory=ProblemSection)
    scheme: SchemeSection = field(default_factory=SchemeSection)
    initial: InitialSection = field(default_factory=InitialSection)
    eigen: EigenSection = field(default_factory=EigenSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    verify: VerifySection = field(default_factory=VerifySection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["problem"]["lambda"] = out["problem"].pop("lambda_")
        return out


_SECTIONS = {
    "grid": GridSection,
    "operator": OperatorSection,
    "problem": ProblemSection,
    "scheme": SchemeSection,
    "initial": InitialSection,
    "eigen": EigenSection,
    "sweep": SweepSection,
    "verify": VerifySection,
    "output": OutputSection,
}


def _field_name(key: str) -> str:
    return "lambda_" if key == "lambda" else key


def _build(section: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(section, "expected a table")
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        name = _field_name(key)
        if name not in names:
            raise ConfigError(f"{section}.{key}", "unknown key")
        # integers given for float keys are stored as floats so echoes round-trip exactly
        if names[name].type in ("float", "float | None") and type(value) is int:
            value = float(value)
        kwargs[name] = value
    return cls(**kwargs)


def _num(key, value, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if integer and not isinstance(value, int):
        raise ConfigError(key, "expected an integer")
    if not math.isfinite(value):
        raise ConfigError(key, "must be finite")
    if positive and not value > 0:
        raise ConfigError(key, "must be positive")
    return value


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.mode and cfg.mode not in MODES:
        raise ConfigError("mode", f"expected one of {MODES}")
    _num("seed", cfg.seed, integer=True)
    g = cfg.grid
    if g.dimension not in (1, 2):
        raise ConfigError("grid.dimension", "must be 1 or 2")
    _num("grid.nodes", g.nodes, positive=True, integer=True)
    if g.nodes < 8:
        raise ConfigError("grid.nodes", "need at least 8 nodes")
    _num("grid.collar", g.collar, integer=True)
    op = cfg.operator
    _num("operator.s", op.s)
    _num("operator.p", op.p)
    if not 0 < op.s < 1:
        raise ConfigError("operator.s", "must lie in (0, 1)")
    if not op.p > 1:
        raise ConfigError("operator.p", "must exceed 1")
    pr = cfg.problem
    _num("problem.q", pr.q, positive=True)
    _num("problem.r", pr.r)
    if not pr.r > op.p - 1:
        raise ConfigError("problem.r", "must exceed p - 1")
    _num("problem.b0", pr.b0, positive=True)
    if pr.lambda_unit not in LAMBDA_UNITS:
        raise ConfigError("problem.lambda_unit", f"expected one of {LAMBDA_UNITS}")
    if pr.lambda_ is not None:
        _num("problem.lambda", pr.lambda_)
    for k, lam in enumerate(pr.lambdas):
        _num(f"problem.lambdas[{k}]", lam)
    if pr.lambda_unit == "absolute":
        if pr.lambda_ is not None and not pr.lambda_ > 0:
            raise ConfigError("problem.lambda", "must be positive")
        if any(not lam > 0 for lam in pr.lambdas):
            raise ConfigError("problem.lambdas", "must be positive")
    if pr.domain not in ("omega", "refuge"):
        raise ConfigError("problem.domain", "expected 'omega' or 'refuge'")
    sc = cfg.scheme
    _num("scheme.T", sc.T, positive=True)
    if sc.dt is not None:
        _num("scheme.dt", sc.dt, positive=True)
        if sc.dt > sc.T:
            raise ConfigError("scheme.dt", "must not exceed T")
    if sc.R is not None:
        _num("scheme.R", sc.R, positive=True)
    _num("scheme.blowup_cap", sc.blowup_cap, positive=True)
    _num("scheme.tol", sc.tol, positive=True)
    _num("scheme.snapshot_stride", sc.snapshot_stride, positive=True, integer=True)
    ini = cfg.initial
    if ini.kind not in INITIAL_KINDS and ini.kind != "file":
        raise ConfigError("initial.kind", f"expected one of {INITIAL_KINDS + ('file',)}")
    if ini.kind == "file" and not ini.path:
        raise ConfigError("initial.path", "required for kind = 'file'")
    _num("initial.amplitude", ini.amplitude)
    if ini.amplitude < 0:
        raise ConfigError("initial.amplitude", "must be nonnegative")
    _num("initial.radius", ini.radius, positive=True)
    for k, mu in enumerate(cfg.eigen.mu):
        _num(f"eigen.mu[{k}]", mu)
        if mu < 0:
            raise ConfigError(f"eigen.mu[{k}]", "must be nonnegative")
    for k, box in enumerate(cfg.sweep.compact_masks):
        if not isinstance(box, list):
            raise ConfigError(f"sweep.compact_masks[{k}]", "expected a box")
    _num("verify.samples", cfg.verify.samples, positive=True, integer=True)
    _num("verify.random_pairs", cfg.verify.random_pairs, positive=True, integer=True)


def config_from_dict(raw: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for key, value in raw.items():
        if key in _SECTIONS:
            setattr(cfg, key, _build(key, _SECTIONS[key], value))
        elif key in ("mode", "seed"):
            setattr(cfg, key, value)
        else:
            raise ConfigError(key, "unknown key")
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"invalid TOML: {exc}") from exc
    return config_from_dict(raw)
