"""Experiment configuration: schema, defaults and resolution.

Times are measured in the reciprocal units of the eigenvalues ``(k pi)^2``.
Every optional field is filled in during validation, and the resolved
config is what gets persisted, so a saved config reloads to itself.
"""

import hashlib
import json
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
import yaml

RUN_KINDS = ("validate", "convolution", "simulate", "fp_residual", "ck", "alpha_sweep",
             "moment_bound", "density_oracle")

Profile = Union[float, Dict[str, Any]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpaceCfg(_Strict):
    n_modes: int = Field(8, ge=1)
    grid_size: Optional[int] = None

    @model_validator(mode="after")
    def _grid(self):
        if self.grid_size is None:
            self.grid_size = max(2 * self.n_modes, 16)
        if self.grid_size < 2 * self.n_modes:
            raise ValueError(f"grid_size={self.grid_size} must be at least 2*n_modes")
        return self


class NoiseCfg(_Strict):
    rule: Literal["identity", "fractional", "explicit"] = "identity"
    scale: float = Field(1.0, gt=0)
    delta_c: Optional[float] = None
    values: Optional[List[float]] = None
    c_min: Optional[float] = None

    @model_validator(mode="after")
    def _rule(self):
        if self.rule == "fractional" and self.delta_c is None:
            raise ValueError("rule 'fractional' needs delta_c")
        if self.rule == "explicit" and not self.values:
            raise ValueError("rule 'explicit' needs values")
        if self.rule != "fractional" and self.delta_c is not None:
            raise ValueError("delta_c only applies to rule 'fractional'")
        if self.rule != "explicit" and self.values is not None:
            raise ValueError("values only apply to rule 'explicit'")
        return self


class DriftCfg(_Strict):
    name: Literal["cubic", "cubic_time", "linear", "zero"] = "zero"
    a: float = 1.0
    b: float = 0.0
    c: Profile = 1.0
    h: Literal["zero", "linear", "constant"] = "zero"
    h_coef: float = 0.0
    m: Optional[int] = None
    c1: Optional[Profile] = None
    c2: Optional[Profile] = None
    c3: Optional[Profile] = None
    alpha: float = Field(0.0625, ge=0.0, le=1.0)
    alphas: Optional[List[float]] = None


class PointCfg(_Strict):
    """A Galerkin state: explicit modes, a projected constant field, or a
    multiple of ``sin(pi xi)``. Empty means the zero state."""

    modes: Optional[List[float]] = None
    constant: Optional[float] = None
    sine_amplitude: Optional[float] = None

    @model_validator(mode="after")
    def _one(self):
        given = [v is not None for v in (self.modes, self.constant, self.sine_amplitude)]
        if sum(given) > 1:
            raise ValueError("give at most one of modes, constant, sine_amplitude")
        return self


class InitialCfg(PointCfg):
    kind: Literal["dirac", "gaussian"] = "dirac"
    var: Optional[Union[float, List[float]]] = None

    @model_validator(mode="after")
    def _var(self):
        if self.kind == "gaussian" and self.var is None:
            raise ValueError("a gaussian initial law needs var")
        if self.kind == "dirac" and self.var is not None:
            raise ValueError("var only applies to a gaussian initial law")
        return self


class CheckpointCfg(_Strict):
    rule: Literal["uniform", "every_step", "explicit"] = "uniform"
    n: int = Field(16, ge=1)
    every: int = Field(1, ge=1)
    times: Optional[List[float]] = None


class SimCfg(_Strict):
    s: float = 0.0
    t_end: float = 0.5
    dt: float = Field(1.0 / 64.0, gt=0)
    checkpoints: CheckpointCfg = CheckpointCfg()
    n_paths: int = Field(10000, ge=100)
    seed: int = Field(20261015, ge=0, lt=2**64)
    scheme: Literal["exponential_euler_splitting", "tamed_euler"] = "exponential_euler_splitting"
    initial: InitialCfg = InitialCfg()

    @model_validator(mode="after")
    def _times(self):
        if not self.t_end > self.s:
            raise ValueError("t_end must exceed s")
        return self


class DirectionsCfg(_Strict):
    n_dir: int = Field(4, ge=0)
    n_rand: int = Field(8, ge=0)
    h_max: float = Field(20.0, gt=0)
    amplitudes: List[float] = [1.0, 2.0]


class CKCfg(_Strict):
    x: PointCfg = PointCfg()
    triples: List[List[float]] = [[0.0, 0.25, 0.5], [0.0, 0.1, 0.5]]
    min_fraction: float = Field(1.0, ge=0.0, le=1.0)


class MomentCfg(_Strict):
    levels: List[float] = [0.0, 1.0, 64.0, 4096.0]
    alphas: List[float] = [1.0, 0.25, 0.0625]
    factor: float = Field(3.0, gt=1.0)


class OracleCfg(_Strict):
    mean: float = 1.0
    var: float = Field(0.01, gt=0)
    n_cells: int = Field(800, ge=50)
    fd_dt: float = Field(1e-3, gt=0)


class VerifyCfg(_Strict):
    delta: float = 0.3
    lam: float = Field(1.0, gt=0)
    t_samples: List[float] = [0.01, 0.1, 0.5, 1.0]
    tail_tol: float = Field(1e-6, gt=0)
    phi: List[Literal["poly1", "poly2", "bump"]] = ["poly1", "poly2", "bump"]
    h: List[List[float]] = [[1.0], [0.0, 1.0], [1.0, 1.0]]
    quadrature: Literal["trapezoid", "midpoint"] = "trapezoid"
    dt_allowance: bool = True
    min_pass_fraction: float = Field(1.0, ge=0.0, le=1.0)
    n_sigma: float = Field(3.0, gt=0)
    ks_level: float = Field(0.01, gt=0, lt=1)
    ks_min_fraction: float = Field(0.95, ge=0, le=1)
    directions: DirectionsCfg = DirectionsCfg()
    ck: CKCfg = CKCfg()
    moment: MomentCfg = MomentCfg()
    oracle: OracleCfg = OracleCfg()


class OutputCfg(_Strict):
    write_ensemble: bool = False
    csv: bool = True


class ExperimentConfig(_Strict):
    run_kind: Literal[RUN_KINDS] = "validate"
    space: SpaceCfg = SpaceCfg()
    noise: NoiseCfg = NoiseCfg()
    drift: DriftCfg = DriftCfg()
    sim: SimCfg = SimCfg()
    verify: VerifyCfg = VerifyCfg()
    output: OutputCfg = OutputCfg()
    workers: int = Field(1, ge=1)


class ConfigError(ValueError):
    """Malformed config; the message lists each offending field."""


def _describe(err, source):
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{source}: {loc}: {e['msg']}")
    return "\n".join(lines)


def parse_config(data, source="<config>"):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_describe(err, source)) from None


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}:{where} {getattr(err, 'problem', err)}") from None
    return parse_config(data, str(path))


def resolved_dict(cfg):
    return cfg.model_dump(mode="json")


def dump_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(resolved_dict(cfg), fh, sort_keys=True)


def numerical_dict(cfg):
    """Resolved config without fields that cannot change any number
    (the worker count)."""
    d = resolved_dict(cfg)
    d.pop("workers")
    return d


def config_hash(cfg):
    canon = json.dumps(numerical_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
