"""
Run configuration: YAML file -> validated RunConfig.

Sections: group, domain, model, schedule, solver, sweep, output, seed.
Unknown keys are rejected everywhere.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .contracts import ConfigError
from .geometry import Grid, GroupModel, available_groups, group_model, make_grid
from .model import GKind, ModelParams

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class DomainConfig(_Section):
    box_lo: Optional[List[float]] = None
    box_hi: Optional[List[float]] = None
    resolution: Union[int, List[int]] = 64

    @field_validator("resolution")
    @classmethod
    def _resolution(cls, v):
        values = [v] if isinstance(v, int) else v
        if any(n < 3 for n in values):
            raise ValueError(f"resolution {v} leaves no interior nodes (need >= 3)")
        return v


class ModelConfig(_Section):
    lam: float = Field(0.0, alias="lambda", ge=0.0)
    beta: float = Field(0.1, ge=0.0)
    delta: float = 0.5
    p: float = 1.5
    a0: float = Field(1.0, ge=0.0)
    a1: float = Field(1.0, ge=0.0)
    g_kind: GKind = GKind.CONSTANT_ONE

    @field_validator("delta")
    @classmethod
    def _delta(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError(f"delta={v} outside the admissible range 0<δ<1")
        return v

    @field_validator("p")
    @classmethod
    def _p(cls, v: float) -> float:
        if not 1.0 < v < 2.0:
            raise ValueError(f"p={v} outside the admissible range 1<p<2")
        return v


class ScheduleConfig(_Section):
    eps0: float = Field(0.2, gt=0.0)
    stages: int = Field(6, ge=0)
    tolerance: Optional[float] = Field(None, gt=0.0)


class SolverConfig(_Section):
    restarts: int = Field(8, ge=8)
    path_points: int = Field(16, ge=16)
    max_iter: int = Field(2000, ge=1)
    rim_directions: int = Field(64, ge=1)
    certificate_directions: int = Field(50, ge=1)
    radon_trials: int = Field(50, ge=0)
    eigen_tol: float = Field(1e-8, gt=0.0)
    singular_tol: float = Field(1e-9, gt=0.0)


class SweepConfig(_Section):
    lambda_min: float = Field(1.0, ge=0.0)
    lambda_max: float = Field(200.0, gt=0.0)
    count: int = Field(12, ge=2)
    log_spacing: bool = True
    betas: Optional[List[float]] = None
    bracket_rel_tol: float = Field(1e-2, gt=0.0)

    @model_validator(mode="after")
    def _range(self):
        if self.lambda_max <= self.lambda_min:
            raise ValueError(f"lambda_max={self.lambda_max} must exceed lambda_min={self.lambda_min}")
        return self


class OutputConfig(_Section):
    dir: str = "results"


class RunConfig(_Section):
    group: str = "euclid1"
    domain: DomainConfig = Field(default_factory=DomainConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    seed: int = Field(0, ge=0)

    @field_validator("group")
    @classmethod
    def _group(cls, v: str) -> str:
        if v not in available_groups():
            raise ValueError(f"unknown group '{v}', expected one of {list(available_groups())}")
        return v

    @model_validator(mode="after")
    def _domain_matches_group(self):
        dim = group_model(self.group).ambient_dim
        d = self.domain
        if d.box_lo is None:
            d.box_lo = [0.0] * dim
        if d.box_hi is None:
            d.box_hi = [1.0] * dim
        if isinstance(d.resolution, int):
            d.resolution = [d.resolution] * dim
        for name, values in (("box_lo", d.box_lo), ("box_hi", d.box_hi), ("resolution", d.resolution)):
            if len(values) != dim:
                raise ValueError(f"domain.{name} has {len(values)} entries, {self.group} needs {dim}")
        for lo, hi in zip(d.box_lo, d.box_hi):
            if not hi > lo:
                raise ValueError(f"empty box side [{lo}, {hi}]")
        return self

    # -- derived objects -------------------------------------------------

    def group_model(self) -> GroupModel:
        return group_model(self.group)

    def grid(self, resolution: Optional[Sequence[int]] = None) -> Grid:
        d = self.domain
        res = resolution if resolution is not None else d.resolution
        return make_grid(self.group_model(), d.box_lo or (), d.box_hi or (), res)

    def params(self, epsilon: Optional[float] = None) -> ModelParams:
        m = self.model
        return ModelParams(
            lam=m.lam,
            beta=m.beta,
            delta=m.delta,
            p=m.p,
            a0=m.a0,
            a1=m.a1,
            epsilon=self.schedule.eps0 if epsilon is None else epsilon,
            g_kind=m.g_kind,
        )

    def eps_list(self) -> Tuple[float, ...]:
        return tuple(self.schedule.eps0 * 0.5**j for j in range(self.schedule.stages + 1))

    def canonical(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)

    def config_hash(self) -> str:
        """SHA-256 prefix of the canonical dump; the output directory does not enter."""
        data = {k: v for k, v in self.canonical().items() if k != "output"}
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _line_of(node: Optional[yaml.Node], loc: Sequence[Any]) -> Optional[int]:
    """1-based line of the deepest YAML node reachable along a pydantic error location."""
    line = None
    for key in loc:
        if not isinstance(node, yaml.MappingNode):
            break
        match = next((v for k, v in node.value if k.value == str(key)), None)
        if match is None:
            break
        line = match.start_mark.line + 1
        node = match
    return line


class ConfigFactory:
    @staticmethod
    def from_dict(data: dict, source: Optional[yaml.Node] = None) -> RunConfig:
        try:
            config = RunConfig.model_validate(data)
        except ValidationError as e:
            err = e.errors()[0]
            where = ".".join(str(p) for p in err["loc"]) or "<root>"
            message = err["msg"].removeprefix("Value error, ")
            raise ConfigError(f"{where}: {message}", line=_line_of(source, err["loc"])) from None
        return config

    @staticmethod
    def load_run_config(path: Union[str, Path]) -> RunConfig:
        """Parse and validate a YAML run configuration."""
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            data = yaml.safe_load(text)
            source = yaml.compose(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            problem = getattr(e, "problem", None) or str(e)
            raise ConfigError(f"YAML parse error: {problem}", line=line) from None
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"Top level of {path} must be a mapping")
        config = ConfigFactory.from_dict(data, source)
        logger.info(f"Loaded {path} (config_hash={config.config_hash()})")
        logger.info(yaml.safe_dump(config.canonical(), sort_keys=False).rstrip())
        return config

    @staticmethod
    def dump(config: RunConfig, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(config.canonical(), f, sort_keys=False)
        return path


__all__ = ["RunConfig", "ConfigFactory"]
