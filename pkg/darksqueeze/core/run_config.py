"""Run configuration files: flat ``key = value`` text with ``#`` comments.

Frequency keys carry the ``_kHz`` suffix (2π·kHz), times the ``_us`` suffix.
"""
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from darksqueeze.core.config import settings
from darksqueeze.core.params import (
    Branch,
    LevelKind,
    ModelError,
    ModelLevel,
    PhysicalParams,
    RampShape,
    Schedule,
    derive_couplings,
)
from darksqueeze.services.dynamics import (
    EvolveConfig,
    IntegrationMethod,
    ProtocolResult,
    run_protocol,
    run_state_transfer,
)
from darksqueeze.services.model import squeezed_vacuum_amplitudes

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """Raised for unreadable or invalid run configurations"""
    pass


class Protocol(str, Enum):
    SQUEEZE = "squeeze"
    TRANSFER = "transfer"


def _integer(v: Any) -> Any:
    if isinstance(v, str):
        v = float(v)
    if isinstance(v, float):
        if not v.is_integer():
            raise ValueError("must be an integer")
        v = int(v)
    return v


class RunConfig(BaseModel):
    """Everything one run needs. Unknown keys are rejected."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    g1_kHz: float
    g2_kHz: float
    omega1_kHz: float
    omega2_max_kHz: float
    phi1: float = 0.0
    phi2: float = 0.0
    delta1_kHz: float
    delta2_kHz: float
    delta_a_kHz: Optional[float] = None
    cavity_offset_kHz: Optional[float] = None
    delta_b_kHz: float = 0.0
    n_atoms: int
    kappa_kHz: float = 0.0
    gamma_kHz: float = 0.0

    shape: RampShape = RampShape.SINE_SQUARED
    t_total_us: float
    steepness: float = 3.0

    n_steps: int = 400
    method: IntegrationMethod = IntegrationMethod.PIECEWISE
    truncation_tol: float = Field(default_factory=lambda: settings.truncation_tol)
    record_every: int = 1

    protocol: Protocol = Protocol.SQUEEZE
    level: LevelKind = LevelKind.TWO_MODE
    branch: Branch = Branch.ATOMIC
    open_system: bool = False
    keep_residual_stark: bool = False
    cavity_dim: int = 40
    b_dim: int = 40
    n_atoms_model: Optional[int] = None
    output: Optional[str] = None

    @field_validator("n_atoms", "n_atoms_model", "n_steps", "record_every", "cavity_dim", "b_dim", mode="before")
    @classmethod
    def coerce_integer(cls, v: Any) -> Any:
        return v if v is None else _integer(v)

    @model_validator(mode="after")
    def check_offsets(self) -> "RunConfig":
        if self.delta_a_kHz is not None and self.cavity_offset_kHz is not None:
            raise ValueError("give either delta_a_kHz or cavity_offset_kHz, not both")
        return self

    @property
    def atoms_resolved(self) -> int:
        """Atoms represented at the full, eliminated and spin levels."""
        return self.n_atoms if self.n_atoms_model is None else self.n_atoms_model

    def to_params(self) -> PhysicalParams:
        data: Dict[str, Any] = {
            "g1": self.g1_kHz,
            "g2": self.g2_kHz,
            "omega1": self.omega1_kHz,
            "omega2_max": self.omega2_max_kHz,
            "phi1": self.phi1,
            "phi2": self.phi2,
            "delta1": self.delta1_kHz,
            "delta2": self.delta2_kHz,
            "delta_b": self.delta_b_kHz,
            "n_atoms": self.n_atoms,
            "kappa": self.kappa_kHz,
            "gamma": self.gamma_kHz,
        }
        if self.delta_a_kHz is not None:
            data["delta_a"] = self.delta_a_kHz
        elif self.cavity_offset_kHz is not None:
            data["cavity_offset"] = self.cavity_offset_kHz
        params = PhysicalParams(**data)
        if self.level in (LevelKind.FULL, LevelKind.ELIMINATED, LevelKind.SPIN) and self.atoms_resolved != self.n_atoms:
            params = params.replace(n_atoms=self.atoms_resolved)
        return params

    def to_schedule(self) -> Schedule:
        return Schedule(
            shape=self.shape, t_total=self.t_total_us,
            omega2_max=self.omega2_max_kHz, steepness=self.steepness,
        )

    def to_evolve(self) -> EvolveConfig:
        return EvolveConfig(
            n_steps=self.n_steps, method=self.method,
            truncation_tol=self.truncation_tol, record_every=self.record_every,
        )

    def to_level(self) -> ModelLevel:
        if self.level in (LevelKind.TWO_MODE, LevelKind.TRANSFORMED):
            return ModelLevel(self.level, self.cavity_dim, b_dim=self.b_dim, branch=self.branch)
        return ModelLevel(self.level, self.cavity_dim, n_atoms=self.atoms_resolved, branch=self.branch)

    def resolve(self) -> Tuple[PhysicalParams, Schedule, EvolveConfig, ModelLevel]:
        """Builds every run object, so that all invariants are checked before a run starts.

        Raises:
            ConfigError: naming the offending key.
        """
        try:
            return self.to_params(), self.to_schedule(), self.to_evolve(), self.to_level()
        except ValidationError as e:
            raise ConfigError(describe_error(e))
        except ModelError as e:
            raise ConfigError(str(e))

    def to_text(self) -> str:
        lines = []
        for key in type(self).model_fields:
            value = getattr(self, key)
            if value is not None:
                lines.append(f"{key} = {_format_value(value)}")
        return "\n".join(lines) + "\n"


def _format_value(value: Any) -> str:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def describe_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        key = ".".join(str(p) for p in item["loc"]) or "config"
        message = item["msg"].removeprefix("Value error, ")
        parts.append(f"{key}: {message}")
    return "; ".join(parts)


def parse_config_text(text: str) -> Dict[str, str]:
    """Splits ``key = value`` lines; ``#`` starts a comment."""
    data: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {number}: missing key")
        if key in data:
            raise ConfigError(f"line {number}: duplicate key '{key}'")
        data[key] = value
    return data


def apply_overrides(data: Dict[str, str], overrides: Sequence[str]) -> Dict[str, str]:
    merged = dict(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        merged[key] = value
    return merged


def build_run_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise ConfigError(describe_error(e))


def load_run_config(path: Optional[str], overrides: Sequence[str] = ()) -> RunConfig:
    """Reads a config file (or nothing) and applies ``--set`` overrides."""
    data: Dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e.strerror}")
        data = parse_config_text(text)
    config = build_run_config(apply_overrides(data, overrides))
    logger.info(f"Loaded run config: level={config.level.value}, branch={config.branch.value}")
    return config


class SweepSpec(BaseModel):
    """One RunConfig key varied over a grid, everything else from ``base``."""

    model_config = ConfigDict(frozen=True)

    parameter: str
    values: List[float]
    base: RunConfig

    @field_validator("values")
    @classmethod
    def check_grid(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("sweep grid is empty")
        if not all(math.isfinite(x) for x in v):
            raise ValueError("sweep grid values must be finite")
        return v

    @model_validator(mode="after")
    def check_parameter(self) -> "SweepSpec":
        if self.parameter not in RunConfig.model_fields or self.parameter == "output":
            raise ValueError(f"cannot sweep unknown key '{self.parameter}'")
        return self

    def points(self) -> List[RunConfig]:
        """Grid configurations in grid order."""
        base = self.base.model_dump(exclude_none=True)
        return [build_run_config({**base, self.parameter: value}) for value in self.values]


def execute_run(config: RunConfig) -> ProtocolResult:
    """Runs the configured protocol. The transfer protocol maps the atomic-branch squeezed vacuum onto the cavity."""
    params, schedule, evolve, level = config.resolve()
    if config.protocol == Protocol.TRANSFER:
        c = derive_couplings(params)
        chi = squeezed_vacuum_amplitudes(c.r or 0.0, c.theta(Branch.ATOMIC) or 0.0, config.b_dim)
        return run_state_transfer(params, evolve, chi, config.cavity_dim, config.b_dim)
    return run_protocol(
        params, schedule, evolve, level,
        open_system=config.open_system, keep_residual_stark=config.keep_residual_stark,
    )
