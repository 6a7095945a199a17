"""Physical parameters, derived Raman couplings and model-level selection.

Frequencies are ordinary frequencies in kHz carrying an implicit 2π, so
``lambda1 = 0.25`` means 2π × 0.25 kHz. Multiply by ``KHZ_TO_RAD_PER_US``
before combining a frequency with a time in μs.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Tuple

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

logger = logging.getLogger(__name__)

KHZ_TO_RAD_PER_US = 2.0 * math.pi * 1e-3
LARGE_DETUNING_RATIO = 10.0
MAX_FULL_ATOMS = 3


class ModelError(Exception):
    """Base exception for model construction errors"""
    pass


class ParameterError(ModelError):
    """Raised when physical parameters are unusable"""
    pass


class AboveThresholdError(ModelError):
    """Raised when lambda2 >= lambda1 and no dark squeezed state exists"""
    pass


class TruncationError(ModelError):
    """Raised when a state does not fit the truncated space"""
    pass


class Branch(str, Enum):
    ATOMIC = "atomic"
    FIELD = "field"


class LevelKind(str, Enum):
    FULL = "full"
    ELIMINATED = "eliminated"
    SPIN = "spin"
    TWO_MODE = "two_mode"
    TRANSFORMED = "transformed"


class PhysicalParams(BaseModel):
    """Physical inputs of the atom-cavity system.

    ``delta_a`` may be passed instead of ``cavity_offset``; the cavity offset
    is then chosen so that ω_a − ω − N·ξ_g equals the requested value.
    ``delta_b`` is accepted as an alias of ``two_photon_offset``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    g1: float
    g2: float
    omega1: float
    omega2_max: float
    phi1: float = 0.0
    phi2: float = 0.0
    delta1: float
    delta2: float
    cavity_offset: float = 0.0
    two_photon_offset: float = 0.0
    n_atoms: int
    kappa: float = 0.0
    gamma: float = 0.0

    @model_validator(mode="before")
    @classmethod
    def resolve_detuning_aliases(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        if "delta_b" in data:
            if "two_photon_offset" in data:
                raise ValueError("give either delta_b or two_photon_offset, not both")
            data["two_photon_offset"] = data.pop("delta_b")
        if "delta_a" in data:
            if "cavity_offset" in data:
                raise ValueError("give either delta_a or cavity_offset, not both")
            delta_a = float(data.pop("delta_a"))
            delta1 = float(data.get("delta1", 0.0))
            if delta1 == 0.0:
                raise ValueError("delta1 must be nonzero")
            n_atoms = int(float(data.get("n_atoms", 1)))
            data["cavity_offset"] = delta_a + n_atoms * float(data.get("g1", 0.0)) ** 2 / delta1
        return data

    @field_validator("n_atoms", mode="before")
    @classmethod
    def coerce_atom_number(cls, v: Any) -> Any:
        # accepts "1e6" from config files
        if isinstance(v, str):
            v = float(v)
        if isinstance(v, float):
            if not v.is_integer():
                raise ValueError("n_atoms must be an integer")
            v = int(v)
        return v

    @field_validator("n_atoms")
    @classmethod
    def check_atom_number(cls, v: int) -> int:
        if v < 1:
            raise ValueError("n_atoms must be at least 1")
        return v

    @field_validator("g1", "g2", "omega1", "omega2_max", "kappa", "gamma")
    @classmethod
    def check_non_negative(cls, v: float, info) -> float:
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"{info.field_name} must be finite and non-negative")
        return v

    @field_validator("delta1", "delta2")
    @classmethod
    def check_nonzero(cls, v: float, info) -> float:
        if v == 0 or not math.isfinite(v):
            raise ValueError(f"{info.field_name} must be nonzero")
        return v

    @model_validator(mode="after")
    def flag_large_detuning(self) -> "PhysicalParams":
        if not self.large_detuning_ok:
            logger.warning(
                f"Large-detuning condition violated: margin {self.large_detuning_margin():.3g} "
                f"< {LARGE_DETUNING_RATIO:g}"
            )
        return self

    def large_detuning_margin(self) -> float:
        """min(|Δ₁|, |Δ₂|) over the largest other frequency scale."""
        scale = max(
            self.g1, self.g2, self.omega1, self.omega2_max,
            abs(self.cavity_offset), abs(self.two_photon_offset),
        )
        detuning = min(abs(self.delta1), abs(self.delta2))
        return math.inf if scale == 0 else detuning / scale

    @property
    def large_detuning_ok(self) -> bool:
        return self.large_detuning_margin() >= LARGE_DETUNING_RATIO

    @property
    def delta_a(self) -> float:
        return self.cavity_offset - self.n_atoms * self.g1 ** 2 / self.delta1

    @property
    def delta_b(self) -> float:
        return self.two_photon_offset

    def replace(self, **changes: Any) -> "PhysicalParams":
        """Copy with changed fields, re-validated. ``delta_a`` re-targets the cavity offset."""
        data = self.model_dump()
        if "delta_a" in changes:
            data.pop("cavity_offset")
        elif "cavity_offset" not in changes and {"n_atoms", "g1", "delta1"} & changes.keys():
            # keep δ_a fixed when its ingredients change
            data.pop("cavity_offset")
            data["delta_a"] = self.delta_a
        if "delta_b" in changes:
            data.pop("two_photon_offset")
        data.update(changes)
        return PhysicalParams(**data)


@dataclass(frozen=True)
class DerivedCouplings:
    eta_e: float
    eta_g: float
    xi_e: float
    xi_g: float
    lambda1: float
    lambda2: float
    delta_a: float
    delta_b: float
    mu: Optional[float]
    r: Optional[float]
    theta_atomic: Optional[float]
    theta_field: Optional[float]
    below_threshold: bool
    degenerate: bool
    large_detuning_ok: bool

    def theta(self, branch: Branch) -> Optional[float]:
        return self.theta_atomic if branch == Branch.ATOMIC else self.theta_field


def _wrap_phase(phase: float) -> float:
    return math.remainder(phase, 2.0 * math.pi)


def squeeze_params(
    lams: Tuple[float, float],
    phases: Tuple[float, float],
    branch: Branch,
) -> Tuple[float, float]:
    """Squeezing strength and phase of the dark state for one branch.

    Args:
        lams: Raman couplings (λ₁, λ₂); a negative sign is absorbed into the phase.
        phases: laser phases (φ₁, φ₂) in radians.
        branch: atomic (squeezes the collective mode) or field (squeezes the cavity).

    Returns:
        (r, θ) with r = atanh(|λ₂|/|λ₁|). The atomic phase is φ₂ − φ₁, the field
        phase φ₁ + φ₂, which are the phases that cancel the creation-operator part
        of the Bogoliubov-rotated coupling.
    """
    lam1, lam2 = lams
    phi1, phi2 = phases
    if lam1 < 0:
        lam1, phi1 = -lam1, phi1 + math.pi
    if lam2 < 0:
        lam2, phi2 = -lam2, phi2 + math.pi
    if lam2 >= lam1:
        raise AboveThresholdError(
            f"lambda2 = {lam2:.6g} >= lambda1 = {lam1:.6g}: no dark squeezed state"
        )
    r = math.atanh(lam2 / lam1)
    if lam2 == 0.0:
        return 0.0, 0.0
    theta = phi2 - phi1 if Branch(branch) == Branch.ATOMIC else phi1 + phi2
    return r, _wrap_phase(theta)


def derive_couplings(params: PhysicalParams, omega2_current: Optional[float] = None) -> DerivedCouplings:
    """Closed-form Stark shifts, Raman couplings and squeezing parameters at a given Ω₂.

    ``omega2_current`` defaults to the ramp maximum. Values above the maximum
    are allowed with a warning.
    """
    omega2 = params.omega2_max if omega2_current is None else float(omega2_current)
    if omega2 < 0:
        raise ParameterError(f"omega2 must be non-negative, got {omega2}")
    if omega2 > params.omega2_max * (1.0 + 1e-12):
        logger.warning(f"Omega2 = {omega2:g} exceeds the ramp maximum {params.omega2_max:g}")
    if params.delta1 == 0 or params.delta2 == 0:
        raise ParameterError("delta1 and delta2 must be nonzero")

    lambda1 = params.omega1 * params.g1 / params.delta1
    lambda2 = omega2 * params.g2 / params.delta2
    below = abs(lambda2) >= abs(lambda1)
    if below:
        mu = r = theta_atomic = theta_field = None
    else:
        mu = math.sqrt(params.n_atoms * (lambda1 ** 2 - lambda2 ** 2))
        lams, phases = (lambda1, lambda2), (params.phi1, params.phi2)
        r, theta_atomic = squeeze_params(lams, phases, Branch.ATOMIC)
        _, theta_field = squeeze_params(lams, phases, Branch.FIELD)

    delta_a, delta_b = params.delta_a, params.delta_b
    degenerate = abs(delta_a) < 1e-12 and abs(delta_b) < 1e-12 and lambda2 != 0.0
    return DerivedCouplings(
        eta_e=params.omega1 ** 2 / params.delta1,
        eta_g=omega2 ** 2 / params.delta2,
        xi_e=params.g2 ** 2 / params.delta2,
        xi_g=params.g1 ** 2 / params.delta1,
        lambda1=lambda1,
        lambda2=lambda2,
        delta_a=delta_a,
        delta_b=delta_b,
        mu=mu,
        r=r,
        theta_atomic=theta_atomic,
        theta_field=theta_field,
        below_threshold=below,
        degenerate=degenerate,
        large_detuning_ok=params.large_detuning_ok,
    )


class RampShape(str, Enum):
    LINEAR = "linear"
    SINE_SQUARED = "sine_squared"
    TANH = "tanh"


class Schedule(BaseModel):
    """Ω₂(t) ramp from 0 to ``omega2_max`` over ``t_total`` μs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    shape: RampShape = RampShape.SINE_SQUARED
    t_total: float
    omega2_max: float
    steepness: float = 3.0  # tanh ramp only

    @field_validator("t_total")
    @classmethod
    def check_duration(cls, v: float) -> float:
        if not math.isfinite(v) or v <= 0:
            raise ValueError("t_total_us must be positive")
        return v

    @field_validator("omega2_max")
    @classmethod
    def check_amplitude(cls, v: float) -> float:
        if not math.isfinite(v) or v < 0:
            raise ValueError("omega2_max must be finite and non-negative")
        return v

    @field_validator("steepness")
    @classmethod
    def check_steepness(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("steepness must be positive")
        return v


@dataclass(frozen=True)
class ModelLevel:
    """Which Hamiltonian to simulate and on what truncated space.

    ``cavity_dim`` truncates the cavity at every level; ``b_dim`` is the
    collective-mode truncation of the two-mode levels; ``n_atoms`` is the
    number of atoms actually represented at the full, eliminated and spin levels.
    """

    kind: LevelKind
    cavity_dim: int
    b_dim: int = 0
    n_atoms: int = 0
    branch: Branch = Branch.ATOMIC

    def __post_init__(self):
        object.__setattr__(self, "kind", LevelKind(self.kind))
        object.__setattr__(self, "branch", Branch(self.branch))
        if self.cavity_dim < 2:
            raise ParameterError(f"cavity_dim must be at least 2, got {self.cavity_dim}")
        if self.kind in (LevelKind.TWO_MODE, LevelKind.TRANSFORMED):
            if self.b_dim < 2:
                raise ParameterError(f"b_dim must be at least 2, got {self.b_dim}")
        else:
            if self.n_atoms < 1:
                raise ParameterError(f"n_atoms_model must be at least 1, got {self.n_atoms}")
            if self.kind in (LevelKind.FULL, LevelKind.ELIMINATED) and self.n_atoms > MAX_FULL_ATOMS:
                raise ParameterError(
                    f"{self.kind.value} level is limited to {MAX_FULL_ATOMS} atoms, got {self.n_atoms}"
                )

    @property
    def bosonic(self) -> bool:
        return self.kind in (LevelKind.TWO_MODE, LevelKind.TRANSFORMED)

    @property
    def collective_dim(self) -> int:
        return self.b_dim if self.bosonic else self.n_atoms + 1
