import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from darksqueeze.core.algebra import Boson, Dicke, QOperator, QuantumState, SpaceMismatchError, reduced_density
from darksqueeze.core.params import KHZ_TO_RAD_PER_US, PhysicalParams, Schedule, derive_couplings

# Set up logging
logger = logging.getLogger(__name__)

HP_WARNING_THRESHOLD = 0.05


class AnalysisError(Exception):
    """Base exception for analysis related errors"""
    pass


class DegeneracyError(AnalysisError):
    """Raised when the dark state is not separated from the rest of the spectrum"""
    pass


class BudgetError(AnalysisError):
    """Raised when the error budget inputs are invalid"""
    pass


def _mode_density(state: QuantumState, mode: int) -> np.ndarray:
    if not 0 <= mode < len(state.space.factors):
        raise AnalysisError(f"Mode index {mode} out of range")
    if not isinstance(state.space.factors[mode], Boson):
        raise AnalysisError(f"Factor {mode} is not a bosonic mode")
    return reduced_density(state, mode)


def _moments(rho: np.ndarray) -> Tuple[complex, complex, float]:
    """⟨a⟩, ⟨a²⟩ and ⟨a†a⟩ of a single-mode density matrix."""
    dim = rho.shape[0]
    a = np.diag(np.sqrt(np.arange(1, dim)), k=1)
    mean = np.trace(rho @ a)
    second = np.trace(rho @ a @ a)
    photons = np.trace(rho @ a.conj().T @ a).real
    return complex(mean), complex(second), float(photons)


def quadrature_variance(state: QuantumState, mode: int, angle: float) -> float:
    """Var(X_φ) with X_φ = (a·e^{−iφ} + a†·e^{iφ})/√2; the vacuum gives 1/2."""
    mean, second, photons = _moments(_mode_density(state, mode))
    # normal-ordered: the truncated [a, a†] is wrong on the top level
    x_mean = math.sqrt(2.0) * (mean * np.exp(-1j * angle)).real
    x_square = (second * np.exp(-2j * angle)).real + photons + 0.5
    return float(x_square - x_mean ** 2)


def squeezing_db(variance: float) -> float:
    """−10·log₁₀(2·Var); positive below the vacuum level."""
    if variance <= 0:
        raise AnalysisError(f"Variance must be positive, got {variance}")
    return -10.0 * math.log10(2.0 * variance)


@dataclass(frozen=True)
class SqueezingReport:
    variance_min: float
    variance_max: float
    angle: float
    squeezing_db: float
    uncertainty_product: float
    mean_photons: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def squeezing_report(state: QuantumState, mode: int) -> SqueezingReport:
    """Extremal quadrature variances of one mode and the angle of the squeezed quadrature."""
    rho = _mode_density(state, mode)
    mean, second, photons = _moments(rho)
    normal = photons - abs(mean) ** 2
    anomalous = second - mean ** 2
    v_min = 0.5 + normal - abs(anomalous)
    v_max = 0.5 + normal + abs(anomalous)
    angle = math.remainder(0.5 * (np.angle(anomalous) + math.pi), math.pi)
    return SqueezingReport(
        variance_min=float(v_min),
        variance_max=float(v_max),
        angle=float(angle),
        squeezing_db=squeezing_db(v_min),
        uncertainty_product=float(v_min * v_max),
        mean_photons=photons,
    )


def fidelity(state: QuantumState, target: QuantumState) -> float:
    """|⟨ψ|φ⟩|² for kets, ⟨φ|ρ|φ⟩ when one side is a density matrix."""
    if state.space != target.space:
        raise SpaceMismatchError("Fidelity needs states on the same space")
    if state.is_ket and target.is_ket:
        value = abs(np.vdot(state.data, target.data)) ** 2
    elif target.is_ket:
        value = np.vdot(target.data, state.data @ target.data).real
    elif state.is_ket:
        value = np.vdot(state.data, target.data @ state.data).real
    else:
        raise AnalysisError("Fidelity between two mixed states is not supported")
    return float(min(1.0, max(0.0, value)))


def gap_analytic(mu: float, delta_a: float) -> float:
    """δE = √(μ² + δ_a²/4) − δ_a/2 between the dark state and the nearest bright state."""
    if mu < 0:
        raise AnalysisError(f"mu must be non-negative, got {mu}")
    root = math.sqrt(mu ** 2 + delta_a ** 2 / 4.0)
    if delta_a > 0 and mu > 0:
        # same value, no cancellation when μ ≪ δ_a
        return mu ** 2 / (root + delta_a / 2.0)
    return root - delta_a / 2.0


def gap_numeric(h: QOperator) -> float:
    """Smallest nonzero |E| in the one-quantum block of a transformed Hamiltonian.

    The block is spanned by |1,0⟩ and |0,1⟩ because the transformed
    Hamiltonian conserves a†a + b†b.
    """
    factors = h.space.factors
    if len(factors) != 2 or not all(isinstance(f, Boson) for f in factors):
        raise AnalysisError("gap_numeric expects a two-mode Hamiltonian")
    dim_b = factors[1].dim
    idx = [dim_b, 1]
    block = h.matrix[np.ix_(idx, idx)]
    energies = np.abs(np.linalg.eigvalsh(block))
    scale = max(1.0, float(np.max(energies)))
    if abs(block[0, 0]) <= 1e-9 * scale and abs(block[1, 1]) <= 1e-9 * scale:
        # |1,0⟩ and |0,1⟩ both undetuned: a second dark state exists
        raise DegeneracyError("delta_a = delta_b = 0 in the one-quantum block; dark state is degenerate")
    nonzero = energies[energies > 1e-12 * scale]
    if nonzero.size == 0:
        raise DegeneracyError("No nonzero eigenvalue in the one-quantum block; dark state is degenerate")
    return float(nonzero.min())


@dataclass(frozen=True)
class ErrorBudget:
    t_total: float
    delta_e_max: float
    delta_e_min: float
    delta_a: float
    p_b: float
    kappa_e: float
    gamma_e: float
    total_error: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def error_budget(
    params: PhysicalParams,
    schedule: Schedule,
    mu_path: Optional[Tuple[float, float]] = None,
) -> ErrorBudget:
    """Leakage and decoherence estimate for one adiabatic ramp.

    Args:
        params: physical parameters; δ_a must be positive.
        schedule: ramp whose duration and final Ω₂ enter the estimate.
        mu_path: (μ_max, μ_min); derived from the ramp endpoints when omitted.

    Returns:
        ErrorBudget with P_b = 1/(δE_min·T)² + 1/(δ_a·T)², κ_e = P_b·κ,
        γ_e = γ·Ω₂max²/(2Δ₂²) and total (κ_e + γ_e)·T, angular units applied.

    Raises:
        BudgetError: if δ_a ≤ 0 or the ramp crosses threshold.
    """
    delta_a = params.delta_a
    if delta_a <= 0:
        raise BudgetError("delta_a must be positive for budget")
    if mu_path is None:
        mu_max = derive_couplings(params, 0.0).mu
        mu_min = derive_couplings(params, schedule.omega2_max).mu
        if mu_min is None:
            raise BudgetError("Ramp ends above threshold; no gap to budget")
    else:
        mu_max, mu_min = mu_path

    t = schedule.t_total
    de_max = gap_analytic(mu_max, delta_a)
    de_min = gap_analytic(mu_min, delta_a)
    p_b = 1.0 / (de_min * KHZ_TO_RAD_PER_US * t) ** 2 + 1.0 / (delta_a * KHZ_TO_RAD_PER_US * t) ** 2
    kappa_e = p_b * params.kappa
    gamma_e = params.gamma * schedule.omega2_max ** 2 / (2.0 * params.delta2 ** 2)
    total = (kappa_e + gamma_e) * KHZ_TO_RAD_PER_US * t

    logger.info(f"Error budget: P_b={p_b:.4g}, kappa_e={kappa_e:.4g} kHz, gamma_e={gamma_e:.4g} kHz, total={total:.4g}")
    return ErrorBudget(
        t_total=t,
        delta_e_max=de_max,
        delta_e_min=de_min,
        delta_a=delta_a,
        p_b=p_b,
        kappa_e=kappa_e,
        gamma_e=gamma_e,
        total_error=total,
    )


def hp_validity(state: QuantumState, n_atoms: int, mode: int = 1) -> float:
    """Mean collective excitation over N, the small parameter of bosonization."""
    factor = state.space.factors[mode]
    if not isinstance(factor, (Boson, Dicke)):
        raise AnalysisError(f"Factor {mode} carries no collective excitation number")
    probs = state.probabilities().reshape(state.space.dims)
    axes = tuple(i for i in range(probs.ndim) if i != mode)
    distribution = probs.sum(axis=axes)
    value = float(np.dot(np.arange(distribution.size), distribution)) / n_atoms
    if value > HP_WARNING_THRESHOLD:
        logger.warning(f"<b†b>/N = {value:.3g} exceeds {HP_WARNING_THRESHOLD}; bosonization is unreliable")
    return value


def cooperativity(params: PhysicalParams) -> float:
    """g²/(2γκ) with g the stronger cavity coupling."""
    if params.kappa == 0 or params.gamma == 0:
        return math.inf
    g = max(params.g1, params.g2)
    return g ** 2 / (2.0 * params.gamma * params.kappa)


def delta_a_selection(mu_max: float, mu_min: float) -> float:
    """Cavity detuning that balances the two adiabatic conditions: half the mean μ."""
    return 0.5 * (mu_max + mu_min) / 2.0
