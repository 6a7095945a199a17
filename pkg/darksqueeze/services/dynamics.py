"""Time evolution under an Ω₂ ramp: closed (Schrödinger) and open (Lindblad) systems.

Hamiltonians arrive in 2π·kHz and times in μs; every propagator multiplies
by ``KHZ_TO_RAD_PER_US``. States are kept as raw numpy arrays inside the
integrators and only wrapped into ``QuantumState`` at the end of a run.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from darksqueeze.core.algebra import (
    AlgebraError,
    HilbertSpec,
    InvalidStateError,
    QOperator,
    QuantumState,
    max_norm,
)
from darksqueeze.core.config import settings
from darksqueeze.core.params import (
    KHZ_TO_RAD_PER_US,
    Branch,
    LevelKind,
    ModelError,
    ModelLevel,
    PhysicalParams,
    RampShape,
    Schedule,
    derive_couplings,
)
from darksqueeze.services.model import (
    TARGET_TAIL_TOL,
    build_hamiltonian,
    initial_state,
    instantaneous_target,
    lowering_operators,
    number_diagonals,
    target_state,
    target_tail,
)
from darksqueeze.utils.analysis import BudgetError, ErrorBudget, error_budget, gap_analytic

logger = logging.getLogger(__name__)

SPARSE_THRESHOLD = 64
NORM_DRIFT_TOL = 1e-8
TRACE_DRIFT_TOL = 1e-7
POSITIVITY_TOL = -1e-6
POLY_FIT_TOL = 1e-9

SERIES_COLUMNS = ["t_us", "n_a", "n_b", "fidelity", "gap_kHz", "trunc_top", "norm_or_trace"]


class DynamicsError(Exception):
    """Base exception for time evolution errors"""
    pass


class ScheduleError(DynamicsError):
    """Raised when a schedule is queried outside its time window"""
    pass


class ProtocolError(DynamicsError):
    """Raised when a protocol cannot be run with the given inputs"""
    pass


class IntegrationMethod(str, Enum):
    PIECEWISE = "piecewise"
    ADAPTIVE = "adaptive"


class EvolveConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_steps: int = Field(default=400, ge=10)
    method: IntegrationMethod = IntegrationMethod.PIECEWISE
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    record_every: int = Field(default=1, ge=1)
    truncation_tol: float = Field(default_factory=lambda: settings.truncation_tol)
    store_states: bool = False

    @field_validator("rel_tol", "abs_tol", "truncation_tol")
    @classmethod
    def check_tolerance(cls, v: float, info) -> float:
        if not 0 < v <= 1e-2:
            raise ValueError(f"{info.field_name} must lie in (0, 1e-2]")
        return v


def ramp_value(schedule: Schedule, t: float) -> float:
    """Ω₂(t) in 2π·kHz; zero at t = 0 and ``omega2_max`` at t = T for every shape."""
    T = schedule.t_total
    if t < -1e-9 * T or t > T * (1.0 + 1e-9):
        raise ScheduleError(f"t = {t} μs outside the schedule window [0, {T}]")
    s = min(max(t / T, 0.0), 1.0)
    if schedule.shape == RampShape.LINEAR:
        x = s
    elif schedule.shape == RampShape.SINE_SQUARED:
        x = math.sin(0.5 * math.pi * s) ** 2
    else:
        k = schedule.steepness
        x = (math.tanh(k * (2.0 * s - 1.0)) + math.tanh(k)) / (2.0 * math.tanh(k))
    return schedule.omega2_max * x


class HamiltonianPath:
    """H(t) = Σ_k f_k(t)·H_k with sparse H_k, or an exact per-call rebuild.

    ``from_builder`` fits H(Ω₂) = H₀ + Ω₂H₁ + Ω₂²H₂ from three builder calls,
    which is exact for every builder that is at most quadratic in Ω₂, and
    falls back to rebuilding when a fourth probe point disagrees.
    """

    def __init__(
        self,
        space: HilbertSpec,
        terms: Sequence[Tuple[Callable[[float], float], sp.csr_matrix]],
        rebuild: Optional[Callable[[float], np.ndarray]] = None,
    ):
        self.space = space
        self.terms = list(terms)
        self._rebuild = rebuild

    @classmethod
    def constant(cls, h: QOperator) -> "HamiltonianPath":
        if not h.is_hermitian():
            raise DynamicsError("Hamiltonian is not Hermitian")
        return cls(h.space, [(lambda t: 1.0, sp.csr_matrix(h.matrix))])

    @classmethod
    def from_builder(cls, builder: Callable[[float], QOperator], schedule: Schedule) -> "HamiltonianPath":
        peak = schedule.omega2_max
        h0 = builder(0.0)
        if peak == 0:
            return cls.constant(h0)
        h_half, h_peak, h_quarter = builder(0.5 * peak), builder(peak), builder(0.25 * peak)
        m0 = h0.matrix
        m2 = 2.0 * (h_peak.matrix - 2.0 * h_half.matrix + m0) / peak ** 2
        m1 = (4.0 * h_half.matrix - h_peak.matrix - 3.0 * m0) / peak
        for h in (h0, h_half, h_peak):
            if not h.is_hermitian():
                raise DynamicsError("Builder returned a non-Hermitian Hamiltonian")

        predicted = m0 + 0.25 * peak * m1 + 0.0625 * peak ** 2 * m2
        scale = max(1.0, max_norm(h_quarter.matrix))
        if max_norm(predicted - h_quarter.matrix) > POLY_FIT_TOL * scale:
            logger.debug("Builder is not quadratic in Omega2; rebuilding at every step")
            return cls(
                h0.space, [],
                rebuild=lambda t: builder(ramp_value(schedule, t)).matrix,
            )

        def amplitude(t: float) -> float:
            return ramp_value(schedule, t)

        def amplitude_sq(t: float) -> float:
            return ramp_value(schedule, t) ** 2

        # drop rounding residue left by differencing identical entries
        m1 = np.where(np.abs(m1) * peak > 1e-13 * scale, m1, 0.0)
        m2 = np.where(np.abs(m2) * peak ** 2 > 1e-13 * scale, m2, 0.0)
        terms = [(lambda t: 1.0, sp.csr_matrix(m0))]
        if np.any(m1):
            terms.append((amplitude, sp.csr_matrix(m1)))
        if np.any(m2):
            terms.append((amplitude_sq, sp.csr_matrix(m2)))
        return cls(h0.space, terms)

    @property
    def polynomial(self) -> bool:
        return self._rebuild is None

    def at(self, t: float) -> sp.csr_matrix:
        if self._rebuild is not None:
            return sp.csr_matrix(self._rebuild(t))
        total = self.terms[0][1] * self.terms[0][0](t)
        for coeff, matrix in self.terms[1:]:
            total = total + coeff(t) * matrix
        return sp.csr_matrix(total)

    def operator_at(self, t: float) -> QOperator:
        return QOperator(self.space, self.at(t).toarray())


@dataclass(frozen=True)
class CollapseSet:
    """Jump operators with rates in 2π·kHz."""

    channels: Tuple[Tuple[QOperator, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        for _, rate in self.channels:
            if rate < 0 or not math.isfinite(rate):
                raise DynamicsError(f"Collapse rate must be finite and non-negative, got {rate}")

    def active(self) -> List[Tuple[sp.csr_matrix, float]]:
        return [(sp.csr_matrix(op.matrix), rate) for op, rate in self.channels if rate > 0]


@dataclass
class RecordProbe:
    """Observables evaluated at record points.

    Number operators are diagonal at every model level, so only their
    diagonals are kept. ``target`` returns the reference ket at time t.
    """

    space: HilbertSpec
    n_a: Optional[np.ndarray] = None
    n_b: Optional[np.ndarray] = None
    target: Optional[Callable[[float], np.ndarray]] = None
    gap: Optional[Callable[[float], float]] = None

    def measure(self, t: float, data: np.ndarray) -> Dict[str, float]:
        is_ket = data.ndim == 1
        probs = np.abs(data) ** 2 if is_ket else np.real(np.diag(data))
        norm = float(np.linalg.norm(data)) if is_ket else float(np.real(np.trace(data)))
        weight = float(probs.sum())
        row = {
            "t_us": t,
            "n_a": float(np.dot(self.n_a, probs)) / weight if self.n_a is not None else math.nan,
            "n_b": float(np.dot(self.n_b, probs)) / weight if self.n_b is not None else math.nan,
            "fidelity": math.nan,
            "gap_kHz": self.gap(t) if self.gap is not None else math.nan,
            "trunc_top": self.truncation(probs / weight),
            "norm_or_trace": norm,
        }
        if self.target is not None:
            row["fidelity"] = _raw_fidelity(data, self.target(t))
        return row

    def truncation(self, probs: np.ndarray) -> float:
        """Largest population held by the top two levels of any bosonic factor."""
        grid = probs.reshape(self.space.dims)
        worst = 0.0
        for i in self.space.boson_indices():
            axes = tuple(k for k in range(grid.ndim) if k != i)
            marginal = grid.sum(axis=axes) if axes else grid
            worst = max(worst, float(marginal[-2:].sum()))
        return worst


@dataclass
class TimeSeries:
    times: np.ndarray
    rows: List[Dict[str, float]]
    states: Optional[List[np.ndarray]] = None
    valid: bool = True
    breach_time: Optional[float] = None
    breach_reason: Optional[str] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=SERIES_COLUMNS)

    def flag(self, t: float, reason: str) -> None:
        """Marks the run invalid; the earliest breach wins."""
        if self.valid or (self.breach_time is not None and t < self.breach_time):
            logger.warning(f"Run invalid at t={t:.6g} μs: {reason}")
            self.valid = False
            self.breach_time = t
            self.breach_reason = reason


def _record_steps(config: EvolveConfig) -> List[int]:
    return list(range(0, config.n_steps + 1, config.record_every))


class _Recorder:
    def __init__(self, probe: RecordProbe, config: EvolveConfig, dt: float, open_system: bool):
        self.probe = probe
        self.config = config
        self.dt = dt
        self.open_system = open_system
        self.series = TimeSeries(times=np.array([]), rows=[], states=[] if config.store_states else None)

    def record(self, t: float, data: np.ndarray) -> None:
        row = self.probe.measure(t, data)
        self.series.rows.append(row)
        if self.series.states is not None:
            self.series.states.append(np.array(data))
        if row["trunc_top"] > self.config.truncation_tol:
            self.series.flag(t, f"truncation: top-level population {row['trunc_top']:.3g}")
        if self.open_system:
            if abs(row["norm_or_trace"] - 1.0) > TRACE_DRIFT_TOL:
                self.series.flag(t, f"trace drift {row['norm_or_trace'] - 1.0:.3g}")
            lowest = float(np.linalg.eigvalsh(0.5 * (data + data.conj().T)).min())
            if lowest < POSITIVITY_TOL:
                self.series.flag(t, f"positivity: eigenvalue {lowest:.3g}")
        elif abs(row["norm_or_trace"] - 1.0) > NORM_DRIFT_TOL:
            self.series.flag(t, f"norm drift {row['norm_or_trace'] - 1.0:.3g}")

    def finish(self) -> TimeSeries:
        self.series.times = np.array([row["t_us"] for row in self.series.rows])
        return self.series


def _default_probe(space: HilbertSpec) -> RecordProbe:
    return RecordProbe(space=space)


def evolve_unitary(
    path: HamiltonianPath,
    psi0: QuantumState,
    schedule: Schedule,
    config: EvolveConfig,
    probe: Optional[RecordProbe] = None,
) -> Tuple[np.ndarray, TimeSeries]:
    """Propagates a ket across the schedule window.

    Piecewise: ψ ← exp(−iH(t_mid)dt)ψ per segment, through ``expm_multiply``
    on sparse H for large spaces and an eigendecomposition otherwise.
    Adaptive: RK45 on the Schrödinger equation.

    Returns:
        (final ket, time series)
    """
    if not psi0.is_ket:
        raise DynamicsError("evolve_unitary needs a ket")
    if psi0.space != path.space:
        raise DynamicsError("Initial state and Hamiltonian live on different spaces")
    probe = probe or _default_probe(path.space)
    n, T = config.n_steps, schedule.t_total
    dt = T / n
    recorder = _Recorder(probe, config, dt, open_system=False)
    psi = np.array(psi0.data)
    recorder.record(0.0, psi)

    if config.method == IntegrationMethod.PIECEWISE:
        dense = path.space.dim < SPARSE_THRESHOLD
        for k in range(n):
            h = path.at((k + 0.5) * dt)
            if dense:
                w, v = np.linalg.eigh(h.toarray())
                psi = v @ (np.exp(-1j * KHZ_TO_RAD_PER_US * dt * w) * (v.conj().T @ psi))
            else:
                psi = expm_multiply((-1j * KHZ_TO_RAD_PER_US * dt) * h, psi)
            if (k + 1) % config.record_every == 0:
                recorder.record((k + 1) * dt, psi)
    else:
        def rhs(t, y):
            return -1j * KHZ_TO_RAD_PER_US * (path.at(t) @ y)

        t_eval = np.array(_record_steps(config)) * dt
        sol = solve_ivp(
            rhs, (0.0, T), psi.astype(complex), method="RK45",
            t_eval=t_eval, rtol=config.rel_tol, atol=config.abs_tol,
        )
        if not sol.success:
            raise DynamicsError(f"Adaptive integration failed: {sol.message}")
        for j, t in enumerate(sol.t[1:], start=1):
            recorder.record(float(t), sol.y[:, j])
        psi = sol.y[:, -1] if n % config.record_every == 0 else _final_adaptive(rhs, sol, T, config)
    return psi, recorder.finish()


def _final_adaptive(rhs, sol, T, config):
    start = sol.t[-1]
    result = solve_ivp(rhs, (start, T), sol.y[:, -1], method="RK45", rtol=config.rel_tol, atol=config.abs_tol)
    return result.y[:, -1]


def _commutator(h: sp.csr_matrix, d: int) -> sp.csr_matrix:
    """−i[H, ·] on row-major vec(ρ), where vec(AρB) = (A ⊗ Bᵀ)vec(ρ)."""
    eye = sp.identity(d, format="csr", dtype=complex)
    return ((-1j * KHZ_TO_RAD_PER_US) * (sp.kron(h, eye) - sp.kron(eye, h.T))).tocsr()


def _liouvillian(path: HamiltonianPath, collapse: CollapseSet) -> Tuple[List[Tuple[Callable, sp.csr_matrix]], sp.csr_matrix]:
    """Hamiltonian superoperator terms and the time-independent dissipator."""
    d = path.space.dim
    eye = sp.identity(d, format="csr", dtype=complex)
    k = KHZ_TO_RAD_PER_US

    dissipator = sp.csr_matrix((d * d, d * d), dtype=complex)
    for jump, rate in collapse.active():
        m = (jump.conj().T @ jump).tocsr()
        dissipator = dissipator + (rate * k) * (
            sp.kron(jump, jump.conj()) - 0.5 * sp.kron(m, eye) - 0.5 * sp.kron(eye, m.T)
        )
    return [(coeff, _commutator(h, d)) for coeff, h in path.terms], dissipator.tocsr()


def evolve_lindblad(
    path: HamiltonianPath,
    collapse: CollapseSet,
    rho0: QuantumState,
    schedule: Schedule,
    config: EvolveConfig,
    probe: Optional[RecordProbe] = None,
) -> Tuple[np.ndarray, TimeSeries]:
    """Integrates dρ/dt = −i[H,ρ] + Σ Γ(LρL† − ½{L†L,ρ}).

    Adaptive runs evaluate the right-hand side with sparse products on the
    density matrix; piecewise runs exponentiate the sparse Liouvillian.

    Returns:
        (final density matrix, time series)
    """
    if rho0.space != path.space:
        raise DynamicsError("Initial state and Hamiltonian live on different spaces")
    rho = np.array(rho0.to_density().data)
    d = path.space.dim
    probe = probe or _default_probe(path.space)
    n, T = config.n_steps, schedule.t_total
    dt = T / n
    recorder = _Recorder(probe, config, dt, open_system=True)
    recorder.record(0.0, rho)
    k = KHZ_TO_RAD_PER_US
    jumps = [(j, rate * k, (j.conj().T @ j).tocsr()) for j, rate in collapse.active()]

    if config.method == IntegrationMethod.ADAPTIVE:
        def rhs(t, y):
            r = y.reshape(d, d)
            hr = path.at(t) @ r
            out = -1j * k * (hr - hr.conj().T)
            for jump, rate, m in jumps:
                jr = jump @ r
                mr = m @ r
                out += rate * (jump @ jr.conj().T - 0.5 * (mr + mr.conj().T))
            return out.ravel()

        t_eval = np.array(_record_steps(config)) * dt
        sol = solve_ivp(
            rhs, (0.0, T), rho.ravel(), method="RK45",
            t_eval=t_eval, rtol=config.rel_tol, atol=config.abs_tol,
        )
        if not sol.success:
            raise DynamicsError(f"Adaptive integration failed: {sol.message}")
        for j, t in enumerate(sol.t[1:], start=1):
            recorder.record(float(t), sol.y[:, j].reshape(d, d))
        last = sol.y[:, -1] if n % config.record_every == 0 else _final_adaptive(rhs, sol, T, config)
        rho = last.reshape(d, d)
    else:
        hamiltonian_terms, dissipator = _liouvillian(path, collapse)
        vec = rho.ravel()
        for step in range(n):
            t_mid = (step + 0.5) * dt
            if path.polynomial:
                generator = dissipator.copy()
                for coeff, sup in hamiltonian_terms:
                    generator = generator + coeff(t_mid) * sup
            else:
                # rebuilt paths (squeezed frame) get a fresh commutator per segment
                generator = dissipator + _commutator(path.at(t_mid), d)
            vec = expm_multiply(dt * generator, vec)
            if (step + 1) % config.record_every == 0:
                recorder.record((step + 1) * dt, vec.reshape(d, d))
        rho = vec.reshape(d, d)
    return rho, recorder.finish()


@dataclass
class ProtocolResult:
    final_state: Optional[QuantumState]
    fidelity_to_target: float
    leakage: float
    max_leakage: float
    time_series: TimeSeries
    error_budget: Optional[ErrorBudget] = None
    level: Optional[ModelLevel] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.time_series.valid

    def summary(self) -> Dict[str, Any]:
        series = self.time_series
        gaps = series.column("gap_kHz") if series.rows else np.array([math.nan])
        last = series.rows[-1] if series.rows else {}
        out = {
            "final_fidelity": self.fidelity_to_target,
            "leakage": self.leakage,
            "max_leakage": self.max_leakage,
            "min_gap_kHz": float(np.nanmin(gaps)) if np.any(np.isfinite(gaps)) else math.nan,
            "n_a_final": last.get("n_a", math.nan),
            "n_b_final": last.get("n_b", math.nan),
            "valid": series.valid,
            "breach_time_us": series.breach_time,
            "breach_reason": series.breach_reason,
        }
        out.update(self.extras)
        return out


def default_collapse_set(params: PhysicalParams, level: ModelLevel, schedule: Schedule) -> CollapseSet:
    """Cavity decay √κ·a and collective damping at γ_e = γΩ₂max²/(2Δ₂²)."""
    cavity, collective = lowering_operators(level)
    gamma_e = params.gamma * schedule.omega2_max ** 2 / (2.0 * params.delta2 ** 2)
    return CollapseSet(((cavity, params.kappa), (collective, gamma_e)))


def _protocol_params(params: PhysicalParams, schedule: Schedule) -> PhysicalParams:
    if schedule.omega2_max != params.omega2_max:
        logger.info(f"Using schedule Omega2 max {schedule.omega2_max:g} in place of {params.omega2_max:g}")
        return params.replace(omega2_max=schedule.omega2_max)
    return params


def run_protocol(
    params: PhysicalParams,
    schedule: Schedule,
    config: EvolveConfig,
    level: ModelLevel,
    open_system: bool = False,
    keep_residual_stark: bool = False,
    collapse: Optional[CollapseSet] = None,
) -> ProtocolResult:
    """Adiabatic ramp from the all-ground vacuum, tracked against the dark state.

    Raises:
        ProtocolError: if the ramp crosses the λ₂ ≥ λ₁ threshold.
    """
    params = _protocol_params(params, schedule)
    couplings = derive_couplings(params, schedule.omega2_max)
    if couplings.below_threshold:
        raise ProtocolError(
            f"Ramp reaches lambda2 = {abs(couplings.lambda2):.6g} >= lambda1 = {abs(couplings.lambda1):.6g}"
        )
    logger.info(
        f"Running {level.kind.value} protocol ({level.branch.value} branch): T={schedule.t_total:g} μs, "
        f"{config.n_steps} steps, open_system={open_system}"
    )

    try:
        path = HamiltonianPath.from_builder(
            lambda omega2: build_hamiltonian(params, omega2, level, keep_residual_stark), schedule
        )
        space = path.space
        n_a, n_b = number_diagonals(level)
        if level.kind == LevelKind.TRANSFORMED:
            vacuum = initial_state(level).data
            dark = lambda t: vacuum
            final_target = initial_state(level)
        else:
            dark = lambda t: instantaneous_target(params, ramp_value(schedule, t), level, strict=False).data
            final_target = target_state(params, level, strict=False)
        detuning = params.delta_a if level.branch == Branch.ATOMIC else params.delta_b

        def gap(t: float) -> float:
            mu = derive_couplings(params, ramp_value(schedule, t)).mu
            return gap_analytic(mu, abs(detuning))

        probe = RecordProbe(space, n_a, n_b, dark, gap)
        psi0 = initial_state(level)

        if open_system:
            collapse = collapse or default_collapse_set(params, level, schedule)
            data, series = evolve_lindblad(path, collapse, psi0, schedule, config, probe)
        else:
            data, series = evolve_unitary(path, psi0, schedule, config, probe)
    except (ModelError, AlgebraError, DynamicsError):
        raise
    except Exception as e:
        logger.error(f"Protocol run failed: {str(e)}", exc_info=True)
        raise DynamicsError(f"Protocol run failed: {str(e)}")

    final_state = _wrap_final(space, data, series)
    _flag_target_truncation(params, schedule, level, series)
    fid = _raw_fidelity(data, final_target.data)
    leakage = 1.0 - _raw_fidelity(data, dark(schedule.t_total))
    fidelities = series.column("fidelity")
    try:
        budget = error_budget(params, schedule) if level.branch == Branch.ATOMIC else None
    except BudgetError:
        budget = None

    logger.info(f"Protocol finished: fidelity={fid:.6f}, leakage={leakage:.3g}, valid={series.valid}")
    return ProtocolResult(
        final_state=final_state,
        fidelity_to_target=fid,
        leakage=leakage,
        max_leakage=float(np.max(1.0 - fidelities)),
        time_series=series,
        error_budget=budget,
        level=level,
    )


def _flag_target_truncation(
    params: PhysicalParams, schedule: Schedule, level: ModelLevel, series: TimeSeries
) -> None:
    """Invalidates the run from the first record point whose dark state no longer fits the cutoff."""
    if target_tail(params, level) <= TARGET_TAIL_TOL:
        return
    for t in series.times:
        tail = target_tail(params, level, omega2_current=ramp_value(schedule, float(t)))
        if tail > TARGET_TAIL_TOL:
            series.flag(float(t), f"truncation: target state loses {tail:.3g} above the Fock cutoff")
            return
    series.flag(schedule.t_total, "truncation: target state does not fit the Fock cutoff")


def _raw_fidelity(data: np.ndarray, target: np.ndarray) -> float:
    if data.ndim == 1:
        value = abs(np.vdot(target, data)) ** 2 / np.vdot(data, data).real
    else:
        value = np.vdot(target, data @ target).real / np.trace(data).real
    return float(min(1.0, max(0.0, value)))


def _wrap_final(space: HilbertSpec, data: np.ndarray, series: TimeSeries) -> Optional[QuantumState]:
    try:
        if data.ndim == 1:
            return QuantumState.ket(space, data)
        return QuantumState.density(space, data)
    except InvalidStateError as e:
        series.flag(series.times[-1] if series.times.size else 0.0, f"final state invalid: {str(e)}")
        return None


def transfer_phase(params: PhysicalParams) -> float:
    """Per-photon phase acquired by the cavity: the output ket is Σ e^{iαn}χ_n|n⟩."""
    lambda1 = params.omega1 * params.g1 / params.delta1
    return 0.5 * math.pi + params.phi1 + (math.pi if lambda1 < 0 else 0.0)


def run_state_transfer(
    params: PhysicalParams,
    config: EvolveConfig,
    input_state_b: np.ndarray,
    cavity_dim: int,
    b_dim: int,
) -> ProtocolResult:
    """Maps the collective-mode state onto the cavity with a resonant beam splitter.

    Ω₂ is held at zero and δ_a = δ_b = 0 is imposed, so the evolution runs for
    t* = π/(2√N·λ₁).

    Args:
        input_state_b: Fock amplitudes of the collective mode, length ≤ b_dim.
    """
    chi = np.zeros(b_dim, dtype=complex)
    amps = np.asarray(input_state_b, dtype=complex)
    if amps.size > b_dim:
        raise ProtocolError(f"Input state has {amps.size} levels but b_dim is {b_dim}")
    chi[: amps.size] = amps
    norm = np.linalg.norm(chi)
    if norm == 0:
        raise ProtocolError("Input state is zero")
    chi /= norm

    resonant = params.replace(delta_a=0.0, delta_b=0.0, omega2_max=0.0)
    lambda1 = resonant.omega1 * resonant.g1 / resonant.delta1
    coupling = math.sqrt(resonant.n_atoms) * abs(lambda1)
    if coupling == 0:
        raise ProtocolError("State transfer needs a nonzero lambda1")
    t_star = math.pi / (2.0 * coupling * KHZ_TO_RAD_PER_US)
    schedule = Schedule(shape=RampShape.LINEAR, t_total=t_star, omega2_max=0.0)
    level = ModelLevel(LevelKind.TWO_MODE, cavity_dim, b_dim=b_dim)
    logger.info(f"State transfer: t* = {t_star:.6g} μs, sqrt(N)*lambda1 = {coupling:.6g} kHz")

    h = build_hamiltonian(resonant, 0.0, level)
    path = HamiltonianPath.constant(h)
    space = path.space

    alpha = transfer_phase(params)
    mapped = np.zeros(cavity_dim, dtype=complex)
    keep = min(cavity_dim, b_dim)
    mapped[:keep] = chi[:keep] * np.exp(1j * alpha * np.arange(keep))
    if np.linalg.norm(mapped) < 1.0 - 1e-6:
        logger.warning("Input state does not fit the cavity truncation")
    mapped /= np.linalg.norm(mapped)
    vac_a, vac_b = np.zeros(cavity_dim), np.zeros(b_dim)
    vac_a[0] = vac_b[0] = 1.0
    full_target = np.kron(mapped, vac_b)

    n_a, n_b = number_diagonals(level)
    probe = RecordProbe(
        space, n_a, n_b,
        lambda t: full_target, lambda t: coupling,
    )
    psi0 = QuantumState.ket(space, np.kron(vac_a, chi))
    data, series = evolve_unitary(path, psi0, schedule, config, probe)

    final_state = _wrap_final(space, data, series)
    psi = data.reshape(cavity_dim, b_dim)
    rho_a = psi @ psi.conj().T
    fid = float(min(1.0, max(0.0, np.vdot(mapped, rho_a @ mapped).real)))
    logger.info(f"State transfer finished: fidelity={fid:.6f}")
    return ProtocolResult(
        final_state=final_state,
        fidelity_to_target=fid,
        leakage=1.0 - fid,
        max_leakage=1.0 - fid,
        time_series=series,
        level=level,
        extras={"t_star_us": t_star, "phase_per_photon": alpha},
    )
