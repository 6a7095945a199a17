"""Hamiltonian builders at four fidelity levels, squeezing transforms and dark-state targets.

All builders return matrices in units of 2π·kHz. Spaces put the cavity
first: (cavity, atoms) for the atomic levels and (a, b) for the two-mode
levels. Per-atom basis order is g, e, r, s.
"""
import logging
import math
from functools import reduce
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from darksqueeze.core.algebra import (
    AlgebraError,
    Boson,
    Dicke,
    HilbertSpec,
    Multilevel,
    QOperator,
    QuantumState,
    annihilation,
    basis_state,
    collective_spin_ops,
    matrix_exponential,
)
from darksqueeze.core.config import settings
from darksqueeze.core.params import (
    AboveThresholdError,
    Branch,
    DerivedCouplings,
    LevelKind,
    ModelError,
    ModelLevel,
    PhysicalParams,
    TruncationError,
    derive_couplings,
    squeeze_params,
)

logger = logging.getLogger(__name__)

G, E, R, S = range(4)
TARGET_TAIL_TOL = 1e-3

__all__ = [
    "build_full_hamiltonian",
    "build_eliminated_hamiltonian",
    "build_spin_hamiltonian",
    "build_two_mode_hamiltonian",
    "build_transformed_hamiltonian",
    "build_hamiltonian",
    "squeeze_params",
    "squeeze_operator",
    "squeezed_vacuum_amplitudes",
    "target_state",
    "instantaneous_target",
    "initial_state",
    "level_space",
    "number_operators",
    "number_diagonals",
    "lowering_operators",
    "dicke_isometry",
]


def level_space(level: ModelLevel) -> HilbertSpec:
    if level.kind in (LevelKind.FULL, LevelKind.ELIMINATED):
        return HilbertSpec((Boson(level.cavity_dim), Multilevel(4, level.n_atoms)))
    if level.kind == LevelKind.SPIN:
        return HilbertSpec((Boson(level.cavity_dim), Dicke(level.n_atoms)))
    return HilbertSpec((Boson(level.cavity_dim), Boson(level.b_dim)))


def _projector(x: int, y: int) -> np.ndarray:
    m = np.zeros((4, 4))
    m[x, y] = 1.0
    return m


def _atom_sum(local: np.ndarray, n_atoms: int) -> np.ndarray:
    """Σ_j of a single-atom operator acting on atom j."""
    total = np.zeros((4 ** n_atoms, 4 ** n_atoms), dtype=complex)
    for j in range(n_atoms):
        parts = [local if k == j else np.eye(4) for k in range(n_atoms)]
        total += reduce(np.kron, parts)
    return total


def _ladder(dim: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = annihilation(dim).matrix
    return a, a.conj().T, a.conj().T @ a


def _omega2(params: PhysicalParams, omega2_current: Optional[float]) -> float:
    return params.omega2_max if omega2_current is None else float(omega2_current)


def _finish(space: HilbertSpec, matrix: np.ndarray) -> QOperator:
    # Hermitian by construction; symmetrize rounding noise away
    return QOperator(space, 0.5 * (matrix + matrix.conj().T))


def build_full_hamiltonian(
    params: PhysicalParams,
    omega2_current: Optional[float],
    cavity_dim: int,
    n_atoms: int,
) -> QOperator:
    """Interaction-picture Hamiltonian with every atom's four levels resolved."""
    level = ModelLevel(LevelKind.FULL, cavity_dim, n_atoms=n_atoms)
    space = level_space(level)
    omega2 = _omega2(params, omega2_current)
    a, ad, n = _ladder(cavity_dim)
    ic, ia = np.eye(cavity_dim), np.eye(4 ** n_atoms)

    h = params.cavity_offset * np.kron(n, ia)
    h = h + np.kron(ic, _atom_sum(
        params.two_photon_offset * _projector(E, E)
        + params.delta1 * _projector(R, R)
        + params.delta2 * _projector(S, S),
        n_atoms,
    ))
    a1 = (params.g1 * np.kron(a, _atom_sum(_projector(R, G), n_atoms))
          + params.omega1 * np.exp(1j * params.phi1) * np.kron(ic, _atom_sum(_projector(R, E), n_atoms)))
    a2 = (params.g2 * np.kron(a, _atom_sum(_projector(S, E), n_atoms))
          + omega2 * np.exp(1j * params.phi2) * np.kron(ic, _atom_sum(_projector(S, G), n_atoms)))
    h = h + a1 + a1.conj().T + a2 + a2.conj().T
    return _finish(space, h)


def build_eliminated_hamiltonian(
    params: PhysicalParams,
    omega2_current: Optional[float],
    cavity_dim: int,
    n_atoms: int,
) -> QOperator:
    """Second-order effective Hamiltonian on the full four-level basis.

    Keeps the excited-state energies, Stark shifts and exchange sums so that
    the excited-state number stays a conserved quantity.
    """
    level = ModelLevel(LevelKind.ELIMINATED, cavity_dim, n_atoms=n_atoms)
    space = level_space(level)
    c = derive_couplings(params, _omega2(params, omega2_current))
    a, ad, n = _ladder(cavity_dim)
    ic, ia = np.eye(cavity_dim), np.eye(4 ** n_atoms)
    half = 0.5 * n_atoms * ia

    p_e = _atom_sum(_projector(E, E), n_atoms)
    p_r = _atom_sum(_projector(R, R), n_atoms)
    p_s = _atom_sum(_projector(S, S), n_atoms)
    s_plus = _atom_sum(_projector(E, G), n_atoms)
    s_z = 0.5 * (p_e - _atom_sum(_projector(G, G), n_atoms))
    exchange1 = _atom_sum(_projector(R, G), n_atoms) @ _atom_sum(_projector(G, R), n_atoms)
    exchange2 = _atom_sum(_projector(S, E), n_atoms) @ _atom_sum(_projector(E, S), n_atoms)

    h = params.cavity_offset * np.kron(n, ia) + params.two_photon_offset * np.kron(ic, p_e)
    h = h + (params.delta1 + c.eta_e) * np.kron(ic, p_r) + c.xi_g * np.kron(n, p_r)
    h = h + c.xi_g * np.kron(ic, exchange1)
    h = h - c.eta_e * np.kron(ic, s_z + half) - c.xi_g * np.kron(n, half - s_z)
    raman1 = c.lambda1 * np.exp(-1j * params.phi1) * np.kron(a, s_plus)
    h = h - raman1 - raman1.conj().T

    h = h + (params.delta2 + c.eta_g) * np.kron(ic, p_s) + c.xi_e * np.kron(n, p_s)
    h = h + c.xi_e * np.kron(ic, exchange2)
    h = h - c.xi_e * np.kron(n, s_z + half) - c.eta_g * np.kron(ic, half - s_z)
    raman2 = c.lambda2 * np.exp(1j * params.phi2) * np.kron(ad, s_plus)
    h = h - raman2 - raman2.conj().T
    return _finish(space, h)


def build_spin_hamiltonian(
    params: PhysicalParams,
    omega2_current: Optional[float],
    cavity_dim: int,
    n_atoms: int,
) -> QOperator:
    """Ground-manifold model on cavity ⊗ Dicke(N), constants retained."""
    level = ModelLevel(LevelKind.SPIN, cavity_dim, n_atoms=n_atoms)
    space = level_space(level)
    c = derive_couplings(params, _omega2(params, omega2_current))
    a, ad, n = _ladder(cavity_dim)
    s_plus, _, s_z = (op.matrix for op in collective_spin_ops(n_atoms))
    ic, id_ = np.eye(cavity_dim), np.eye(n_atoms + 1)
    excited = s_z + 0.5 * n_atoms * id_
    ground = 0.5 * n_atoms * id_ - s_z

    h = params.cavity_offset * np.kron(n, id_)
    h = h + (params.two_photon_offset - c.eta_e) * np.kron(ic, excited)
    h = h - c.xi_g * np.kron(n, ground) - c.xi_e * np.kron(n, excited)
    h = h - c.eta_g * np.kron(ic, ground)
    raman = (c.lambda1 * np.exp(-1j * params.phi1) * np.kron(a, s_plus)
             + c.lambda2 * np.exp(1j * params.phi2) * np.kron(ad, s_plus))
    h = h - raman - raman.conj().T
    return _finish(space, h)


def _sparse_ladder(dim: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), 1, format="csr")


def _sparse_number(dim: int) -> sp.csr_matrix:
    return sp.diags(np.arange(dim, dtype=float), 0, format="csr")


def build_two_mode_hamiltonian(
    params: PhysicalParams,
    omega2_current: Optional[float],
    dim_a: int,
    dim_b: int,
    keep_residual_stark: bool = False,
) -> QOperator:
    """Bosonized Hamiltonian δ_a a†a + δ_b b†b − [√N(λ₁e^{−iφ₁}a + λ₂e^{iφ₂}a†)b† + H.c.].

    ``keep_residual_stark`` adds the −(η_e − η_g)b†b term that bosonization
    leaves behind when η_e ≠ η_g.
    """
    space = HilbertSpec((Boson(dim_a), Boson(dim_b)))
    c = derive_couplings(params, _omega2(params, omega2_current))
    if c.degenerate:
        logger.warning("delta_a = delta_b = 0: atomic and field dark states are degenerate")
    # sparse assembly keeps the 60x60-mode spaces to a single dense copy
    a, b = _sparse_ladder(dim_a), _sparse_ladder(dim_b)
    eye_a, eye_b = sp.identity(dim_a, format="csr"), sp.identity(dim_b, format="csr")
    delta_b = c.delta_b - (c.eta_e - c.eta_g if keep_residual_stark else 0.0)

    h = c.delta_a * sp.kron(_sparse_number(dim_a), eye_b) + delta_b * sp.kron(eye_a, _sparse_number(dim_b))
    field = c.lambda1 * np.exp(-1j * params.phi1) * a + c.lambda2 * np.exp(1j * params.phi2) * a.T
    coupling = math.sqrt(params.n_atoms) * sp.kron(field, b.T)
    h = h - coupling - coupling.conj().T
    return QOperator(space, h.toarray())


def _folded_phase1(params: PhysicalParams, couplings: DerivedCouplings) -> float:
    return params.phi1 + (math.pi if couplings.lambda1 < 0 else 0.0)


def build_transformed_hamiltonian(
    params: PhysicalParams,
    omega2_current: Optional[float],
    dim_a: int,
    dim_b: int,
    branch: Branch = Branch.ATOMIC,
) -> QOperator:
    """Beam-splitter Hamiltonian seen from the squeezed frame of one branch."""
    space = HilbertSpec((Boson(dim_a), Boson(dim_b)))
    c = derive_couplings(params, _omega2(params, omega2_current))
    if c.below_threshold:
        raise AboveThresholdError(
            f"lambda2 = {c.lambda2:.6g} >= lambda1 = {c.lambda1:.6g}: transformed frame undefined"
        )
    eye_a, eye_b = sp.identity(dim_a, format="csr"), sp.identity(dim_b, format="csr")
    if Branch(branch) == Branch.ATOMIC:
        h = c.delta_a * sp.kron(_sparse_number(dim_a), eye_b)
    else:
        h = c.delta_b * sp.kron(eye_a, _sparse_number(dim_b))
    coupling = c.mu * np.exp(-1j * _folded_phase1(params, c)) * sp.kron(_sparse_ladder(dim_a), _sparse_ladder(dim_b).T)
    h = h - coupling - coupling.conj().T
    return QOperator(space, h.toarray())


def build_hamiltonian(
    params: PhysicalParams,
    omega2_current: Optional[float],
    level: ModelLevel,
    keep_residual_stark: bool = False,
) -> QOperator:
    """Dispatch on the model level."""
    try:
        if level.kind == LevelKind.FULL:
            return build_full_hamiltonian(params, omega2_current, level.cavity_dim, level.n_atoms)
        if level.kind == LevelKind.ELIMINATED:
            return build_eliminated_hamiltonian(params, omega2_current, level.cavity_dim, level.n_atoms)
        if level.kind == LevelKind.SPIN:
            return build_spin_hamiltonian(params, omega2_current, level.cavity_dim, level.n_atoms)
        if level.kind == LevelKind.TWO_MODE:
            return build_two_mode_hamiltonian(
                params, omega2_current, level.cavity_dim, level.b_dim, keep_residual_stark
            )
        return build_transformed_hamiltonian(
            params, omega2_current, level.cavity_dim, level.b_dim, level.branch
        )
    except (ModelError, AlgebraError):
        raise
    except Exception as e:
        logger.error(f"Failed to build {level.kind.value} Hamiltonian: {str(e)}", exc_info=True)
        raise ModelError(f"Hamiltonian construction failed: {str(e)}")


def squeeze_generator(r: float, theta: float, dim: int) -> np.ndarray:
    """(ξ*b² − ξb†²)/2 with ξ = r·e^{iθ}."""
    b, bd, _ = _ladder(dim)
    xi = r * np.exp(1j * theta)
    return 0.5 * (np.conj(xi) * b @ b - xi * bd @ bd)


def squeeze_operator(r: float, theta: float, dim: int, pad: int = 0) -> QOperator:
    """S(ξ) = exp[(ξ*b² − ξb†²)/2] on ``dim`` Fock levels.

    With ``pad`` > 0 the exponential is taken on a larger space and the
    leading block is kept, which removes truncation-edge reflections from
    the represented levels.
    """
    if r < 0:
        raise ModelError(f"Squeezing strength must be non-negative, got {r}")
    space = HilbertSpec((Boson(dim),))
    if r == 0:
        return QOperator(space, np.eye(dim))
    big = dim + pad
    generator = QOperator(HilbertSpec((Boson(big),)), squeeze_generator(r, theta, big))
    full = matrix_exponential(generator).matrix
    tail = _tail_population(squeezed_vacuum_amplitudes(r, theta, dim))
    if tail > settings.truncation_tol:
        logger.warning(f"Squeezed vacuum at r={r:.4g} loses {tail:.3g} beyond {dim} Fock levels")
    return QOperator(space, full[:dim, :dim])


def squeezed_vacuum_amplitudes(r: float, theta: float, dim: int) -> np.ndarray:
    """Fock amplitudes of S(re^{iθ})|0⟩ on levels 0..dim−1, unnormalized.

    c₀ = 1/√cosh r and c_{2n+2} = −e^{iθ}·tanh r·√((2n+1)/(2n+2))·c_{2n}; odd levels vanish.
    """
    amps = np.zeros(dim, dtype=complex)
    amps[0] = 1.0 / math.sqrt(math.cosh(r))
    ratio = -np.exp(1j * theta) * math.tanh(r)
    for k in range(2, dim, 2):
        amps[k] = amps[k - 2] * ratio * math.sqrt((k - 1) / k)
    return amps


def _tail_population(amps: np.ndarray) -> float:
    return max(0.0, 1.0 - float(np.sum(np.abs(amps) ** 2)))


def _squeezed_factor(r: float, theta: float, dim: int, strict: bool = True) -> np.ndarray:
    amps = squeezed_vacuum_amplitudes(r, theta, dim)
    tail = _tail_population(amps)
    if tail > TARGET_TAIL_TOL:
        message = f"Squeezed state at r={r:.4g} needs more than {dim} levels (tail {tail:.3g})"
        if strict:
            raise TruncationError(message)
        logger.debug(f"{message}; keeping the renormalized cut")
    return amps / np.linalg.norm(amps)


def _vacuum(dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[0] = 1.0
    return v


def dicke_isometry(n_atoms: int) -> np.ndarray:
    """Columns are the symmetric ground-manifold states |m⟩ (m atoms in e) in the four-level basis."""
    iso = np.zeros((4 ** n_atoms, n_atoms + 1))
    for index in range(4 ** n_atoms):
        digits = np.unravel_index(index, (4,) * n_atoms)
        if all(d in (G, E) for d in digits):
            iso[index, sum(d == E for d in digits)] = 1.0
    return iso / np.linalg.norm(iso, axis=0)


def target_state(
    params: PhysicalParams,
    level: ModelLevel,
    branch: Optional[Branch] = None,
    omega2_current: Optional[float] = None,
    strict: bool = True,
) -> QuantumState:
    """Dark state of the effective Hamiltonian on the level's space.

    Atomic branch: vacuum cavity times a squeezed collective mode. Field
    branch: squeezed cavity times the unexcited collective mode. At the spin
    and full levels the collective-mode amplitudes are placed on the Dicke
    excitation states.

    Raises:
        TruncationError: if the squeezed factor leaves more than
            ``TARGET_TAIL_TOL`` above the cutoff. With ``strict=False`` the
            cut state is renormalized and returned instead.
    """
    branch = Branch(branch or level.branch)
    c = derive_couplings(params, _omega2(params, omega2_current))
    if c.below_threshold:
        raise AboveThresholdError("no dark squeezed state above threshold")
    theta = c.theta(branch)
    space = level_space(level)
    if level.kind == LevelKind.TRANSFORMED:
        # the squeezed frame maps the dark state onto the vacuum
        return initial_state(level)

    if branch == Branch.ATOMIC:
        cavity = _vacuum(level.cavity_dim)
        collective = _squeezed_factor(c.r, theta, level.collective_dim, strict)
    else:
        cavity = _squeezed_factor(c.r, theta, level.cavity_dim, strict)
        collective = _vacuum(level.collective_dim)

    if level.kind in (LevelKind.FULL, LevelKind.ELIMINATED):
        collective = dicke_isometry(level.n_atoms) @ collective
    return QuantumState.ket(space, np.kron(cavity, collective))


def target_tail(
    params: PhysicalParams,
    level: ModelLevel,
    branch: Optional[Branch] = None,
    omega2_current: Optional[float] = None,
) -> float:
    """Squeezed-state population the level's cutoff leaves out; zero in the squeezed frame."""
    if level.kind == LevelKind.TRANSFORMED:
        return 0.0
    branch = Branch(branch or level.branch)
    c = derive_couplings(params, _omega2(params, omega2_current))
    if c.below_threshold:
        raise AboveThresholdError("no dark squeezed state above threshold")
    dim = level.collective_dim if branch == Branch.ATOMIC else level.cavity_dim
    return _tail_population(squeezed_vacuum_amplitudes(c.r, c.theta(branch), dim))


def instantaneous_target(
    params: PhysicalParams,
    omega2: float,
    level: ModelLevel,
    branch: Optional[Branch] = None,
    strict: bool = True,
) -> QuantumState:
    """Dark state at the current Ω₂, tracked during a ramp."""
    return target_state(params, level, branch, omega2_current=omega2, strict=strict)


def initial_state(level: ModelLevel) -> QuantumState:
    """Cavity vacuum with every atom in |g⟩."""
    space = level_space(level)
    return basis_state(space, [0] * len(space.factors))


def number_diagonals(level: ModelLevel) -> Tuple[np.ndarray, np.ndarray]:
    """Diagonals of the cavity photon number and the collective excitation number."""
    other = level_space(level).dims[1]
    if level.bosonic or level.kind == LevelKind.SPIN:
        collective = np.arange(other, dtype=float)
    else:
        collective = np.real(np.diag(_atom_sum(_projector(E, E), level.n_atoms)))
    return (
        np.kron(np.arange(level.cavity_dim, dtype=float), np.ones(other)),
        np.kron(np.ones(level.cavity_dim), collective),
    )


def number_operators(level: ModelLevel) -> Tuple[QOperator, QOperator]:
    """Cavity photon number and collective excitation number on the level's space."""
    space = level_space(level)
    n_a, n_b = number_diagonals(level)
    return QOperator(space, np.diag(n_a)), QOperator(space, np.diag(n_b))


def lowering_operators(level: ModelLevel) -> Tuple[QOperator, QOperator]:
    """Cavity a and the collective lowering operator (b, or S⁻/√N on atomic levels)."""
    space = level_space(level)
    a, _, _ = _ladder(level.cavity_dim)
    if level.bosonic:
        lowering, _, _ = _ladder(level.b_dim)
    elif level.kind == LevelKind.SPIN:
        lowering = collective_spin_ops(level.n_atoms)[1].matrix / math.sqrt(level.n_atoms)
    else:
        lowering = _atom_sum(_projector(G, E), level.n_atoms) / math.sqrt(level.n_atoms)
    return (
        QOperator(space, np.kron(a, np.eye(space.dims[1]))),
        QOperator(space, np.kron(np.eye(level.cavity_dim), lowering)),
    )
