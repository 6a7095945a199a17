"""Truncated Hilbert-space operator algebra.

Dense complex matrices on an ordered tensor product of factors. The leftmost
factor is the slowest-varying Kronecker index; every module relies on that
ordering.
"""
import logging
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from darksqueeze.core.config import settings

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
KET_NORM_TOL = 1e-9
DENSITY_HERMITIAN_TOL = 1e-10
DENSITY_TRACE_TOL = 1e-9
DENSITY_EIGEN_TOL = -1e-8


class AlgebraError(Exception):
    """Base exception for operator algebra errors"""
    pass


class InvalidDimensionError(AlgebraError):
    """Raised when a factor or operator has an unusable dimension"""
    pass


class DimensionCapError(AlgebraError):
    """Raised when a space exceeds the configured dimension cap"""
    pass


class SpaceMismatchError(AlgebraError):
    """Raised when operands live on different spaces"""
    pass


class NonHermitianError(AlgebraError):
    """Raised when a Hermitian operator is required"""
    pass


class NonFiniteError(AlgebraError):
    """Raised when a matrix has NaN or infinite entries"""
    pass


class InvalidStateError(AlgebraError):
    """Raised when a ket or density matrix violates its invariants"""
    pass


@dataclass(frozen=True)
class Boson:
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidDimensionError(f"Boson dimension must be positive, got {self.dim}")

    @property
    def size(self) -> int:
        return self.dim


@dataclass(frozen=True)
class Dicke:
    n_atoms: int

    def __post_init__(self):
        if self.n_atoms < 1:
            raise InvalidDimensionError(f"Dicke atom number must be positive, got {self.n_atoms}")

    @property
    def size(self) -> int:
        return self.n_atoms + 1


@dataclass(frozen=True)
class Multilevel:
    levels: int
    count: int

    def __post_init__(self):
        if self.levels < 1 or self.count < 1:
            raise InvalidDimensionError(
                f"Multilevel factor needs positive levels and count, got {self.levels}, {self.count}"
            )

    @property
    def size(self) -> int:
        return self.levels ** self.count


Factor = Union[Boson, Dicke, Multilevel]


@dataclass(frozen=True)
class HilbertSpec:
    factors: Tuple[Factor, ...]
    max_dimension: int = field(default=0, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise InvalidDimensionError("A Hilbert space needs at least one factor")
        cap = self.max_dimension or settings.max_dimension
        if self.dim > cap:
            raise DimensionCapError(f"Space dimension {self.dim} exceeds the cap of {cap}")

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(f.size for f in self.factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def boson_indices(self) -> Tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.factors) if isinstance(f, Boson))


def single(factor: Factor) -> HilbertSpec:
    return HilbertSpec((factor,))


def _freeze(matrix: np.ndarray) -> np.ndarray:
    matrix = np.array(matrix, dtype=complex)
    matrix.setflags(write=False)
    return matrix


def max_norm(matrix: np.ndarray) -> float:
    """Largest absolute entry."""
    return float(np.max(np.abs(matrix))) if matrix.size else 0.0


@dataclass(frozen=True)
class QOperator:
    space: HilbertSpec
    matrix: np.ndarray

    def __post_init__(self):
        matrix = _freeze(self.matrix)
        if matrix.shape != (self.space.dim, self.space.dim):
            raise InvalidDimensionError(
                f"Matrix shape {matrix.shape} does not match space dimension {self.space.dim}"
            )
        object.__setattr__(self, "matrix", matrix)

    def dag(self) -> "QOperator":
        return QOperator(self.space, self.matrix.conj().T)

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        scale = max(1.0, max_norm(self.matrix))
        return max_norm(self.matrix - self.matrix.conj().T) < tol * scale

    def norm(self) -> float:
        return max_norm(self.matrix)

    def _check(self, other: "QOperator") -> None:
        if other.space != self.space:
            raise SpaceMismatchError("Operators act on different spaces")

    def __add__(self, other: "QOperator") -> "QOperator":
        self._check(other)
        return QOperator(self.space, self.matrix + other.matrix)

    def __sub__(self, other: "QOperator") -> "QOperator":
        self._check(other)
        return QOperator(self.space, self.matrix - other.matrix)

    def __matmul__(self, other: "QOperator") -> "QOperator":
        self._check(other)
        return QOperator(self.space, self.matrix @ other.matrix)

    def __mul__(self, scalar: complex) -> "QOperator":
        return QOperator(self.space, scalar * self.matrix)

    __rmul__ = __mul__

    def __neg__(self) -> "QOperator":
        return QOperator(self.space, -self.matrix)


def commutator(a: QOperator, b: QOperator) -> QOperator:
    return a @ b - b @ a


def identity(space: HilbertSpec) -> QOperator:
    return QOperator(space, np.eye(space.dim))


def zero(space: HilbertSpec) -> QOperator:
    return QOperator(space, np.zeros((space.dim, space.dim)))


@dataclass(frozen=True)
class QuantumState:
    space: HilbertSpec
    data: np.ndarray

    def __post_init__(self):
        data = _freeze(self.data)
        d = self.space.dim
        if data.shape == (d,):
            if abs(np.linalg.norm(data) - 1.0) >= KET_NORM_TOL:
                raise InvalidStateError(f"Ket is not normalized (norm {np.linalg.norm(data)})")
        elif data.shape == (d, d):
            if max_norm(data - data.conj().T) >= DENSITY_HERMITIAN_TOL:
                raise InvalidStateError("Density matrix is not Hermitian")
            if abs(np.trace(data) - 1.0) >= DENSITY_TRACE_TOL:
                raise InvalidStateError(f"Density matrix trace is {np.trace(data).real}")
            if np.linalg.eigvalsh(data).min() <= DENSITY_EIGEN_TOL:
                raise InvalidStateError("Density matrix has a negative eigenvalue")
        else:
            raise InvalidDimensionError(f"State shape {data.shape} does not match dimension {d}")
        object.__setattr__(self, "data", data)

    @property
    def is_ket(self) -> bool:
        return self.data.ndim == 1

    @classmethod
    def ket(cls, space: HilbertSpec, vector: np.ndarray) -> "QuantumState":
        """Normalizes ``vector`` and wraps it as a ket."""
        vector = np.asarray(vector, dtype=complex)
        norm = np.linalg.norm(vector)
        if norm == 0 or not np.isfinite(norm):
            raise InvalidStateError("Cannot normalize a zero or non-finite vector")
        return cls(space, vector / norm)

    @classmethod
    def density(cls, space: HilbertSpec, matrix: np.ndarray) -> "QuantumState":
        matrix = np.asarray(matrix, dtype=complex)
        matrix = 0.5 * (matrix + matrix.conj().T)
        return cls(space, matrix / np.trace(matrix).real)

    def to_density(self) -> "QuantumState":
        if not self.is_ket:
            return self
        return QuantumState(self.space, np.outer(self.data, self.data.conj()))

    def probabilities(self) -> np.ndarray:
        if self.is_ket:
            return np.abs(self.data) ** 2
        return np.real(np.diag(self.data))


def basis_state(space: HilbertSpec, levels: Sequence[int]) -> QuantumState:
    """Product basis ket |levels[0], levels[1], ...>."""
    if len(levels) != len(space.factors):
        raise InvalidDimensionError("One level per factor is required")
    index = int(np.ravel_multi_index(tuple(levels), space.dims))
    vector = np.zeros(space.dim, dtype=complex)
    vector[index] = 1.0
    return QuantumState(space, vector)


def product_state(space: HilbertSpec, vectors: Sequence[np.ndarray]) -> QuantumState:
    return QuantumState.ket(space, reduce(np.kron, [np.asarray(v, dtype=complex) for v in vectors]))


def annihilation(dim: int) -> QOperator:
    if dim < 2:
        raise InvalidDimensionError(f"Ladder operators need dim >= 2, got {dim}")
    return QOperator(single(Boson(dim)), np.diag(np.sqrt(np.arange(1, dim)), k=1))


def number(dim: int) -> QOperator:
    return QOperator(single(Boson(dim)), np.diag(np.arange(dim, dtype=float)))


def collective_spin_ops(n_atoms: int) -> Tuple[QOperator, QOperator, QOperator]:
    """S+, S-, Sz on the symmetric subspace, basis labelled by excitation number m."""
    space = single(Dicke(n_atoms))
    m = np.arange(n_atoms)
    splus = np.diag(np.sqrt((m + 1.0) * (n_atoms - m)), k=-1)
    sz = np.diag(np.arange(n_atoms + 1) - n_atoms / 2.0)
    return QOperator(space, splus), QOperator(space, splus.T.copy()), QOperator(space, sz)


def _local_matrix(op: Union[QOperator, np.ndarray]) -> np.ndarray:
    return op.matrix if isinstance(op, QOperator) else np.asarray(op, dtype=complex)


def embed(op: Union[QOperator, np.ndarray], space: HilbertSpec, factor_index: int) -> QOperator:
    """Places ``op`` on one factor of ``space`` with identities elsewhere."""
    if not 0 <= factor_index < len(space.factors):
        raise InvalidDimensionError(f"Factor index {factor_index} out of range")
    local = _local_matrix(op)
    if local.shape != (space.dims[factor_index],) * 2:
        raise InvalidDimensionError(
            f"Operator of shape {local.shape} does not fit factor {factor_index} "
            f"of dimension {space.dims[factor_index]}"
        )
    parts = [local if i == factor_index else np.eye(d) for i, d in enumerate(space.dims)]
    return QOperator(space, reduce(np.kron, parts))


def tensor(space: HilbertSpec, ops: Sequence[Union[QOperator, np.ndarray, None]]) -> QOperator:
    """Kronecker product of per-factor operators; ``None`` means identity."""
    if len(ops) != len(space.factors):
        raise InvalidDimensionError("One operator per factor is required")
    parts = [np.eye(d) if op is None else _local_matrix(op) for op, d in zip(ops, space.dims)]
    return QOperator(space, reduce(np.kron, parts))


def matrix_exponential(op: QOperator) -> QOperator:
    """e^M; Hermitian and anti-Hermitian inputs go through an eigendecomposition."""
    m = op.matrix
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("Cannot exponentiate a matrix with non-finite entries")
    scale = max(1.0, max_norm(m))
    if max_norm(m - m.conj().T) < HERMITIAN_TOL * scale:
        w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
        return QOperator(op.space, (v * np.exp(w)) @ v.conj().T)
    if max_norm(m + m.conj().T) < HERMITIAN_TOL * scale:
        h = -1j * m
        w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
        return QOperator(op.space, (v * np.exp(1j * w)) @ v.conj().T)
    return QOperator(op.space, scipy.linalg.expm(m))


def expectation(state: QuantumState, op: QOperator) -> complex:
    if state.space != op.space:
        raise SpaceMismatchError("State and operator act on different spaces")
    if state.is_ket:
        return complex(np.vdot(state.data, op.matrix @ state.data))
    return complex(np.trace(op.matrix @ state.data))


def variance(state: QuantumState, op: QOperator) -> float:
    if not op.is_hermitian():
        raise NonHermitianError("Variance requires a Hermitian operator")
    mean = expectation(state, op).real
    return float(expectation(state, op @ op).real - mean ** 2)


def factor_distribution(state: QuantumState, factor_index: int) -> np.ndarray:
    """Marginal level populations of one factor."""
    probs = state.probabilities().reshape(state.space.dims)
    axes = tuple(i for i in range(len(state.space.dims)) if i != factor_index)
    return probs.sum(axis=axes)


def top_population(state: QuantumState, factor_index: int, levels: int = 2) -> float:
    """Population in the highest ``levels`` levels of a factor (truncation monitor)."""
    return float(factor_distribution(state, factor_index)[-levels:].sum())


def reduced_density(state: QuantumState, factor_index: int) -> np.ndarray:
    """Partial trace onto a single factor."""
    dims = state.space.dims
    keep = dims[factor_index]
    if state.is_ket:
        psi = np.moveaxis(state.data.reshape(dims), factor_index, 0).reshape(keep, -1)
        return psi @ psi.conj().T
    n = len(dims)
    rho = state.data.reshape(dims + dims)
    rho = np.moveaxis(rho, (factor_index, n + factor_index), (0, n))
    rest = state.space.dim // keep
    rho = rho.reshape(keep, rest, keep, rest)
    return np.einsum("ajbj->ab", rho)


def bulk_mask(space: HilbertSpec, fraction: float) -> np.ndarray:
    """Boolean mask of basis states whose bosonic levels avoid the top ``fraction``."""
    grids = np.indices(space.dims).reshape(len(space.dims), -1)
    mask = np.ones(space.dim, dtype=bool)
    for i in space.boson_indices():
        keep = max(1, int(np.floor((1.0 - fraction) * space.dims[i])))
        mask &= grids[i] < keep
    return mask
