"""Dense state-vector and density-matrix primitives.

Basis ordering is big-endian: qubit 0 is the leftmost bit of a bitstring and
the most significant bit of the basis index. All kernels operate on a leading
batch axis so that many parameter settings can be simulated in one pass; the
single-state functions (`apply_unitary`, `apply_kraus`) are thin wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_PURE_QUBITS = 12
MAX_MIXED_QUBITS = 8


@dataclass(frozen=True)
class Tolerances:
    """Numeric policy shared by every module."""

    norm: float = 1e-10
    unitary: float = 1e-10
    kraus: float = 1e-10
    hermitian: float = 1e-10
    eigenvalue_floor: float = 1e-10
    prob_floor: float = 1e-12
    qfi_eigen_cutoff: float = 1e-10


TOL = Tolerances()


class QCoreError(ValueError):
    pass


class NonUnitary(QCoreError):
    pass


class BadTarget(QCoreError):
    pass


class IncompleteKraus(QCoreError):
    pass


class NotHermitian(QCoreError):
    pass


class InvalidState(QCoreError):
    pass


@dataclass(frozen=True, eq=False)
class QuantumState:
    """A pure state vector (shape ``(2**n,)``) or density matrix (``(2**n, 2**n)``)."""

    n: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        dim = 2**self.n
        if data.shape not in ((dim,), (dim, dim)):
            raise InvalidState(f"data shape {data.shape} does not match n={self.n}")
        limit = MAX_PURE_QUBITS if data.ndim == 1 else MAX_MIXED_QUBITS
        if self.n > limit:
            raise InvalidState(f"n={self.n} exceeds the dense {self.kind} cap of {limit}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def kind(self) -> str:
        return "pure" if self.data.ndim == 1 else "mixed"

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    @classmethod
    def zero(cls, n: int, mixed: bool = False) -> "QuantumState":
        dim = 2**n
        if mixed:
            rho = np.zeros((dim, dim), dtype=complex)
            rho[0, 0] = 1.0
            return cls(n, rho)
        psi = np.zeros(dim, dtype=complex)
        psi[0] = 1.0
        return cls(n, psi)

    def density_matrix(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return self.data.copy()

    def to_mixed(self) -> "QuantumState":
        return self if not self.is_pure else QuantumState(self.n, self.density_matrix())

    def probabilities(self) -> np.ndarray:
        if self.is_pure:
            p = np.abs(self.data) ** 2
        else:
            p = np.real(np.diagonal(self.data)).copy()
        return np.clip(p, 0.0, None)

    def validate(self, tol: Tolerances = TOL) -> "QuantumState":
        """Check normalisation (and hermiticity/positivity for mixed states)."""
        if self.is_pure:
            norm = np.sum(np.abs(self.data) ** 2)
            if abs(norm - 1.0) > tol.norm:
                raise InvalidState(f"state norm {norm!r} differs from 1")
            return self
        rho = self.data
        if abs(np.trace(rho) - 1.0) > tol.norm:
            raise InvalidState(f"trace {np.trace(rho)!r} differs from 1")
        if np.max(np.abs(rho - rho.conj().T)) > tol.hermitian:
            raise InvalidState("density matrix is not hermitian")
        if np.min(np.linalg.eigvalsh(rho)) < -tol.eigenvalue_floor:
            raise InvalidState("density matrix has a negative eigenvalue")
        return self


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def is_unitary(u: np.ndarray, tol: float = TOL.unitary) -> bool:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) < tol


def _check_targets(targets: Sequence[int], n: int) -> tuple[int, ...]:
    targets = tuple(int(t) for t in targets)
    if len(targets) == 0 or len(set(targets)) != len(targets):
        raise BadTarget(f"targets {targets} must be non-empty and distinct")
    if any(t < 0 or t >= n for t in targets):
        raise BadTarget(f"targets {targets} out of range for n={n}")
    return targets


# ---------------------------------------------------------------------------
# Batched kernels. ``vecs`` has shape (B, 2**n_axes); ``mats`` is either one
# (2**k, 2**k) matrix or a stack (B, 2**k, 2**k) matching the batch.
# ---------------------------------------------------------------------------


def _is_diagonal(mats: np.ndarray) -> bool:
    k = mats.shape[-1]
    off = mats * (1 - np.eye(k))
    return not np.any(off)


def apply_left(vecs: np.ndarray, mats: np.ndarray, axes: Sequence[int], n_axes: int) -> np.ndarray:
    """Apply ``mats`` to the tensor legs ``axes`` of each batch row of ``vecs``."""
    batch = vecs.shape[0]
    k = len(axes)
    mats = np.asarray(mats)
    tensor = vecs.reshape((batch,) + (2,) * n_axes)
    if _is_diagonal(mats):
        diag = np.diagonal(mats, axis1=-2, axis2=-1)
        lead = batch if diag.ndim == 2 else 1
        factor = diag.reshape([lead] + [2] * k + [1] * (n_axes - k))
        factor = np.moveaxis(factor, list(range(1, k + 1)), [1 + a for a in axes])
        return (tensor * factor).reshape(vecs.shape)
    src = [1 + a for a in axes]
    dst = list(range(n_axes + 1 - k, n_axes + 1))
    moved = np.moveaxis(tensor, src, dst)
    moved_shape = moved.shape
    flat = moved.reshape(batch, -1, 2**k)
    if mats.ndim == 2:
        out = flat @ mats.T
    else:
        out = flat @ np.swapaxes(mats, -1, -2)
    out = np.moveaxis(out.reshape(moved_shape), dst, src)
    return out.reshape(vecs.shape)


def evolve_pure(psi: np.ndarray, mats: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    return apply_left(psi, mats, targets, n)


def evolve_mixed(rho: np.ndarray, mats: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """rho -> U rho U^dagger for a batch of (2**n, 2**n) matrices."""
    batch = rho.shape[0]
    flat = rho.reshape(batch, -1)
    out = apply_left(flat, mats, targets, 2 * n)
    out = apply_left(out, np.conj(mats), [n + t for t in targets], 2 * n)
    return out.reshape(rho.shape)


def kraus_mixed(rho: np.ndarray, ops: Sequence[np.ndarray], target: int, n: int) -> np.ndarray:
    """rho -> sum_i A_i rho A_i^dagger on one qubit, batched."""
    ops = [np.asarray(a, dtype=complex) for a in ops]
    batch = rho.shape[0]
    flat = rho.reshape(batch, -1)
    if all(_is_diagonal(a) for a in ops):
        # diagonal channels act as an elementwise mask on the (row, col) bits
        diags = np.array([np.diagonal(a) for a in ops])
        mask = np.einsum("ki,kj->ij", diags, diags.conj())
        tensor = flat.reshape((batch,) + (2,) * (2 * n))
        factor = np.moveaxis(
            mask.reshape([1, 2, 2] + [1] * (2 * n - 2)), [1, 2], [1 + target, 1 + n + target]
        )
        return (tensor * factor).reshape(rho.shape)
    total = np.zeros_like(flat)
    for a in ops:
        part = apply_left(flat, a, [target], 2 * n)
        total += apply_left(part, a.conj(), [n + target], 2 * n)
    return total.reshape(rho.shape)


# ---------------------------------------------------------------------------
# Single-state operations
# ---------------------------------------------------------------------------


def apply_unitary(
    state: QuantumState, u: np.ndarray, targets: Sequence[int], tol: Tolerances = TOL
) -> QuantumState:
    """Apply the unitary ``u`` to the qubits ``targets`` (first target = most significant)."""
    targets = _check_targets(targets, state.n)
    u = np.asarray(u, dtype=complex)
    if u.shape != (2 ** len(targets),) * 2:
        raise NonUnitary(f"matrix shape {u.shape} does not act on {len(targets)} qubit(s)")
    if not is_unitary(u, tol.unitary):
        raise NonUnitary("matrix fails the unitarity check")
    if state.is_pure:
        out = evolve_pure(state.data[None, :], u, targets, state.n)[0]
    else:
        out = evolve_mixed(state.data[None, :, :], u, targets, state.n)[0]
    return QuantumState(state.n, out)


def check_kraus(kraus: Sequence[np.ndarray], tol: float = TOL.kraus) -> list[np.ndarray]:
    ops = [np.asarray(a, dtype=complex) for a in kraus]
    if not ops:
        raise IncompleteKraus("empty Kraus set")
    total = sum(a.conj().T @ a for a in ops)
    if np.max(np.abs(total - np.eye(total.shape[0]))) > tol:
        raise IncompleteKraus("Kraus operators do not satisfy sum A^dagger A = I")
    return ops


def apply_kraus(
    state: QuantumState, kraus: Sequence[np.ndarray], target: int, tol: Tolerances = TOL
) -> QuantumState:
    """Apply a single-qubit channel. Pure inputs are promoted to density matrices."""
    (target,) = _check_targets([target], state.n)
    ops = check_kraus(kraus, tol.kraus)
    if any(a.shape != (2, 2) for a in ops):
        raise IncompleteKraus("only single-qubit Kraus operators are supported")
    rho = state.to_mixed().data
    out = kraus_mixed(rho[None, :, :], ops, target, state.n)[0]
    return QuantumState(state.n, out)


def eigh(m: np.ndarray, tol: float = TOL.hermitian) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a hermitian matrix; eigenvalues ascending, vectors as columns."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotHermitian(f"expected a square matrix, got shape {m.shape}")
    if np.max(np.abs(m - m.conj().T), initial=0.0) > tol:
        raise NotHermitian("matrix is not hermitian")
    return np.linalg.eigh(m)
