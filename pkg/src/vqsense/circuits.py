"""Gate library, probe-state ansatze, the phase-imprinting layer and the measurement layer.

A :class:`SensorCircuit` is an immutable blueprint. Gates either read their
angle from a parameter vector (``param_slot`` into theta or mu) or carry a
fixed ``angle``. Evaluation is batched: ``prepare_batch`` simulates a stack of
theta vectors at once, which is what the finite-difference optimizer relies on.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from vqsense import qcore
from vqsense.qcore import QuantumState


class CircuitError(ValueError):
    pass


class UnknownKind(CircuitError):
    pass


class BadSize(CircuitError):
    pass


class BadLength(CircuitError):
    pass


class GateKind(str, enum.Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    H = "H"
    CNOT = "CNOT"
    CPHASE = "CPHASE"
    MS = "MS"


class AnsatzKind(str, enum.Enum):
    HEA = "HEA"
    TIA = "TIA"
    GRAPH = "GRAPH"
    GHZ = "GHZ"


PARAMETERIZED = {GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.CPHASE, GateKind.MS}
TWO_QUBIT = {GateKind.CNOT, GateKind.CPHASE, GateKind.MS}

_SQRT_HALF = 1 / np.sqrt(2)
_H = np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT_HALF
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_XX = np.kron(np.array([[0, 1], [1, 0]]), np.array([[0, 1], [1, 0]])).astype(complex)


@dataclass(frozen=True)
class GateSpec:
    kind: GateKind
    targets: tuple[int, ...]
    param_slot: Optional[int] = None
    angle: Optional[float] = None

    def __post_init__(self):
        kind = GateKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        arity = 2 if kind in TWO_QUBIT else 1
        if len(self.targets) != arity or len(set(self.targets)) != arity:
            raise CircuitError(f"{kind.value} needs {arity} distinct target(s), got {self.targets}")
        if kind in PARAMETERIZED:
            if (self.param_slot is None) == (self.angle is None):
                raise CircuitError(f"{kind.value} needs exactly one of param_slot or a fixed angle")
        elif self.param_slot is not None or self.angle is not None:
            raise CircuitError(f"{kind.value} takes no angle")

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "targets": list(self.targets)}
        if self.param_slot is not None:
            out["param_slot"] = self.param_slot
        if self.angle is not None:
            out["angle"] = float(self.angle)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GateSpec":
        return cls(GateKind(d["kind"]), tuple(d["targets"]), d.get("param_slot"), d.get("angle"))


@dataclass(frozen=True)
class DephasingSpec:
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise CircuitError(f"gamma must lie in [0, 1], got {self.gamma}")

    def kraus(self) -> list[np.ndarray]:
        g = self.gamma
        return [
            np.array([[1, 0], [0, np.sqrt(1 - g)]], dtype=complex),
            np.array([[0, 0], [0, np.sqrt(g)]], dtype=complex),
        ]


@dataclass(frozen=True)
class SensorCircuit:
    kind: AnsatzKind
    n: int
    depth: int
    prep: tuple[GateSpec, ...]
    meas: tuple[GateSpec, ...]
    n_theta: int
    n_mu: int
    noise: Optional[DephasingSpec] = None
    _digest: str = field(default="", compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", AnsatzKind(self.kind))
        for g in self.prep + self.meas:
            if any(t >= self.n for t in g.targets):
                raise CircuitError(f"gate {g} addresses a qubit outside n={self.n}")
        slots_theta = sorted(g.param_slot for g in self.prep if g.param_slot is not None)
        slots_mu = sorted(g.param_slot for g in self.meas if g.param_slot is not None)
        if slots_theta != list(range(self.n_theta)) or slots_mu != list(range(self.n_mu)):
            raise CircuitError("parameter slots must cover theta and mu exactly once each")
        limit = qcore.MAX_MIXED_QUBITS if self.noisy else qcore.MAX_PURE_QUBITS
        if self.n > limit:
            raise BadSize(f"n={self.n} exceeds the dense simulation cap of {limit}")
        object.__setattr__(self, "_digest", _digest(self.to_dict()))

    @property
    def noisy(self) -> bool:
        return self.noise is not None and self.noise.gamma > 0

    @property
    def n_params(self) -> int:
        return self.n_theta + self.n_mu

    def with_noise(self, gamma: float) -> "SensorCircuit":
        noise = DephasingSpec(gamma) if gamma > 0 else None
        return SensorCircuit(
            self.kind, self.n, self.depth, self.prep, self.meas, self.n_theta, self.n_mu, noise
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n": self.n,
            "d": self.depth,
            "gamma": 0.0 if self.noise is None else float(self.noise.gamma),
            "n_theta": self.n_theta,
            "n_mu": self.n_mu,
            "prep": [g.to_dict() for g in self.prep],
            "meas": [g.to_dict() for g in self.meas],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorCircuit":
        gamma = float(d.get("gamma", 0.0))
        return cls(
            AnsatzKind(d["kind"]),
            int(d["n"]),
            int(d["d"]),
            tuple(GateSpec.from_dict(g) for g in d["prep"]),
            tuple(GateSpec.from_dict(g) for g in d["meas"]),
            int(d["n_theta"]),
            int(d["n_mu"]),
            DephasingSpec(gamma) if gamma > 0 else None,
        )

    def hash(self) -> str:
        return self._digest


def _digest(blueprint: dict) -> str:
    text = json.dumps(blueprint, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Gate matrices
# ---------------------------------------------------------------------------


def _rotation_stack(kind: GateKind, angles: np.ndarray) -> np.ndarray:
    """Stack of gate matrices, shape (B, d, d), for an array of angles."""
    a = np.asarray(angles, dtype=float)
    c, s = np.cos(a / 2), np.sin(a / 2)
    b = a.shape[0]
    if kind == GateKind.RX:
        out = np.empty((b, 2, 2), dtype=complex)
        out[:, 0, 0] = c
        out[:, 1, 1] = c
        out[:, 0, 1] = -1j * s
        out[:, 1, 0] = -1j * s
        return out
    if kind == GateKind.RY:
        out = np.empty((b, 2, 2), dtype=complex)
        out[:, 0, 0] = c
        out[:, 1, 1] = c
        out[:, 0, 1] = -s
        out[:, 1, 0] = s
        return out
    if kind == GateKind.RZ:
        out = np.zeros((b, 2, 2), dtype=complex)
        out[:, 0, 0] = np.exp(-0.5j * a)
        out[:, 1, 1] = np.exp(0.5j * a)
        return out
    if kind == GateKind.CPHASE:
        out = np.zeros((b, 4, 4), dtype=complex)
        out[:, 0, 0] = out[:, 1, 1] = out[:, 2, 2] = 1
        out[:, 3, 3] = np.exp(1j * a)
        return out
    if kind == GateKind.MS:
        # exp(-i a XX / 2) = cos(a/2) I - i sin(a/2) XX since XX squares to I
        return c[:, None, None] * np.eye(4) - 1j * s[:, None, None] * _XX
    if kind == GateKind.H:
        return np.broadcast_to(_H, (b, 2, 2))
    if kind == GateKind.CNOT:
        return np.broadcast_to(_CNOT, (b, 4, 4))
    raise UnknownKind(f"unknown gate kind {kind!r}")


def gate_matrix(g: GateSpec | GateKind | str, value: float = 0.0) -> np.ndarray:
    """Unitary of a gate at angle ``value`` (ignored for H and CNOT).

    A :class:`GateSpec` carrying a fixed angle uses that angle instead.
    """
    if isinstance(g, GateSpec):
        kind = g.kind
        if g.angle is not None:
            value = g.angle
    else:
        try:
            kind = GateKind(g)
        except ValueError:
            raise UnknownKind(f"unknown gate kind {g!r}") from None
    if not np.isfinite(value):
        raise CircuitError("gate angle must be finite")
    return _rotation_stack(kind, np.array([value]))[0].copy()


# ---------------------------------------------------------------------------
# Ansatz construction
# ---------------------------------------------------------------------------


class _Builder:
    def __init__(self):
        self.gates: list[GateSpec] = []
        self.slots = 0

    def param(self, kind: GateKind, *targets: int):
        self.gates.append(GateSpec(kind, targets, param_slot=self.slots))
        self.slots += 1

    def fixed(self, kind: GateKind, *targets: int, angle: Optional[float] = None):
        self.gates.append(GateSpec(kind, targets, angle=angle))


def build_ansatz(kind: AnsatzKind | str, n: int, d: int = 1, gamma: float = 0.0) -> SensorCircuit:
    """Build an HEA, TIA or GRAPH sensor blueprint.

    HEA: ``d`` layers of (RZ, RX) per qubit followed by CPHASE(pi) on each
    nearest-neighbour pair, a final (RZ, RX) layer, and an (RZ, RX) measurement
    layer; 2nd + 4n parameters. TIA: ``d`` layers of (RX, RY) per qubit plus a
    variational MS gate per adjacent pair, and an (RZ, RX, RY) measurement
    layer; (3n-1)d + 3n parameters. GRAPH: H per qubit, CZ on every edge of
    the complete bipartite graph K_{n/2,n/2}, (RX, RY) per qubit, and an
    (RZ, RX) measurement layer; 4n parameters.
    """
    try:
        kind = AnsatzKind(kind)
    except ValueError:
        raise UnknownKind(f"unknown ansatz {kind!r}") from None
    if n < 2:
        raise BadSize("ansatz needs at least two qubits")
    if kind != AnsatzKind.GRAPH and d < 1:
        raise BadSize("depth must be at least 1")
    prep, meas = _Builder(), _Builder()
    if kind == AnsatzKind.HEA:
        for _ in range(d):
            for q in range(n):
                prep.param(GateKind.RZ, q)
                prep.param(GateKind.RX, q)
            for q in range(n - 1):
                prep.fixed(GateKind.CPHASE, q, q + 1, angle=np.pi)
        for q in range(n):
            prep.param(GateKind.RZ, q)
            prep.param(GateKind.RX, q)
        for q in range(n):
            meas.param(GateKind.RZ, q)
            meas.param(GateKind.RX, q)
    elif kind == AnsatzKind.TIA:
        for _ in range(d):
            for q in range(n):
                prep.param(GateKind.RX, q)
                prep.param(GateKind.RY, q)
            for q in range(n - 1):
                prep.param(GateKind.MS, q, q + 1)
        for q in range(n):
            meas.param(GateKind.RZ, q)
            meas.param(GateKind.RX, q)
            meas.param(GateKind.RY, q)
    elif kind == AnsatzKind.GRAPH:
        if n % 2:
            raise BadSize("the bipartite graph ansatz needs an even qubit count")
        d = 1
        half = n // 2
        for q in range(n):
            prep.fixed(GateKind.H, q)
        for a in range(half):
            for b in range(half, n):
                prep.fixed(GateKind.CPHASE, a, b, angle=np.pi)
        for q in range(n):
            prep.param(GateKind.RX, q)
            prep.param(GateKind.RY, q)
        for q in range(n):
            meas.param(GateKind.RZ, q)
            meas.param(GateKind.RX, q)
    else:
        raise UnknownKind("GHZ circuits are built by vqsense.baseline.ghz_circuit")
    noise = DephasingSpec(gamma) if gamma > 0 else None
    return SensorCircuit(kind, n, d, tuple(prep.gates), tuple(meas.gates), prep.slots, meas.slots, noise)


def expected_param_count(kind: AnsatzKind | str, n: int, d: int) -> int:
    kind = AnsatzKind(kind)
    if kind == AnsatzKind.HEA:
        return 2 * n * d + 4 * n
    if kind == AnsatzKind.TIA:
        return (3 * n - 1) * d + 3 * n
    if kind == AnsatzKind.GRAPH:
        return 4 * n
    return 0


# ---------------------------------------------------------------------------
# Batched evaluation
# ---------------------------------------------------------------------------


def _as_batch(params: np.ndarray, width: int, name: str) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.ndim == 1:
        params = params[None, :]
    if params.ndim != 2 or params.shape[1] != width:
        raise BadLength(f"{name} must have length {width}, got shape {params.shape}")
    return params


_FUSE_MAX_DIM = 64


def _gate_mats(g: GateSpec, params: np.ndarray) -> np.ndarray:
    if g.param_slot is not None:
        return _rotation_stack(g.kind, params[:, g.param_slot])
    return _rotation_stack(g.kind, np.array([0.0 if g.angle is None else g.angle]))[0]


def _apply(data, mats, targets, n, mixed):
    if mixed:
        return qcore.evolve_mixed(data, mats, targets, n)
    return qcore.evolve_pure(data, mats, targets, n)


def _flush_local(data, pending, n, mixed):
    """Apply accumulated per-qubit 2x2 products, as one register unitary when small."""
    if not pending:
        return data
    if 2**n <= _FUSE_MAX_DIM and len(pending) > 1:
        batch = data.shape[0]
        eye = np.eye(2, dtype=complex)
        full = None
        for q in range(n):
            m = pending.get(q, eye)
            m = np.broadcast_to(m, (batch, 2, 2)) if m.ndim == 2 else m
            full = m if full is None else np.einsum("bij,bkl->bikjl", full, m).reshape(
                batch, full.shape[1] * 2, full.shape[2] * 2
            )
        if mixed:
            return full @ data @ np.swapaxes(full.conj(), -1, -2)
        return np.einsum("bij,bj->bi", full, data)
    for q, m in pending.items():
        data = _apply(data, m, (q,), n, mixed)
    return data


def _run_gates(gates, params, data, n, mixed, noise):
    pending: dict[int, np.ndarray] = {}
    for g in gates:
        mats = _gate_mats(g, params)
        if len(g.targets) == 1:
            q = g.targets[0]
            pending[q] = mats @ pending[q] if q in pending else mats
            continue
        data = _flush_local(data, pending, n, mixed)
        pending = {}
        data = _apply(data, mats, g.targets, n, mixed)
        if mixed and noise is not None:
            ops = noise.kraus()
            for t in g.targets:
                data = qcore.kraus_mixed(data, ops, t, n)
    return _flush_local(data, pending, n, mixed)


def initial_batch(n: int, batch: int, mixed: bool) -> np.ndarray:
    dim = 2**n
    if mixed:
        out = np.zeros((batch, dim, dim), dtype=complex)
        out[:, 0, 0] = 1
    else:
        out = np.zeros((batch, dim), dtype=complex)
        out[:, 0] = 1
    return out


def prepare_batch(circuit: SensorCircuit, thetas: np.ndarray) -> np.ndarray:
    """Probe states for a stack of theta vectors: (B, 2**n) or (B, 2**n, 2**n)."""
    thetas = _as_batch(thetas, circuit.n_theta, "theta")
    mixed = circuit.noisy
    data = initial_batch(circuit.n, thetas.shape[0], mixed)
    return _run_gates(circuit.prep, thetas, data, circuit.n, mixed, circuit.noise if mixed else None)


def generator_diagonal(n: int) -> np.ndarray:
    """Diagonal of G = (1/2) sum_j Z_j, the generator of K(phi) = exp(-i phi G)."""
    idx = np.arange(2**n)
    ones = np.zeros(2**n, dtype=int)
    for q in range(n):
        ones += (idx >> q) & 1
    return (n - 2 * ones) / 2.0


def interact_batch(data: np.ndarray, n: int, phi: float) -> np.ndarray:
    phase = np.exp(-1j * phi * generator_diagonal(n))
    if data.ndim == 2:
        return data * phase
    return data * phase[:, None] * phase.conj()[None, :]


def measure_batch(circuit: SensorCircuit, data: np.ndarray, mus: np.ndarray) -> np.ndarray:
    """Apply the measurement layer (no noise) to a batch of states or derivative operators."""
    mus = _as_batch(mus, circuit.n_mu, "mu")
    if mus.shape[0] == 1 and data.shape[0] > 1:
        mus = np.broadcast_to(mus, (data.shape[0], circuit.n_mu))
    return _run_gates(circuit.meas, mus, data, circuit.n, data.ndim == 3, None)


def diag_probs(data: np.ndarray) -> np.ndarray:
    if data.ndim == 2:
        return np.abs(data) ** 2
    return np.real(np.diagonal(data, axis1=1, axis2=2))


# ---------------------------------------------------------------------------
# Single-state API
# ---------------------------------------------------------------------------


def prepare(circuit: SensorCircuit, theta: Sequence[float]) -> QuantumState:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (circuit.n_theta,):
        raise BadLength(f"theta must have length {circuit.n_theta}, got {theta.shape}")
    return QuantumState(circuit.n, prepare_batch(circuit, theta)[0])


def interact(state: QuantumState, phi: float) -> QuantumState:
    """Rotate every qubit by RZ(phi)."""
    return QuantumState(state.n, interact_batch(state.data[None], state.n, phi)[0])


def measure_probs(state: QuantumState, circuit: SensorCircuit, mu: Sequence[float]) -> np.ndarray:
    """Computational-basis outcome probabilities after the mu-parameterised layer."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (circuit.n_mu,):
        raise BadLength(f"mu must have length {circuit.n_mu}, got {mu.shape}")
    rotated = measure_batch(circuit, state.data[None], mu)
    p = np.clip(diag_probs(rotated)[0], 0.0, None)
    return p / p.sum()


def bitstrings(n: int) -> np.ndarray:
    """All n-bit outcomes in basis order, shape (2**n, n), qubit 0 leftmost."""
    idx = np.arange(2**n)
    return ((idx[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1).astype(np.uint8)
