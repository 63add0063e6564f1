"""Shot sampling and the labelled measurement datasets built from it.

On-disk "VQSD" layout (all integers little-endian)::

    magic      4 bytes   b"VQSD"
    version    u16
    n          u16       qubits per shot
    n_phi      u32
    shots      u32       shots per phase value
    seed       u64
    phis       n_phi x f64
    bits       ceil(n_phi * shots * n / 8) bytes, row-major, MSB-first packing
    prov_len   u32
    provenance prov_len bytes of UTF-8 JSON
    crc32      u32       over every preceding byte
"""

from __future__ import annotations

import csv
import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from vqsense import circuits
from vqsense.circuits import SensorCircuit

MAGIC = b"VQSD"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIQ")


class CorruptFile(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class ProvenanceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PhaseGrid:
    phi_min: float
    phi_max: float
    n_phi: int

    def __post_init__(self):
        if self.n_phi < 2:
            raise ValueError("n_phi must be at least 2")
        if not self.phi_max > self.phi_min:
            raise ValueError("phi_max must exceed phi_min")

    @classmethod
    def default(cls, n: int, n_phi: int = 100) -> "PhaseGrid":
        return cls(0.0, np.pi / n, n_phi)

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.phi_min, self.phi_max, self.n_phi)

    @property
    def spacing(self) -> float:
        return (self.phi_max - self.phi_min) / (self.n_phi - 1)


@dataclass(eq=False)
class MeasurementDataset:
    n: int
    phis: np.ndarray
    shots: np.ndarray
    seed: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.phis = np.asarray(self.phis, dtype=float)
        self.shots = np.asarray(self.shots, dtype=np.uint8)
        if self.shots.ndim != 3 or self.shots.shape[0] != self.phis.size or self.shots.shape[2] != self.n:
            raise ShapeMismatch(
                f"shots shape {self.shots.shape} inconsistent with n={self.n}, n_phi={self.phis.size}"
            )
        if np.any(self.shots > 1):
            raise ShapeMismatch("shots must be binary")
        if self.phis.size > 1 and np.any(np.diff(self.phis) <= 0):
            raise ShapeMismatch("phis must be strictly increasing")

    @property
    def n_phi(self) -> int:
        return self.phis.size

    @property
    def shots_per_phi(self) -> int:
        return self.shots.shape[1]

    def labelled(self) -> tuple[np.ndarray, np.ndarray]:
        """Flatten into (shots, phase-index labels)."""
        x = self.shots.reshape(-1, self.n)
        y = np.repeat(np.arange(self.n_phi), self.shots_per_phi)
        return x, y

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["phi_index", "shot_index", "bitstring"])
            for i in range(self.n_phi):
                for k in range(self.shots_per_phi):
                    w.writerow([i, k, "".join(map(str, self.shots[i, k]))])


def sample_shots(probs, count: int, rng_seed) -> np.ndarray:
    """Draw ``count`` i.i.d. outcomes by inverse CDF; returns a (count, n) bit array."""
    probs = np.asarray(probs, dtype=float)
    n = int(round(np.log2(probs.size)))
    if 2**n != probs.size or np.any(probs < -1e-12) or abs(probs.sum() - 1) > 1e-8:
        raise ValueError("probs must be a distribution over 2**n outcomes")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    cdf = np.cumsum(np.clip(probs, 0.0, None))
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(count), side="right")
    idx = np.minimum(idx, probs.size - 1)
    return circuits.bitstrings(n)[idx]


def outcome_probs(circuit: SensorCircuit, theta, mu, phis: Sequence[float]) -> np.ndarray:
    """p(s | phi) for every phase in ``phis``, shape (len(phis), 2**n)."""
    state = circuits.prepare_batch(circuit, theta)
    evolved = np.concatenate([circuits.interact_batch(state, circuit.n, p) for p in phis])
    probs = np.clip(circuits.diag_probs(circuits.measure_batch(circuit, evolved, mu)), 0.0, None)
    return probs / probs.sum(axis=1, keepdims=True)


def provenance_for(circuit: SensorCircuit, theta, mu, **extra) -> dict:
    prov = {
        "circuit_hash": circuit.hash(),
        "theta": [float(t) for t in np.asarray(theta, dtype=float)],
        "mu": [float(m) for m in np.asarray(mu, dtype=float)],
    }
    prov.update(extra)
    return prov


def generate_dataset(
    circuit: SensorCircuit,
    theta,
    mu,
    grid: PhaseGrid | Sequence[float],
    shots_per_phi: int,
    seed: int,
    **provenance_extra,
) -> MeasurementDataset:
    """Sample ``shots_per_phi`` outcomes at each phase of ``grid``.

    Per-phase generators are spawned from ``seed`` so that each phase value's
    shots depend only on (seed, index).
    """
    phis = grid.values if isinstance(grid, PhaseGrid) else np.asarray(grid, dtype=float)
    if phis.size < 1:
        raise ValueError("need at least one phase value")
    if shots_per_phi < 1:
        raise ValueError("shots_per_phi must be at least 1")
    probs = outcome_probs(circuit, theta, mu, phis)
    children = np.random.SeedSequence(seed).spawn(phis.size)
    shots = np.stack(
        [sample_shots(p, shots_per_phi, np.random.default_rng(c)) for p, c in zip(probs, children)]
    )
    prov = provenance_for(circuit, theta, mu, **provenance_extra)
    return MeasurementDataset(circuit.n, phis, shots, int(seed), prov)


def to_bytes(ds: MeasurementDataset) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, ds.n, ds.n_phi, ds.shots_per_phi, ds.seed)
    phis = ds.phis.astype("<f8").tobytes()
    bits = np.packbits(ds.shots.reshape(-1)).tobytes()
    prov = json.dumps(ds.provenance, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = header + phis + bits + struct.pack("<I", len(prov)) + prov
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(blob: bytes) -> MeasurementDataset:
    if len(blob) < _HEADER.size + 8:
        raise CorruptFile("file too short for a VQSD header")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    magic, version, n, n_phi, shots, seed = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptFile("bad magic bytes")
    if version != VERSION:
        raise CorruptFile(f"unsupported VQSD version {version}")
    if zlib.crc32(body) != crc:
        raise CorruptFile("checksum mismatch (truncated or modified file)")
    pos = _HEADER.size
    phis = np.frombuffer(body, dtype="<f8", count=n_phi, offset=pos).astype(float)
    pos += 8 * n_phi
    nbits = n_phi * shots * n
    nbytes = (nbits + 7) // 8
    if pos + nbytes + 4 > len(body):
        raise CorruptFile("payload shorter than the header declares")
    packed = np.frombuffer(body, dtype=np.uint8, count=nbytes, offset=pos)
    bits = np.unpackbits(packed, count=nbits).reshape(n_phi, shots, n)
    pos += nbytes
    (plen,) = struct.unpack_from("<I", body, pos)
    pos += 4
    if pos + plen != len(body):
        raise ShapeMismatch("provenance block length disagrees with the file size")
    try:
        prov = json.loads(body[pos:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile("unreadable provenance block") from exc
    return MeasurementDataset(n, phis, bits, seed, prov)


def save_dataset(ds: MeasurementDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ds))


def load_dataset(path, circuit: Optional[SensorCircuit] = None) -> MeasurementDataset:
    """Read a VQSD file; warns if ``circuit`` does not match the recorded provenance."""
    with open(path, "rb") as fh:
        ds = from_bytes(fh.read())
    if circuit is not None and ds.provenance.get("circuit_hash") != circuit.hash():
        warnings.warn(
            f"dataset {path} was sampled from a different circuit blueprint",
            ProvenanceWarning,
            stacklevel=2,
        )
    return ds
