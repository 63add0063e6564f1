"""GHZ reference protocol: noisy GHZ preparation, X-basis parity readout and grid MLE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from vqsense import circuits, fisher
from vqsense.circuits import AnsatzKind, DephasingSpec, GateKind, GateSpec, SensorCircuit
from vqsense.estimator import EstimateReport, report_from_logliks
from vqsense.qcore import QuantumState


@dataclass(frozen=True)
class GhzProtocol:
    n: int
    gamma: float
    phi_grid: np.ndarray

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("GHZ protocol needs n >= 2")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        grid = np.asarray(self.phi_grid, dtype=float)
        if np.any(np.diff(grid) <= 0):
            raise ValueError("phi_grid must be ascending")
        object.__setattr__(self, "phi_grid", grid)

    def circuit(self) -> SensorCircuit:
        return ghz_circuit(self.n, self.gamma)


def ghz_circuit(n: int, gamma: float = 0.0) -> SensorCircuit:
    """H on qubit 0, CNOT(0, i) for i = 1..n-1, then H on every qubit before readout."""
    if n < 2:
        raise ValueError("GHZ circuit needs n >= 2")
    prep = [GateSpec(GateKind.H, (0,))] + [GateSpec(GateKind.CNOT, (0, i)) for i in range(1, n)]
    meas = [GateSpec(GateKind.H, (q,)) for q in range(n)]
    noise = DephasingSpec(gamma) if gamma > 0 else None
    return SensorCircuit(AnsatzKind.GHZ, n, 1, tuple(prep), tuple(meas), 0, 0, noise)


def ghz_prepare(n: int, gamma: float = 0.0) -> QuantumState:
    return circuits.prepare(ghz_circuit(n, gamma), [])


def parity(bitstring) -> int:
    """0 for even parity, 1 for odd. Accepts a '0101' string or a bit sequence."""
    bits = [int(b) for b in bitstring]
    if any(b not in (0, 1) for b in bits):
        raise ValueError("bits must be 0 or 1")
    return sum(bits) % 2


def parities(shots: np.ndarray) -> np.ndarray:
    return (np.asarray(shots).sum(axis=-1) % 2).astype(np.uint8)


def parity_likelihood(parity_bit: int, n: int, phi) -> np.ndarray | float:
    """Noise-free p(parity | phi): cos^2(n phi / 2) for even, sin^2 for odd."""
    c2 = np.cos(n * np.asarray(phi) / 2) ** 2
    out = c2 if parity_bit == 0 else 1 - c2
    return float(out) if np.ndim(out) == 0 else out


def _parity_logliks(n: int, phi_grid: np.ndarray) -> np.ndarray:
    """Row 0: log p(even | phi_j); row 1: log p(odd | phi_j)."""
    c2 = np.cos(n * phi_grid / 2) ** 2
    with np.errstate(divide="ignore"):
        return np.log(np.stack([c2, 1 - c2]))


def ghz_mle(parity_sequence, n: int, phi_grid) -> tuple[float, np.ndarray]:
    """Grid MAP estimate (uniform prior) under the noise-free parity likelihood."""
    seq = np.asarray(parity_sequence, dtype=int).ravel()
    if seq.size < 1:
        raise ValueError("need at least one parity outcome")
    grid = np.asarray(phi_grid, dtype=float)
    table = _parity_logliks(n, grid)
    odd = int(seq.sum())
    even = seq.size - odd
    with np.errstate(invalid="ignore"):
        logpost = np.where(even > 0, even * table[0], 0.0) + np.where(odd > 0, odd * table[1], 0.0)
    if np.all(np.isneginf(logpost)):
        post = np.full(grid.size, 1.0 / grid.size)
    else:
        post = np.exp(logpost - logsumexp(logpost))
    return float(grid[int(np.argmax(post))]), post


def ghz_parity_probs(n: int, gamma: float, phi: float) -> tuple[float, float]:
    """Exact (p_even, p_odd) of the simulated noisy GHZ probe under X-basis readout."""
    c = ghz_circuit(n, gamma)
    p = circuits.measure_probs(circuits.interact(circuits.prepare(c, []), phi), c, [])
    odd = parities(circuits.bitstrings(n)).astype(bool)
    return float(p[~odd].sum()), float(p[odd].sum())


def ghz_cfi(n: int, gamma: float, phi: float) -> float:
    """CFI of the parity outcome distribution of the noisy GHZ probe."""
    c = ghz_circuit(n, gamma)
    probs, dprobs = fisher.prob_derivatives(c, [], [], phi)
    odd = parities(circuits.bitstrings(n)).astype(bool)
    p = np.array([probs[~odd].sum(), probs[odd].sum()])
    dp = np.array([dprobs[~odd].sum(), dprobs[odd].sum()])
    return fisher.cfi(p, dp)


def ghz_bias_variance(shots, n: int, phi_true, phi_grid, m_grid) -> EstimateReport:
    """MLE bias/variance from X-basis GHZ shots, shaped (n_true, shots, n)."""
    shots = np.asarray(shots)
    if shots.ndim == 2:
        shots = shots[None]
    table = _parity_logliks(n, np.asarray(phi_grid, dtype=float))
    per_shot = table[parities(shots)]
    return report_from_logliks(per_shot, np.atleast_1d(phi_true), phi_grid, m_grid)
