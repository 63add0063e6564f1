"""Classical and quantum Fisher information with respect to the imprinted phase.

The phase enters through K(phi) = exp(-i phi G) with G = (1/2) sum_j Z_j, so the
state derivative is available in closed form and no differencing in phi is
needed anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vqsense import circuits
from vqsense.circuits import SensorCircuit
from vqsense.qcore import TOL, QuantumState


@dataclass(frozen=True)
class FisherResult:
    cfi: float
    qfi: float
    phi: float


@dataclass(frozen=True, eq=False)
class StateDerivative:
    """The phase-evolved state together with its phi-derivative (vector or matrix)."""

    state: QuantumState
    derivative: np.ndarray


def _derivative_batch(evolved: np.ndarray, n: int) -> np.ndarray:
    g = circuits.generator_diagonal(n)
    if evolved.ndim == 2:
        return -1j * evolved * g
    # -i [G, rho]
    return -1j * (g[:, None] * evolved - evolved * g[None, :])


def dstate_dphi(state_before_interaction: QuantumState, phi: float) -> StateDerivative:
    """Apply K(phi) and return the evolved state with its analytic derivative."""
    n = state_before_interaction.n
    evolved = circuits.interact_batch(state_before_interaction.data[None], n, phi)
    deriv = _derivative_batch(evolved, n)[0]
    return StateDerivative(QuantumState(n, evolved[0]), deriv)


def cfi(probs, dprobs, floor: float = TOL.prob_floor) -> float:
    """Sum of (dp)^2 / p over outcomes with p above ``floor``."""
    return float(cfi_batch(np.asarray(probs)[None], np.asarray(dprobs)[None], floor)[0])


def cfi_batch(probs: np.ndarray, dprobs: np.ndarray, floor: float = TOL.prob_floor) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    dprobs = np.asarray(dprobs, dtype=float)
    keep = probs > floor
    safe = np.where(keep, probs, 1.0)
    return np.maximum(np.sum(np.where(keep, dprobs**2 / safe, 0.0), axis=-1), 0.0)


def qfi_pure(psi: QuantumState, dpsi) -> float:
    """4 (<dpsi|dpsi> - |<dpsi|psi>|^2) for a normalised pure state."""
    d = dpsi.derivative if isinstance(dpsi, StateDerivative) else np.asarray(dpsi)
    return float(qfi_pure_batch(psi.data[None], d[None])[0])


def qfi_pure_batch(psi: np.ndarray, dpsi: np.ndarray) -> np.ndarray:
    dd = np.sum(np.abs(dpsi) ** 2, axis=-1)
    overlap = np.sum(dpsi.conj() * psi, axis=-1)
    return np.maximum(4 * np.real(dd - np.abs(overlap) ** 2), 0.0)


def qfi_mixed(rho: QuantumState, drho, cutoff: float = TOL.qfi_eigen_cutoff) -> float:
    """Sum over eigenpairs of 2 |<l_i|drho|l_j>|^2 / (l_i + l_j), skipping l_i + l_j <= cutoff."""
    d = drho.derivative if isinstance(drho, StateDerivative) else np.asarray(drho)
    return float(qfi_mixed_batch(rho.density_matrix()[None], d[None], cutoff)[0])


def qfi_mixed_batch(rho: np.ndarray, drho: np.ndarray, cutoff: float = TOL.qfi_eigen_cutoff) -> np.ndarray:
    vals, vecs = np.linalg.eigh(rho)
    vals = np.clip(vals, 0.0, None)
    elems = np.swapaxes(vecs.conj(), -1, -2) @ drho @ vecs
    denom = vals[:, :, None] + vals[:, None, :]
    keep = denom > cutoff
    terms = np.where(keep, 2 * np.abs(elems) ** 2 / np.where(keep, denom, 1.0), 0.0)
    return np.maximum(np.sum(terms, axis=(-1, -2)), 0.0)


def fisher_batch(
    circuit: SensorCircuit,
    thetas: np.ndarray,
    mus: np.ndarray,
    phi: float,
    want_qfi: bool = True,
    want_cfi: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """CFI and QFI for stacks of (theta, mu); rows are paired one-to-one.

    Either output is returned as NaNs when not requested.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    if mus.shape[0] == 1 and thetas.shape[0] > 1:
        mus = np.broadcast_to(mus, (thetas.shape[0], mus.shape[1]))
    batch = thetas.shape[0]
    nan = np.full(batch, np.nan)
    states = circuits.prepare_batch(circuit, thetas)
    evolved = circuits.interact_batch(states, circuit.n, phi)
    deriv = _derivative_batch(evolved, circuit.n)
    qfi = nan
    if want_qfi:
        if evolved.ndim == 2:
            qfi = qfi_pure_batch(evolved, deriv)
        else:
            qfi = qfi_mixed_batch(evolved, deriv)
    cfi_vals = nan
    if want_cfi:
        both = np.concatenate([evolved, deriv])
        rotated = circuits.measure_batch(circuit, both, np.concatenate([mus, mus]))
        a, da = rotated[:batch], rotated[batch:]
        if a.ndim == 2:
            probs = np.abs(a) ** 2
            dprobs = 2 * np.real(a.conj() * da)
        else:
            probs = np.real(np.diagonal(a, axis1=1, axis2=2))
            dprobs = np.real(np.diagonal(da, axis1=1, axis2=2))
        cfi_vals = cfi_batch(probs, dprobs)
    return cfi_vals, qfi


def fisher_info(circuit: SensorCircuit, theta, mu, phi: float) -> FisherResult:
    c, q = fisher_batch(circuit, np.asarray(theta)[None], np.asarray(mu)[None], phi)
    return FisherResult(float(c[0]), float(q[0]), float(phi))


def prob_derivatives(circuit: SensorCircuit, theta, mu, phi: float) -> tuple[np.ndarray, np.ndarray]:
    """Outcome probabilities p(s|phi) and their analytic phi-derivatives."""
    state = circuits.prepare(circuit, theta)
    sd = dstate_dphi(state, phi)
    mu = np.asarray(mu, dtype=float)[None]
    both = np.stack([sd.state.data, sd.derivative])
    rotated = circuits.measure_batch(circuit, both, np.concatenate([mu, mu]))
    if rotated.ndim == 2:
        return np.abs(rotated[0]) ** 2, 2 * np.real(rotated[0].conj() * rotated[1])
    return (
        np.real(np.diagonal(rotated[0])).copy(),
        np.real(np.diagonal(rotated[1])).copy(),
    )
