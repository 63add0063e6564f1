"""Fisher-information ascent over the preparation and measurement angles.

Gradients with respect to theta and mu are central finite differences; every
shifted circuit of one gradient is simulated in a single batch. The phase
derivative inside the Fisher information itself stays analytic.
"""

from __future__ import annotations

import csv
import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from vqsense import circuits, fisher
from vqsense.circuits import GateKind, SensorCircuit

OBJECTIVES = ("CFI", "QFI")


class LengthMismatch(ValueError):
    pass


def worker_count() -> int:
    """Worker cap taken from VQS_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("VQS_THREADS", "1")))
    except ValueError:
        return 1


def default_phi_eval(n: int) -> float:
    return np.pi / (2 * n)


@dataclass(frozen=True)
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size: int, lr: float = 0.05, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(0, np.zeros(size), np.zeros(size), lr, beta1, beta2, eps)


def adam_step(state: AdamState, params, grad, maximize: bool = False) -> tuple[AdamState, np.ndarray]:
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if not (params.shape == grad.shape == state.m.shape == state.v.shape):
        raise LengthMismatch(
            f"params {params.shape}, grad {grad.shape} and moments {state.m.shape} disagree"
        )
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_params = params + update if maximize else params - update
    return replace(state, step=t, m=m, v=v), new_params


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    cfi: float
    qfi: float
    param_hash: str


@dataclass
class OptimizationTrace:
    records: list[TraceRecord] = field(default_factory=list)
    objective: str = "CFI"
    restart: int = 0

    def append(self, rec: TraceRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(rec)

    @property
    def cfi(self) -> np.ndarray:
        return np.array([r.cfi for r in self.records])

    @property
    def qfi(self) -> np.ndarray:
        return np.array([r.qfi for r in self.records])

    def best_so_far(self) -> np.ndarray:
        values = self.cfi if self.objective == "CFI" else self.qfi
        return np.maximum.accumulate(values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "cfi", "qfi"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.cfi), repr(r.qfi)])


def params_hash(params: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(params, dtype="<f8").tobytes()).hexdigest()[:16]


def _split(circuit: SensorCircuit, x: np.ndarray):
    return x[..., : circuit.n_theta], x[..., circuit.n_theta :]


def _evaluate(circuit, theta, mu, phi, objective, h):
    """Objective value, its FD gradient, and (cfi, qfi) at the centre point."""
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if objective == "CFI":
        x = np.concatenate([theta, mu])
    elif objective == "QFI":
        x = theta.copy()
    else:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    k = x.size
    shifts = np.eye(k) * h
    rows = np.concatenate([x[None, :], x + shifts, x - shifts])
    if objective == "CFI":
        th, mm = _split(circuit, rows)
        values, _ = fisher.fisher_batch(circuit, th, mm, phi, want_qfi=False)
        _, qfi_c = fisher.fisher_batch(circuit, theta[None], mu[None], phi, want_cfi=False)
        cfi_c = values[0]
        qfi_c = qfi_c[0]
    else:
        _, values = fisher.fisher_batch(circuit, rows, mu[None], phi, want_cfi=False)
        cfi_c, _ = fisher.fisher_batch(circuit, theta[None], mu[None], phi, want_qfi=False)
        cfi_c = cfi_c[0]
        qfi_c = values[0]
    grad = (values[1 : k + 1] - values[k + 1 :]) / (2 * h)
    return values[0], grad, float(cfi_c), float(qfi_c)


def grad_objective(
    circuit: SensorCircuit, theta, mu, phi_eval: float, objective: str = "CFI", h: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient of the Fisher information.

    For ``objective="CFI"`` the gradient covers (theta, mu); for ``"QFI"``
    only theta, since the QFI does not depend on the measurement.
    """
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if theta.shape != (circuit.n_theta,) or mu.shape != (circuit.n_mu,):
        raise circuits.BadLength("theta/mu lengths do not match the circuit")
    return _evaluate(circuit, theta, mu, phi_eval, objective, h)[1]


@dataclass(frozen=True)
class OptimizeConfig:
    iterations: int = 1500
    lr: float = 0.05
    objective: str = "CFI"
    phi_eval: Optional[float] = None
    seed: int = 0
    restarts: int = 5
    plateau_window: int = 100
    plateau_tol: float = 1e-5
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")


def _ascend(circuit, theta0, mu0, cfg: OptimizeConfig, phi, restart):
    trace = OptimizationTrace(objective=cfg.objective, restart=restart)
    theta, mu = theta0.copy(), mu0.copy()
    x = np.concatenate([theta, mu]) if cfg.objective == "CFI" else theta.copy()
    adam = AdamState.fresh(x.size, lr=cfg.lr)
    best = (-np.inf, theta.copy(), mu.copy())
    history = []
    for it in range(cfg.iterations):
        value, grad, c, q = _evaluate(circuit, theta, mu, phi, cfg.objective, cfg.fd_step)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite objective at iteration {it}")
        trace.append(TraceRecord(it, c, q, params_hash(np.concatenate([theta, mu]))))
        if value > best[0]:
            best = (value, theta.copy(), mu.copy())
        history.append(best[0])
        w = cfg.plateau_window
        if w and it >= w and history[-1] - history[-1 - w] <= cfg.plateau_tol * abs(history[-1 - w]):
            break
        if it == cfg.iterations - 1:
            break
        adam, x = adam_step(adam, x, grad, maximize=True)
        if cfg.objective == "CFI":
            theta, mu = _split(circuit, x)
            theta, mu = theta.copy(), mu.copy()
        else:
            theta = x.copy()
    return best, trace


def optimize_sensor(
    circuit: SensorCircuit,
    init_theta=None,
    init_mu=None,
    config: OptimizeConfig = OptimizeConfig(),
) -> tuple[np.ndarray, np.ndarray, OptimizationTrace]:
    """Multi-restart Fisher-information ascent; returns the best-seen parameters.

    The first restart starts from ``init_theta``/``init_mu`` when given; the
    others draw Uniform(-pi, pi) angles from per-restart child seeds. The
    returned trace belongs to the winning restart.
    """
    phi = default_phi_eval(circuit.n) if config.phi_eval is None else float(config.phi_eval)
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    starts = []
    for r, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        theta = rng.uniform(-np.pi, np.pi, circuit.n_theta)
        mu = rng.uniform(-np.pi, np.pi, circuit.n_mu)
        if r == 0 and init_theta is not None:
            theta = np.asarray(init_theta, dtype=float).copy()
        if r == 0 and init_mu is not None:
            mu = np.asarray(init_mu, dtype=float).copy()
        if theta.shape != (circuit.n_theta,) or mu.shape != (circuit.n_mu,):
            raise circuits.BadLength("initial theta/mu lengths do not match the circuit")
        starts.append((theta, mu, r))

    def run(args):
        theta, mu, r = args
        return _ascend(circuit, theta, mu, config, phi, r)

    workers = min(worker_count(), config.restarts)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]
    (value, theta, mu), trace = max(results, key=lambda r: r[0][0])
    return theta, mu, trace


def align_fringe(
    circuit: SensorCircuit, theta, mu, phi_min: float, phi_max: float, resolution: int = 720
) -> np.ndarray:
    """Shift the leading measurement RZ angles so the fringe spans [phi_min, phi_max].

    Adding ``delta`` to the first RZ of every qubit's measurement sequence is
    equivalent to shifting phi by ``delta``. The shift chosen maximises the
    total-variation distance between the outcome distributions at the two
    ends of the range, which for a sinusoidal fringe of half-period
    ``phi_max - phi_min`` puts the two ends on opposite extrema. Ties go to
    the smallest ``|delta|``.
    """
    mu = np.asarray(mu, dtype=float).copy()
    slots = []
    for q in range(circuit.n):
        first = next((g for g in circuit.meas if q in g.targets), None)
        if first is None or first.kind != GateKind.RZ or first.param_slot is None:
            raise ValueError("fringe alignment needs a leading parameterised RZ on every qubit")
        slots.append(first.param_slot)
    state = circuits.prepare_batch(circuit, theta)
    deltas = np.linspace(-np.pi, np.pi, resolution, endpoint=False)
    lo = np.concatenate([circuits.interact_batch(state, circuit.n, phi_min + d) for d in deltas])
    hi = np.concatenate([circuits.interact_batch(state, circuit.n, phi_max + d) for d in deltas])
    p_lo = circuits.diag_probs(circuits.measure_batch(circuit, lo, mu))
    p_hi = circuits.diag_probs(circuits.measure_batch(circuit, hi, mu))
    tv = 0.5 * np.sum(np.abs(p_lo - p_hi), axis=1)
    tv = np.round(tv, 9)
    candidates = np.flatnonzero(tv == tv.max())
    delta = deltas[candidates[np.argmin(np.abs(deltas[candidates]))]]
    mu[slots] += delta
    return mu
