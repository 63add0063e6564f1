"""Neural-network phase estimator trained on single shots and used in a Bayesian product.

The network maps an n-bit outcome to a softmax posterior over ``w`` phase
bins. Sequences of shots are combined by summing per-shot log posteriors and
renormalising with log-sum-exp (uniform prior, conditionally independent
shots).

Checkpoint "VQSN" layout (little-endian)::

    magic b"VQSN" | version u16 | n_layers u16 | dims (n_layers+1) x u32
    | per layer: weights (in*out f64, row-major) then biases (out f64)
    | w x f64 phi_bins | seed u64 | cfg_len u32 | cfg JSON | crc32 u32
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from vqsense.sampling import CorruptFile, MeasurementDataset, ShapeMismatch

MAGIC = b"VQSN"
VERSION = 1


class BadInput(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 1024
    lr: float = 3e-3
    l2_coefficient: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.l2_coefficient < 0:
            raise ValueError("l2_coefficient must be non-negative")


@dataclass(eq=False)
class EstimatorNet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    phi_bins: np.ndarray
    seed: int = 0
    train_config: dict = field(default_factory=dict)

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n(self) -> int:
        return self.weights[0].shape[0]

    @property
    def w(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "EstimatorNet":
        return EstimatorNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.phi_bins.copy(),
            self.seed,
            dict(self.train_config),
        )

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def init_net(n: int, phi_bins, hidden: Sequence[int] = (64, 64), seed: int = 0) -> EstimatorNet:
    """He-style uniform weights, zero biases."""
    phi_bins = np.asarray(phi_bins, dtype=float)
    if np.any(np.diff(phi_bins) <= 0):
        raise ValueError("phi_bins must be ascending")
    dims = [n, *hidden, phi_bins.size]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EstimatorNet(weights, biases, phi_bins, seed)


def _check_shots(net: EstimatorNet, shots) -> np.ndarray:
    x = np.asarray(shots)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.n:
        raise BadInput(f"expected shots of width {net.n}, got shape {x.shape}")
    if not np.all((x == 0) | (x == 1)):
        raise BadInput("shot entries must be 0 or 1")
    return x.astype(float)


def _forward(net: EstimatorNet, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return pre, acts


def log_posterior_batch(net: EstimatorNet, shots) -> np.ndarray:
    """log p(phi_j | s) for each row of ``shots``, shape (N, w)."""
    x = _check_shots(net, shots)
    logits = _forward(net, x)[1][-1]
    return logits - logsumexp(logits, axis=1, keepdims=True)


def forward(net: EstimatorNet, shot) -> np.ndarray:
    """Softmax posterior over the phase bins for one shot (or a batch of shots)."""
    out = np.exp(log_posterior_batch(net, shot))
    return out[0] if np.asarray(shot).ndim == 1 else out


def loss_and_grads(net: EstimatorNet, x: np.ndarray, y: np.ndarray, l2: float):
    """Mean cross-entropy plus l2 * sum of squared weights, with backprop gradients.

    Gradients are returned in ``net.params()`` order (W0, b0, W1, b1, ...).
    """
    pre, acts = _forward(net, x)
    logits = acts[-1]
    logp = logits - logsumexp(logits, axis=1, keepdims=True)
    count = x.shape[0]
    loss = -np.mean(logp[np.arange(count), y]) + l2 * sum(np.sum(w * w) for w in net.weights)
    delta = np.exp(logp)
    delta[np.arange(count), y] -= 1.0
    delta /= count
    grads: list[np.ndarray] = []
    for i in range(len(net.weights) - 1, -1, -1):
        gw = acts[i].T @ delta + 2 * l2 * net.weights[i]
        gb = delta.sum(axis=0)
        grads[:0] = [gw, gb]
        if i:
            delta = (delta @ net.weights[i].T) * (pre[i - 1] > 0)
    return float(loss), grads


def train(
    net: EstimatorNet, dataset: MeasurementDataset, cfg: TrainConfig = TrainConfig()
) -> tuple[EstimatorNet, list[float]]:
    """Mini-batch ADAM on the cross-entropy; returns a trained copy and per-epoch mean loss."""
    if dataset.n != net.n:
        raise ShapeMismatch(f"dataset has n={dataset.n}, network expects {net.n}")
    if dataset.n_phi != net.w:
        raise ShapeMismatch(f"dataset has {dataset.n_phi} phases, network has {net.w} bins")
    net = net.copy()
    x, y = dataset.labelled()
    x = x.astype(float)
    rng = np.random.default_rng(cfg.seed)
    params = net.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        total, seen = 0.0, 0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(net, x[idx], y[idx], cfg.l2_coefficient)
            step += 1
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * g * g
                p -= cfg.lr * (mi / (1 - b1**step)) / (np.sqrt(vi / (1 - b2**step)) + eps)
            total += loss * idx.size
            seen += idx.size
        losses.append(total / seen)
    net.train_config = asdict(cfg)
    return net, losses


def bayes_posterior(net: EstimatorNet, sequence, log_space: bool = True) -> np.ndarray:
    """Normalised product of single-shot posteriors over the sequence.

    ``log_space=False`` multiplies raw probabilities, which underflows for long
    sequences; it is kept to reproduce that failure.
    """
    seq = np.asarray(sequence)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise BadInput("sequence must be a non-empty (m, n) array of shots")
    logp = log_posterior_batch(net, seq)
    if log_space:
        total = logp.sum(axis=0)
        return np.exp(total - logsumexp(total))
    prod = np.prod(np.exp(logp), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return prod / prod.sum()


def update_posterior(net: EstimatorNet, log_prior: np.ndarray, shot) -> np.ndarray:
    """One Bayesian step in log space: returns the normalised log posterior."""
    total = np.asarray(log_prior) + log_posterior_batch(net, shot)[0]
    return total - logsumexp(total)


def estimate(posterior, phi_bins) -> float:
    """Argmax bin; ties resolve to the lowest index."""
    return float(np.asarray(phi_bins)[int(np.argmax(posterior))])


@dataclass(frozen=True)
class EstimateRow:
    phi_true: float
    m: int
    bias: float
    variance: float
    sq_error: float
    n_sequences: int


@dataclass
class EstimateReport:
    rows: list[EstimateRow] = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)

    def at(self, m: int) -> list[EstimateRow]:
        return [r for r in self.rows if r.m == m]

    def summary(self, m: int) -> dict:
        """Aggregate over phi_true at fixed m."""
        rows = self.at(m)
        if not rows:
            raise KeyError(f"no rows for m={m}")
        bias = np.array([r.bias for r in rows])
        var = np.array([r.variance for r in rows])
        return {
            "max_abs_bias": float(np.max(np.abs(bias))),
            "mean_abs_bias": float(np.mean(np.abs(bias))),
            "mean_variance": float(np.mean(var)),
            "mean_sq_error": float(np.mean([r.sq_error for r in rows])),
        }

    def to_csv(self, path, extra: Optional[dict] = None) -> None:
        extra = extra or {}
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(extra) + ["phi_true", "m", "bias", "variance", "sq_error", "n_sequences"])
            for r in self.rows:
                w.writerow(
                    [*extra.values(), repr(r.phi_true), r.m, repr(r.bias), repr(r.variance),
                     repr(r.sq_error), r.n_sequences]
                )


def report_from_logliks(
    per_shot: np.ndarray,
    phi_true: Sequence[float],
    phi_bins,
    m_grid: Sequence[int],
    log_space: bool = True,
) -> EstimateReport:
    """Bias/variance from per-shot log posteriors, shape (n_true, shots, w).

    For each m the shots are cut into ``shots // m`` disjoint sequences of
    length m. ``log_space=False`` multiplies raw probabilities instead, which
    underflows for long sequences.
    """
    phi_bins = np.asarray(phi_bins, dtype=float)
    per_shot = np.asarray(per_shot, dtype=float)
    shots = per_shot.shape[1]
    m_grid = sorted(int(m) for m in m_grid)
    if m_grid[0] < 1:
        raise ValueError("sequence lengths must be positive")
    if shots < m_grid[-1]:
        raise ValueError(f"need at least {m_grid[-1]} test shots per phase, have {shots}")
    report = EstimateReport()
    for i, phi in enumerate(phi_true):
        for m in m_grid:
            n_seq = shots // m
            block = per_shot[i, : n_seq * m].reshape(n_seq, m, -1)
            if log_space:
                seqs = block.sum(axis=1)
                post = np.exp(seqs - logsumexp(seqs, axis=1, keepdims=True))
            else:
                with np.errstate(invalid="ignore", divide="ignore"):
                    prod = np.prod(np.exp(block), axis=1)
                    post = prod / prod.sum(axis=1, keepdims=True)
            est = phi_bins[np.argmax(post, axis=1)]
            var = np.sum(post * (phi_bins[None, :] - est[:, None]) ** 2, axis=1)
            report.rows.append(
                EstimateRow(
                    float(phi), m, float(np.mean(est - phi)), float(np.mean(var)),
                    float(np.mean((est - phi) ** 2)), n_seq,
                )
            )
            report.snapshots[(float(phi), m)] = post[0]
    return report


def bias_variance(
    net: EstimatorNet, test_sequences, phi_true, m_grid: Sequence[int], log_space: bool = True
) -> EstimateReport:
    """Estimator bias and mean posterior variance per (phi_true, m).

    ``test_sequences`` is either a :class:`MeasurementDataset` (one row of
    shots per true phase, ``phi_true`` taken from it when None) or an array
    of shots of shape (n_true, shots, n) / (shots, n).
    """
    if isinstance(test_sequences, MeasurementDataset):
        shots = test_sequences.shots
        if phi_true is None:
            phi_true = test_sequences.phis
    else:
        shots = np.asarray(test_sequences)
        if shots.ndim == 2:
            shots = shots[None]
    phi_true = np.atleast_1d(np.asarray(phi_true, dtype=float))
    if shots.shape[0] != phi_true.size:
        raise ShapeMismatch("one row of test shots is needed per true phase")
    per_shot = log_posterior_batch(net, shots.reshape(-1, shots.shape[2])).reshape(
        shots.shape[0], shots.shape[1], -1
    )
    return report_from_logliks(per_shot, phi_true, net.phi_bins, m_grid, log_space)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def to_bytes(net: EstimatorNet) -> bytes:
    dims = net.layer_dims
    out = [MAGIC, struct.pack("<HH", VERSION, len(net.weights))]
    out.append(struct.pack(f"<{len(dims)}I", *dims))
    for w, b in zip(net.weights, net.biases):
        out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    out.append(net.phi_bins.astype("<f8").tobytes())
    cfg = json.dumps(net.train_config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.append(struct.pack("<QI", net.seed, len(cfg)))
    out.append(cfg)
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(blob: bytes) -> EstimatorNet:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CorruptFile("not a VQSN checkpoint")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFile("checksum mismatch (truncated or modified file)")
    version, layers = struct.unpack_from("<HH", body, 4)
    if version != VERSION:
        raise CorruptFile(f"unsupported VQSN version {version}")
    pos = 8
    dims = struct.unpack_from(f"<{layers + 1}I", body, pos)
    pos += 4 * (layers + 1)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(body, "<f8", fan_in * fan_out, pos).reshape(fan_in, fan_out).astype(float)
        pos += 8 * fan_in * fan_out
        b = np.frombuffer(body, "<f8", fan_out, pos).astype(float)
        pos += 8 * fan_out
        weights.append(w)
        biases.append(b)
    bins = np.frombuffer(body, "<f8", dims[-1], pos).astype(float)
    pos += 8 * dims[-1]
    seed, clen = struct.unpack_from("<QI", body, pos)
    pos += 12
    if pos + clen != len(body):
        raise CorruptFile("config block length disagrees with the file size")
    cfg = json.loads(body[pos:].decode("utf-8"))
    return EstimatorNet(weights, biases, bins, seed, cfg)


def save_net(net: EstimatorNet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(net))


def load_net(path) -> EstimatorNet:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
