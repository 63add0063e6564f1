"""Staged pipeline: optimize -> sample -> train -> benchmark -> compare-ghz, plus a text summary.

Every stage reads its inputs from and writes its outputs to ``cfg.out_dir``.
Artifacts carry the config hash; downstream stages refuse inputs written
under a different hash unless ``force`` is set.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from vqsense import baseline, estimator, fisher, sampling
from vqsense.circuits import SensorCircuit, build_ansatz
from vqsense.config import RunConfig, derive_seed
from vqsense.optimize import OptimizeConfig, align_fringe, default_phi_eval, optimize_sensor

DEVICE = "device.json"
TRACE = "trace.csv"
TRAIN_SET = "train.vqsd"
TEST_SET = "test.vqsd"
NET = "net.vqsn"
LOSS = "loss.csv"
BENCHMARK = "benchmark.csv"
COMPARE = "compare.csv"

STAGES = ("optimize", "sample", "train", "benchmark", "compare-ghz")


class MissingArtifact(FileNotFoundError):
    pass


class HashMismatch(MissingArtifact):
    pass


class NumericalFailure(ArithmeticError):
    pass


@dataclass(frozen=True)
class Device:
    circuit: SensorCircuit
    theta: np.ndarray
    mu: np.ndarray
    phi_eval: float
    cfi: float
    qfi: float
    config_hash: str


def _path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.out_dir, name)


def _require(cfg: RunConfig, name: str) -> str:
    path = _path(cfg, name)
    if not os.path.isfile(path):
        raise MissingArtifact(f"{path} not found; run the stage that produces it first")
    return path


def _check_hash(cfg: RunConfig, found: Optional[str], what: str, force: bool) -> None:
    if found != cfg.hash() and not force:
        raise HashMismatch(
            f"{what} was written under config hash {found}, current config is {cfg.hash()} "
            "(pass --force to accept)"
        )


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _finite(*values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise NumericalFailure("non-finite value produced")


def stage_seed(cfg: RunConfig, stage: str, override: Optional[int] = None) -> int:
    return int(override) if override is not None else derive_seed(cfg.seed, stage)


def phase_grid(cfg: RunConfig) -> sampling.PhaseGrid:
    return sampling.PhaseGrid(cfg.grid.phi_min, cfg.phi_max, cfg.grid.n_phi)


def test_phases(cfg: RunConfig) -> np.ndarray:
    """True test phases: grid points nearest the configured fractions of the range."""
    values = phase_grid(cfg).values
    idx = sorted({int(round(f * (values.size - 1))) for f in cfg.sampling.test_phi_fractions})
    return values[idx]


def base_circuit(cfg: RunConfig, gamma: Optional[float] = None) -> SensorCircuit:
    return build_ansatz(cfg.ansatz, cfg.n, cfg.d, cfg.gamma if gamma is None else gamma)


def optimizer_config(cfg: RunConfig, seed: int, iterations=None, restarts=None) -> OptimizeConfig:
    o = cfg.optimizer
    return OptimizeConfig(
        iterations=iterations or o.iterations,
        lr=o.lr,
        objective=cfg.objective,
        phi_eval=o.phi_eval,
        seed=seed,
        restarts=restarts or o.restarts,
        plateau_window=o.plateau_window,
        plateau_tol=o.plateau_tol,
        fd_step=o.fd_step,
    )


def _tune(cfg, circuit, seed, init=None, iterations=None, restarts=None):
    """Optimise, then align the fringe to the phase grid; returns (theta, mu, trace, info)."""
    ocfg = optimizer_config(cfg, seed, iterations, restarts)
    init_theta, init_mu = init if init is not None else (None, None)
    theta, mu, trace = optimize_sensor(circuit, init_theta, init_mu, ocfg)
    mu = align_fringe(circuit, theta, mu, cfg.grid.phi_min, cfg.phi_max)
    phi = default_phi_eval(circuit.n) if ocfg.phi_eval is None else ocfg.phi_eval
    info = fisher.fisher_info(circuit, theta, mu, phi)
    _finite(theta, mu, info.cfi, info.qfi)
    return theta, mu, trace, info


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def run_optimize(cfg: RunConfig, seed_override: Optional[int] = None) -> Device:
    seed = stage_seed(cfg, "optimize", seed_override)
    circuit = base_circuit(cfg)
    theta, mu, trace, info = _tune(cfg, circuit, seed)
    os.makedirs(cfg.out_dir, exist_ok=True)
    doc = {
        "config_hash": cfg.hash(),
        "stage_seed": seed,
        "circuit": circuit.to_dict(),
        "circuit_hash": circuit.hash(),
        "theta": [float(x) for x in theta],
        "mu": [float(x) for x in mu],
        "phi_eval": info.phi,
        "cfi": info.cfi,
        "qfi": info.qfi,
        "best_trace_cfi": float(trace.cfi.max()),
        "best_trace_qfi": float(trace.qfi.max()),
    }
    _write_text(_path(cfg, DEVICE), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    trace.to_csv(_path(cfg, TRACE))
    return Device(circuit, theta, mu, info.phi, info.cfi, info.qfi, cfg.hash())


def load_device(cfg: RunConfig, force: bool = False) -> Device:
    with open(_require(cfg, DEVICE), encoding="utf-8") as fh:
        doc = json.load(fh)
    _check_hash(cfg, doc.get("config_hash"), DEVICE, force)
    circuit = SensorCircuit.from_dict(doc["circuit"])
    return Device(
        circuit, np.array(doc["theta"]), np.array(doc["mu"]), doc["phi_eval"], doc["cfi"], doc["qfi"],
        doc["config_hash"],
    )


def run_sample(cfg: RunConfig, seed_override: Optional[int] = None, force: bool = False):
    dev = load_device(cfg, force)
    seed = stage_seed(cfg, "sample", seed_override)
    prov = {"config_hash": cfg.hash(), "stage_seed": seed}
    train_set = sampling.generate_dataset(
        dev.circuit, dev.theta, dev.mu, phase_grid(cfg), cfg.sampling.shots_per_phi,
        derive_seed(seed, "train"), role="train", **prov,
    )
    test_set = sampling.generate_dataset(
        dev.circuit, dev.theta, dev.mu, test_phases(cfg), cfg.sampling.test_shots,
        derive_seed(seed, "test"), role="test", **prov,
    )
    sampling.save_dataset(train_set, _path(cfg, TRAIN_SET))
    sampling.save_dataset(test_set, _path(cfg, TEST_SET))
    return train_set, test_set


def _load_set(cfg: RunConfig, name: str, force: bool) -> sampling.MeasurementDataset:
    ds = sampling.load_dataset(_require(cfg, name))
    _check_hash(cfg, ds.provenance.get("config_hash"), name, force)
    return ds


def train_config(cfg: RunConfig, seed: int) -> estimator.TrainConfig:
    e = cfg.estimator
    return estimator.TrainConfig(e.epochs, e.batch_size, e.lr, e.l2_coefficient, seed)


def fit_estimator(cfg: RunConfig, dataset: sampling.MeasurementDataset, seed: int):
    net = estimator.init_net(dataset.n, dataset.phis, cfg.estimator.hidden, derive_seed(seed, "init"))
    net, losses = estimator.train(net, dataset, train_config(cfg, derive_seed(seed, "batches")))
    _finite(losses, *net.params())
    net.train_config["config_hash"] = cfg.hash()
    return net, losses


def run_train(cfg: RunConfig, seed_override: Optional[int] = None, force: bool = False):
    dataset = _load_set(cfg, TRAIN_SET, force)
    seed = stage_seed(cfg, "train", seed_override)
    net, losses = fit_estimator(cfg, dataset, seed)
    estimator.save_net(net, _path(cfg, NET))
    with open(_path(cfg, LOSS), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(losses):
            w.writerow([i, repr(float(loss))])
    return net, losses


def run_benchmark(cfg: RunConfig, force: bool = False) -> estimator.EstimateReport:
    force = force or cfg.benchmark.force
    net = estimator.load_net(_require(cfg, NET))
    _check_hash(cfg, net.train_config.get("config_hash"), NET, force)
    test_set = _load_set(cfg, TEST_SET, force)
    report = estimator.bias_variance(
        net, test_set, None, cfg.benchmark.m_grid, log_space=cfg.estimator.log_space
    )
    report.to_csv(_path(cfg, BENCHMARK), extra={"config_hash": cfg.hash()})
    return report


COMPARE_HEADER = [
    "config_hash", "gamma", "protocol", "cfi", "phi_true", "m", "bias", "variance", "sq_error",
    "n_sequences",
]


def run_compare(cfg: RunConfig, seed_override: Optional[int] = None, force: bool = False) -> list[dict]:
    """GHZ versus VQS across the dephasing sweep on shared test phases and seeds.

    For each gamma the VQS device is re-optimised under noise (warm-started
    from the previous gamma), re-sampled and its estimator retrained.
    """
    dev = load_device(cfg, force)
    seed = stage_seed(cfg, "compare-ghz", seed_override)
    phis = test_phases(cfg)
    grid = phase_grid(cfg)
    m_grid = cfg.benchmark.m_grid
    rows: list[dict] = []
    init = (dev.theta, dev.mu)
    for gamma in cfg.compare.gammas:
        gamma = float(gamma)
        label = f"gamma={gamma!r}"
        test_seed = derive_seed(seed, label + ":test")
        noisy = base_circuit(cfg, gamma)
        theta, mu, _, info = _tune(
            cfg, noisy, derive_seed(seed, label + ":optimize"), init,
            cfg.compare.iterations, cfg.compare.restarts,
        )
        init = (theta, mu)
        train_set = sampling.generate_dataset(
            noisy, theta, mu, grid, cfg.sampling.shots_per_phi, derive_seed(seed, label + ":train")
        )
        test_set = sampling.generate_dataset(noisy, theta, mu, phis, cfg.sampling.test_shots, test_seed)
        net, _ = fit_estimator(cfg, train_set, derive_seed(seed, label + ":fit"))
        vqs = estimator.bias_variance(net, test_set, None, m_grid, log_space=cfg.estimator.log_space)

        ghz = baseline.ghz_circuit(cfg.n, gamma)
        ghz_set = sampling.generate_dataset(ghz, [], [], phis, cfg.sampling.test_shots, test_seed)
        ghz_report = baseline.ghz_bias_variance(ghz_set.shots, cfg.n, phis, grid.values, m_grid)
        ghz_cfi = baseline.ghz_cfi(cfg.n, gamma, info.phi)

        for protocol, report, cfi_value in (("GHZ", ghz_report, ghz_cfi), ("VQS", vqs, info.cfi)):
            for r in report.rows:
                rows.append({
                    "config_hash": cfg.hash(), "gamma": gamma, "protocol": protocol,
                    "cfi": float(cfi_value), "phi_true": r.phi_true, "m": r.m, "bias": r.bias,
                    "variance": r.variance, "sq_error": r.sq_error, "n_sequences": r.n_sequences,
                })
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(_path(cfg, COMPARE), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_HEADER)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (row[k] for k in COMPARE_HEADER)])
    return rows


def run_stage(stage: str, cfg: RunConfig, seed_override: Optional[int] = None, force: bool = False):
    if stage == "optimize":
        return run_optimize(cfg, seed_override)
    if stage == "sample":
        return run_sample(cfg, seed_override, force)
    if stage == "train":
        return run_train(cfg, seed_override, force)
    if stage == "benchmark":
        return run_benchmark(cfg, force)
    if stage == "compare-ghz":
        return run_compare(cfg, seed_override, force)
    raise ValueError(f"unknown stage {stage!r}")


def read_csv(path: str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def report_summary(run_dir: str) -> str:
    """Human-readable digest of the artifacts present in ``run_dir``."""
    path = os.path.join(run_dir, DEVICE)
    if not os.path.isfile(path):
        raise MissingArtifact(f"{path} not found; nothing to summarise")
    with open(path, encoding="utf-8") as fh:
        dev = json.load(fh)
    n = int(dev["circuit"]["n"])
    kind = dev["circuit"]["kind"]
    out = io.StringIO()
    out.write(f"device: {kind} n={n} d={dev['circuit']['d']} gamma={dev['circuit']['gamma']}\n")
    out.write(f"config hash: {dev['config_hash']}\n")
    out.write(f"best CFI (trace): {dev['best_trace_cfi']:.6f}  best QFI (trace): {dev['best_trace_qfi']:.6f}\n")
    out.write(f"CFI at phi={dev['phi_eval']:.6f}: {dev['cfi']:.6f}  QFI: {dev['qfi']:.6f}\n")
    out.write(f"reference SQL = n = {n}\n")
    out.write(f"reference HL = n^2 = {n * n}\n")
    if kind == "GRAPH":
        out.write(f"reference GRAPH plateau = n^2/2 = {n * n / 2:g}\n")
    bench = os.path.join(run_dir, BENCHMARK)
    if os.path.isfile(bench):
        rows = read_csv(bench)
        ms = sorted({int(r["m"]) for r in rows})
        for m in ms:
            sel = [r for r in rows if int(r["m"]) == m]
            bias = max(abs(float(r["bias"])) for r in sel)
            var = float(np.mean([float(r["variance"]) for r in sel]))
            crb = 1.0 / (m * dev["cfi"]) if dev["cfi"] > 0 else float("inf")
            out.write(f"m={m}: max|bias|={bias:.3e} mean variance={var:.3e} CRB 1/(m*CFI)={crb:.3e}\n")
        mmax = ms[-1]
        sel = [r for r in rows if int(r["m"]) == mmax]
        out.write(
            f"final (m={mmax}): bias={np.mean([float(r['bias']) for r in sel]):.3e} "
            f"variance={np.mean([float(r['variance']) for r in sel]):.3e}\n"
        )
    cmp_path = os.path.join(run_dir, COMPARE)
    if os.path.isfile(cmp_path):
        rows = read_csv(cmp_path)
        mmax = max(int(r["m"]) for r in rows)
        out.write(f"noise sweep at m={mmax}:\n")
        for gamma in sorted({float(r["gamma"]) for r in rows}):
            for protocol in ("GHZ", "VQS"):
                sel = [r for r in rows if float(r["gamma"]) == gamma and r["protocol"] == protocol
                       and int(r["m"]) == mmax]
                if sel:
                    out.write(
                        f"  gamma={gamma:g} {protocol}: CFI={float(sel[0]['cfi']):.4f} "
                        f"mean|bias|={np.mean([abs(float(r['bias'])) for r in sel]):.3e} "
                        f"variance={np.mean([float(r['variance']) for r in sel]):.3e}\n"
                    )
    return out.getvalue()
