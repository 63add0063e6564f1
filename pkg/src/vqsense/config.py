"""Run configuration: a versioned YAML document with validation and a commented template."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
import yaml

SCHEMA_VERSION = 1
ANSATZE = ("HEA", "TIA", "GRAPH")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class OptimizerSection:
    iterations: int = 1500
    lr: float = 0.05
    restarts: int = 5
    phi_eval: Optional[float] = None
    plateau_window: int = 100
    plateau_tol: float = 1e-5
    fd_step: float = 1e-4


@dataclass(frozen=True)
class GridSection:
    phi_min: float = 0.0
    phi_max: Optional[float] = None  # None: pi / n
    n_phi: int = 100


@dataclass(frozen=True)
class SamplingSection:
    shots_per_phi: int = 1000
    test_shots: int = 100_000
    test_phi_fractions: tuple = (0.2, 0.35, 0.5, 0.65, 0.8)


@dataclass(frozen=True)
class EstimatorSection:
    hidden: tuple = (64, 64)
    epochs: int = 150
    batch_size: int = 1024
    lr: float = 3e-3
    l2_coefficient: float = 0.0
    log_space: bool = True


@dataclass(frozen=True)
class BenchmarkSection:
    m_grid: tuple = (1, 10, 100, 1000)
    force: bool = False


@dataclass(frozen=True)
class CompareSection:
    gammas: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    iterations: int = 1500
    restarts: int = 5


@dataclass(frozen=True)
class RunConfig:
    version: int = SCHEMA_VERSION
    ansatz: str = "HEA"
    n: int = 4
    d: int = 4
    gamma: float = 0.0
    objective: str = "CFI"
    seed: int = 0
    out_dir: str = "run"
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    grid: GridSection = field(default_factory=GridSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    compare: CompareSection = field(default_factory=CompareSection)

    def __post_init__(self):
        validate(self)

    @property
    def phi_max(self) -> float:
        return np.pi / self.n if self.grid.phi_max is None else float(self.grid.phi_max)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def hash(self) -> str:
        """Digest of every setting that affects results (the output directory is excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, seed: Optional[int] = None, out_dir: Optional[str] = None) -> "RunConfig":
        out = self
        if seed is not None:
            out = replace(out, seed=int(seed))
        if out_dir is not None:
            out = replace(out, out_dir=str(out_dir))
        return out


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _positive(key: str, value, integer: bool = True):
    kind = int if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, kind) or value <= 0:
        raise ConfigError(key, f"must be a positive {'integer' if integer else 'number'}, got {value!r}")


def validate(cfg: RunConfig) -> None:
    if cfg.version != SCHEMA_VERSION:
        raise ConfigError("version", f"unsupported schema version {cfg.version}")
    if cfg.ansatz not in ANSATZE:
        raise ConfigError("ansatz", f"must be one of {ANSATZE}, got {cfg.ansatz!r}")
    _positive("n", cfg.n)
    _positive("d", cfg.d)
    if cfg.ansatz == "GRAPH" and cfg.n % 2:
        raise ConfigError("n", "GRAPH needs an even number of qubits")
    if isinstance(cfg.gamma, bool) or not isinstance(cfg.gamma, (int, float)) or not 0 <= cfg.gamma <= 1:
        raise ConfigError("gamma", f"must lie in [0, 1], got {cfg.gamma!r}")
    if cfg.objective not in ("CFI", "QFI"):
        raise ConfigError("objective", f"must be CFI or QFI, got {cfg.objective!r}")
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    o = cfg.optimizer
    _positive("optimizer.iterations", o.iterations)
    _positive("optimizer.lr", o.lr, integer=False)
    _positive("optimizer.restarts", o.restarts)
    _positive("optimizer.plateau_window", o.plateau_window)
    _positive("optimizer.fd_step", o.fd_step, integer=False)
    if o.plateau_tol < 0:
        raise ConfigError("optimizer.plateau_tol", "must be non-negative")
    g = cfg.grid
    _positive("grid.n_phi", g.n_phi)
    if g.n_phi < 2:
        raise ConfigError("grid.n_phi", "must be at least 2")
    if not cfg.phi_max > g.phi_min:
        raise ConfigError("grid.phi_max", "must exceed grid.phi_min")
    s = cfg.sampling
    _positive("sampling.shots_per_phi", s.shots_per_phi)
    _positive("sampling.test_shots", s.test_shots)
    if not s.test_phi_fractions or any(not 0 <= f <= 1 for f in s.test_phi_fractions):
        raise ConfigError("sampling.test_phi_fractions", "need one or more fractions in [0, 1]")
    e = cfg.estimator
    if not e.hidden or any(isinstance(h, bool) or not isinstance(h, int) or h <= 0 for h in e.hidden):
        raise ConfigError("estimator.hidden", "must be a list of positive layer widths")
    _positive("estimator.epochs", e.epochs)
    _positive("estimator.batch_size", e.batch_size)
    _positive("estimator.lr", e.lr, integer=False)
    if e.l2_coefficient < 0:
        raise ConfigError("estimator.l2_coefficient", "must be non-negative")
    b = cfg.benchmark
    if not b.m_grid:
        raise ConfigError("benchmark.m_grid", "must not be empty")
    for m in b.m_grid:
        _positive("benchmark.m_grid", m)
    if max(b.m_grid) > s.test_shots:
        raise ConfigError("benchmark.m_grid", "largest m exceeds sampling.test_shots")
    if not cfg.compare.gammas or any(not 0 <= x <= 1 for x in cfg.compare.gammas):
        raise ConfigError("compare.gammas", "need one or more values in [0, 1]")
    _positive("compare.iterations", cfg.compare.iterations)
    _positive("compare.restarts", cfg.compare.restarts)


_SECTIONS = {
    "optimizer": OptimizerSection,
    "grid": GridSection,
    "sampling": SamplingSection,
    "estimator": EstimatorSection,
    "benchmark": BenchmarkSection,
    "compare": CompareSection,
}


def from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    top = {f.name for f in fields(RunConfig)}
    kwargs = {}
    for key, value in d.items():
        if key not in top:
            raise ConfigError(key, "unknown key")
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            if value is None:
                value = {}
            if not isinstance(value, dict):
                raise ConfigError(key, "must be a mapping")
            allowed = {f.name for f in fields(cls)}
            for sub in value:
                if sub not in allowed:
                    raise ConfigError(f"{key}.{sub}", "unknown key")
            value = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in value.items()})
        kwargs[key] = value
    return RunConfig(**kwargs)


def loads(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<document>", f"not valid YAML ({exc})") from exc
    return from_dict(data or {})


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def dumps(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def derive_seed(master: int, label: str) -> int:
    """Stage seed from the master seed, mixed with the stage label."""
    digest = hashlib.sha256(f"{int(master)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


TEMPLATE = """\
# Variational quantum sensing run configuration.
version: 1            # schema version
ansatz: HEA           # HEA | TIA | GRAPH
n: 4                  # qubits
d: 4                  # ansatz depth (ignored by GRAPH)
gamma: 0.0            # dephasing strength after every two-qubit gate, in [0, 1]
objective: CFI        # CFI | QFI
seed: 0               # master seed; stage seeds are derived from it by label
out_dir: run          # artifact directory

optimizer:
  iterations: 1500    # per restart
  lr: 0.05            # ADAM step size
  restarts: 5         # random restarts, best kept
  phi_eval: null      # phase at which the Fisher information is maximised; null means pi/(2n)
  plateau_window: 100 # stop when the best value improves by less than plateau_tol (relative)
  plateau_tol: 1.0e-5 #   over this many iterations
  fd_step: 1.0e-4     # central-difference step for parameter gradients

grid:
  phi_min: 0.0
  phi_max: null       # null means pi/n
  n_phi: 100          # training phases; also the number of estimator output bins

sampling:
  shots_per_phi: 1000 # training shots per grid phase
  test_shots: 100000  # test shots per true phase
  test_phi_fractions: [0.2, 0.35, 0.5, 0.65, 0.8]  # true phases as fractions of the grid

estimator:
  hidden: [64, 64]    # hidden layer widths
  epochs: 150
  batch_size: 1024
  lr: 3.0e-3
  l2_coefficient: 0.0
  log_space: true     # false multiplies raw posteriors and can underflow at large m

benchmark:
  m_grid: [1, 10, 100, 1000]  # sequence lengths
  force: false        # accept artifacts whose config hash differs

compare:
  gammas: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]  # dephasing sweep for the GHZ comparison
  iterations: 1500    # re-optimisation budget per gamma; the first restart starts from the previous gamma
  restarts: 5
"""
