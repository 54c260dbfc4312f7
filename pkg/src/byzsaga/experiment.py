"""Config-driven experiment runs: JSON config in, CSV metrics and a manifest out.

A config is one JSON object.  Unknown keys are rejected at every nesting
level so that a misspelled attack or algorithm field fails loudly instead of
silently falling back to a default.  Outputs contain no timestamps or host
information; rerunning a config reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import attacks, engine, theorycheck
from .aggregation import GeoMedParams
from .models import Dataset, PartitionScheme, gaussian_blobs, load_text_dataset, make_oracle, measure_variations, partition

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("k", "loss", "accuracy", "dist_to_opt_sq", "grad_norm")
DEFAULT_GAMMA = {"softmax": 0.5, "mlp2-tanh": 0.1, "quadratic": 0.1}
EVAL_MODES = ("test-if-provided", "train", "test")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    kind: str = "softmax"
    l2: float = 0.0
    hidden: Tuple[int, ...] = (50, 50)

    def __post_init__(self):
        if self.kind not in DEFAULT_GAMMA:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {tuple(DEFAULT_GAMMA)}")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class DataConfig:
    """`source` is "synthetic" (Gaussian blobs) or "file" (label,features lines)."""

    source: str = "synthetic"
    num_classes: Optional[int] = None   # inferred from file labels; 10 for synthetic
    per_class: int = 100
    dim: int = 10
    center_scale: float = 5.0
    spread: float = 1.0
    seed: int = 0
    centers: Optional[List[List[float]]] = None
    path: Optional[str] = None
    test_path: Optional[str] = None

    def __post_init__(self):
        if self.source not in ("synthetic", "file"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "file":
            if not self.path:
                raise ConfigError("file data source needs a path")
            for p in (self.path, self.test_path):
                if p and not os.path.exists(p):
                    raise ConfigError(f"data file {p!r} does not exist")


@dataclass
class PartitionConfig:
    mode: str = "iid"
    workers_per_class: int = 1
    seed: int = 0

    def scheme(self) -> PartitionScheme:
        return PartitionScheme(self.mode, self.workers_per_class)


@dataclass
class CohortConfig:
    """Byzantine ids are listed explicitly, or the last / a random B workers."""

    W: int = 30
    B: int = 0
    placement: str = "last"
    byzantine: Optional[List[int]] = None
    seed: int = 0

    def __post_init__(self):
        if self.placement not in ("last", "random"):
            raise ConfigError(f"unknown placement {self.placement!r}")
        if self.byzantine is not None:
            self.byzantine = [int(b) for b in self.byzantine]
            if len(self.byzantine) != self.B:
                raise ConfigError(f"byzantine lists {len(self.byzantine)} ids but B={self.B}")

    def build(self) -> engine.Cohort:
        if self.byzantine is not None:
            return engine.Cohort(self.W, tuple(self.byzantine))
        if self.placement == "random":
            return engine.Cohort.random(self.W, self.B, self.seed)
        return engine.Cohort.last(self.W, self.B)


@dataclass
class AttackConfig:
    kind: str = "none"
    c: float = -5.0
    mean: float = 0.0
    variance: float = 10000.0
    target: Optional[int] = None

    def __post_init__(self):
        if self.kind not in attacks.ATTACK_KINDS:
            raise ConfigError(f"unknown attack {self.kind!r}; expected one of {attacks.ATTACK_KINDS}")


@dataclass
class GeoMedConfig:
    epsilon: float = 1e-8
    max_iterations: int = 200
    smoothing: float = 1e-10


@dataclass
class ExperimentConfig:
    algorithms: List[str] = field(default_factory=lambda: ["rs-byrd-saga"])
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    cohort: CohortConfig = field(default_factory=CohortConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    geomed: GeoMedConfig = field(default_factory=GeoMedConfig)
    gamma: Optional[float] = None
    s: int = 2
    batch_size: int = 32
    iterations: int = 1000
    lam: float = 0.5
    eval_every: int = 10
    resample_scheme: str = "tickets"
    seed: int = 0
    repetitions: int = 1
    evaluate_on: str = "test-if-provided"
    output: str = "results"

    def __post_init__(self):
        if not self.algorithms:
            raise ConfigError("algorithm list is empty")
        for a in self.algorithms:
            if a not in engine.ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; expected one of {engine.ALGORITHMS}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError("algorithm list has duplicates")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.evaluate_on not in EVAL_MODES:
            raise ConfigError(f"evaluate_on must be one of {EVAL_MODES}")
        if self.evaluate_on == "test" and not self.data.test_path:
            raise ConfigError("evaluate_on='test' needs data.test_path")

    @property
    def step_size(self) -> float:
        return DEFAULT_GAMMA[self.model.kind] if self.gamma is None else self.gamma

    @property
    def seeds(self) -> List[int]:
        return [self.seed + r for r in range(self.repetitions)]

    def engine_config(self, algorithm: str, seed: int) -> engine.EngineConfig:
        a = self.attack
        return engine.EngineConfig(
            algorithm=algorithm, gamma=self.step_size, s=self.s, batch_size=self.batch_size,
            iterations=self.iterations, seed=seed, lam=self.lam,
            geomed=GeoMedParams(**dataclasses.asdict(self.geomed)),
            attack=attacks.AttackSpec(a.kind, (), a.c, a.mean, a.variance, a.target),
            eval_every=self.eval_every, resample_scheme=self.resample_scheme,
        )


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(fields)}")
    kw = {}
    for name, value in raw.items():
        sub = _NESTED.get((cls, name))
        kw[name] = _build(sub, value, f"{where}.{name}") if sub else value
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


_NESTED = {
    (ExperimentConfig, "model"): ModelConfig,
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "partition"): PartitionConfig,
    (ExperimentConfig, "cohort"): CohortConfig,
    (ExperimentConfig, "attack"): AttackConfig,
    (ExperimentConfig, "geomed"): GeoMedConfig,
}


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return _build(ExperimentConfig, raw, "config")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def config_to_dict(config: ExperimentConfig) -> dict:
    out = dataclasses.asdict(config)
    out["model"]["hidden"] = list(out["model"]["hidden"])
    return out


def serialize_config(config: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------- #


def load_dataset(data: DataConfig) -> Tuple[Dataset, Optional[Dataset]]:
    """Training set and optional test set."""
    if data.source == "synthetic":
        train = gaussian_blobs(data.num_classes or 10, data.per_class, data.dim, data.center_scale,
                               data.spread, data.seed, data.centers)
        return train, None
    train = load_text_dataset(data.path, data.num_classes)
    test = None
    if data.test_path:
        test = load_text_dataset(data.test_path, train.num_classes)
        if test.dim != train.dim:
            raise ValueError(f"test set has {test.dim} features, training set {train.dim}")
    return train, test


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def emit_metrics(rows, path):
    """CSV with one line per evaluation; floats use their shortest exact repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in METRIC_COLUMNS])


def read_metrics(path) -> List[engine.MetricsRow]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        for rec in reader:
            k, loss, acc, dist, gn = rec
            out.append(engine.MetricsRow(int(k), float(loss), float(acc) if acc else None,
                                         float(dist) if dist else None, float(gn)))
    return out


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def _theory_section(config, oracle, train, shards, cohort, x_star):
    c = theorycheck.constants(cohort.W, cohort.B, config.s)
    out = {"constants": c.as_dict()}
    regular = [shards[w] for w in cohort.regular]
    mu, L = oracle.strong_convexity, oracle.smoothness
    if mu is None or L is None or x_star is None:
        out["bounds"] = None
        out["bounds_note"] = "strong convexity / smoothness constants unknown for this model"
        return out, None
    var = measure_variations(oracle, x_star, train, regular)
    rep = theorycheck.bounds(c, mu, L, regular[0].J, cohort.R, var.delta_sq, var.sigma_sq,
                             config.geomed.epsilon)
    out["variations_at_optimum"] = dataclasses.asdict(var)
    out["bounds"] = rep.as_dict()
    return out, rep


def _applicability(algorithm, config, cohort, rep) -> dict:
    if algorithm not in engine.RESAMPLING_ALGORITHMS:
        return {"bound": None, "applicable": False, "reason": "no learning-error bound for this algorithm"}
    if 2 * config.s * cohort.B >= cohort.W:
        return {"bound": None, "applicable": False, "reason": "bound not applicable: s*B >= W/2"}
    if rep is None:
        return {"bound": None, "applicable": False, "reason": "bound not applicable: model constants unknown"}
    if algorithm == "rs-byrd-saga":
        delta2, ceiling = rep.delta2_proposed, rep.gamma_max_proposed
    else:
        delta2, ceiling = rep.delta2_rs_byrd_sgd, rep.gamma_max_rs_byrd_sgd
    ok = config.step_size <= ceiling
    return {"bound": delta2, "gamma_ceiling": ceiling, "applicable": ok,
            "reason": "" if ok else "bound not applicable: step size above the ceiling"}


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every (algorithm, seed) pair; write CSVs and manifest.json to `config.output`."""
    train, test = load_dataset(config.data)
    cohort = config.cohort.build()
    shards = partition(train, cohort.W, config.partition.scheme(), config.partition.seed)
    oracle = make_oracle(config.model.kind, train.dim, train.num_classes,
                         l2=config.model.l2, hidden=config.model.hidden)
    regular = [shards[w] for w in cohort.regular]
    x_star = oracle.optimum(train, regular)
    use_test = test is not None and config.evaluate_on != "train"
    eval_data = test if use_test else None

    os.makedirs(config.output, exist_ok=True)
    theory, rep = _theory_section(config, oracle, train, shards, cohort, x_star)
    runs = []
    for alg in config.algorithms:
        for seed in config.seeds:
            ec = config.engine_config(alg, seed)
            trace = engine.run(ec, oracle, train, shards, cohort, x_star=x_star, eval_data=eval_data)
            fname = f"{alg}_seed{seed}.csv"
            emit_metrics(trace.rows, os.path.join(config.output, fname))
            last = trace.rows[-1] if trace.rows else None
            runs.append({
                "algorithm": alg, "seed": seed, "file": fname, "steps": trace.steps,
                "diverged": trace.diverged,
                "final": None if last is None else {c: getattr(last, c) for c in METRIC_COLUMNS},
                "theory": _applicability(alg, config, cohort, rep),
            })
            logger.info("%s seed %d: %d steps%s", alg, seed, trace.steps, " (diverged)" if trace.diverged else "")
    manifest = {
        "config": config_to_dict(config),
        "evaluated_on": "test" if use_test else "train",
        "cohort": {"W": cohort.W, "B": cohort.B, "R": cohort.R, "byzantine": list(cohort.byzantine)},
        "samples_per_worker": shards[0].J,
        "theory": theory,
        "runs": runs,
    }
    with open(os.path.join(config.output, "manifest.json"), "w") as fh:
        json.dump(_json_safe(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
