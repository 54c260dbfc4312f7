"""Central-node / worker simulation loop for every algorithm variant.

One iteration: broadcast x, every worker builds its message (its own data,
its own RNG stream), Byzantine rows are overwritten by the attack, the
central node aggregates and takes a step.  RSA is the exception: it
exchanges models instead of gradients and has its own update.

RNG streams are derived from the run seed so that a run is a pure function
of its inputs: worker w draws from ``default_rng([seed, 0, key_w])``
(``key_w = w`` unless overridden), resampling from ``[seed, 1]``, the attack
from ``[seed, 2]`` and random model initialization from ``[seed, 3]``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from . import attacks
from .aggregation import GeoMedParams, ResampleParams, geometric_median, krum, mean_aggregate, resample
from .models import Dataset, ModelOracle, WorkerShard, global_gradient, global_loss
from .saga import SagaBank, minibatch_corrected_gradient

logger = logging.getLogger(__name__)

ALGORITHMS = (
    "dist-sgd",
    "byrd-sgd",
    "rs-byrd-sgd",
    "krum-sgd",
    "byrd-saga",
    "rs-byrd-saga",
    "rsa",
)
SAGA_ALGORITHMS = ("byrd-saga", "rs-byrd-saga")
RESAMPLING_ALGORITHMS = ("rs-byrd-sgd", "rs-byrd-saga")


@dataclass(frozen=True)
class Cohort:
    W: int
    byzantine: tuple = ()

    def __post_init__(self):
        byz = tuple(sorted(int(b) for b in self.byzantine))
        if len(set(byz)) != len(byz) or any(not 0 <= b < self.W for b in byz):
            raise ValueError(f"invalid Byzantine ids {self.byzantine} for W={self.W}")
        if len(byz) >= self.W:
            raise ValueError("at least one worker must be regular")
        object.__setattr__(self, "byzantine", byz)

    @classmethod
    def last(cls, W: int, B: int) -> "Cohort":
        return cls(W, tuple(range(W - B, W)))

    @classmethod
    def random(cls, W: int, B: int, seed: int = 0) -> "Cohort":
        rng = np.random.default_rng(seed)
        return cls(W, tuple(rng.choice(W, size=B, replace=False)))

    @property
    def B(self) -> int:
        return len(self.byzantine)

    @property
    def R(self) -> int:
        return self.W - self.B

    @property
    def alpha(self) -> float:
        return self.B / self.W

    @property
    def regular(self) -> tuple:
        byz = set(self.byzantine)
        return tuple(w for w in range(self.W) if w not in byz)


@dataclass(frozen=True)
class EngineConfig:
    algorithm: str = "rs-byrd-saga"
    gamma: float = 0.5
    s: int = 2
    batch_size: int = 1
    iterations: int = 100
    seed: int = 0
    lam: float = 0.5
    geomed: GeoMedParams = GeoMedParams()
    attack: attacks.AttackSpec = attacks.AttackSpec()
    eval_every: int = 1
    resample_scheme: str = "tickets"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1 or self.s < 1 or self.eval_every < 1:
            raise ValueError("batch_size, s and eval_every must be >= 1")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")


@dataclass
class MetricsRow:
    k: int
    loss: float
    accuracy: Optional[float] = None
    dist_to_opt_sq: Optional[float] = None
    grad_norm: float = float("nan")


@dataclass
class Trace:
    rows: List[MetricsRow] = field(default_factory=list)
    diverged: bool = False
    x: Optional[np.ndarray] = None
    steps: int = 0


class BatchSampler:
    """Uniform local mini-batches (distinct indices) from one worker's stream.

    Draws are generated in blocks to keep per-step overhead low; the stream
    is consumed in a fixed order, so results depend only on the seed.
    """

    def __init__(self, rng: np.random.Generator, J: int, batch_size: int, block: int = 256):
        if batch_size > J:
            raise ValueError(f"batch_size {batch_size} exceeds local sample count J={J}")
        self.rng, self.J, self.b, self.block = rng, J, batch_size, block
        self._buf = None
        self._pos = block

    def next(self) -> np.ndarray:
        if self.b == self.J:
            return np.arange(self.J)
        if self._pos == self.block:
            if self.b == 1:
                self._buf = self.rng.integers(0, self.J, size=(self.block, 1))
            else:
                self._buf = np.argsort(self.rng.random((self.block, self.J)), axis=1)[:, : self.b]
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


def worker_stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0, key])


def worker_message(algorithm: str, oracle, x, dataset, shard, sampler: BatchSampler, table=None):
    """Message of one regular worker (SAGA variants mutate `table`)."""
    batch = sampler.next()
    if algorithm in SAGA_ALGORITHMS:
        v, _ = minibatch_corrected_gradient(table, oracle, x, dataset, shard, batch)
        return v
    idx = shard.indices[batch]
    return oracle.sample_gradients(x, dataset.X[idx], dataset.y[idx]).mean(axis=0)


def aggregate(algorithm: str, messages, B: int = 0, s: int = 2, geomed: GeoMedParams = GeoMedParams(),
              rng: Optional[np.random.Generator] = None, resample_scheme: str = "tickets") -> np.ndarray:
    if algorithm == "dist-sgd":
        return mean_aggregate(messages)
    if algorithm == "krum-sgd":
        return krum(messages, B)
    if algorithm in RESAMPLING_ALGORITHMS:
        messages = resample(messages, ResampleParams(s, rng, resample_scheme))
    if algorithm in ("byrd-sgd", "byrd-saga") + RESAMPLING_ALGORITHMS:
        return geometric_median(messages, geomed)
    raise ValueError(f"{algorithm!r} has no gradient aggregation rule")


def central_step(algorithm: str, x, messages, gamma: float, **kw) -> np.ndarray:
    return x - gamma * aggregate(algorithm, messages, **kw)


def rsa_step(x0, models, transmitted, grads, gamma: float, lam: float):
    """One RSA iteration.

    x0: central model; models: (W, p) workers' own iterates; transmitted:
    (W, p) models as received by the centre (Byzantine rows attacked);
    grads: (W, p) stochastic gradients at each worker's own model.
    """
    x0_new = x0 - gamma * lam * np.sign(x0 - transmitted).sum(axis=0)
    models_new = models - gamma * (grads + lam * np.sign(models - x0))
    return x0_new, models_new


def _check_tolerance(config: EngineConfig, cohort: Cohort):
    alg = config.algorithm
    if alg in RESAMPLING_ALGORITHMS and 2 * config.s * cohort.B >= cohort.W:
        warnings.warn(f"{alg}: s*B = {config.s * cohort.B} >= W/2 = {cohort.W / 2}; "
                      "the convergence guarantee does not apply", RuntimeWarning, stacklevel=3)
    elif alg in ("byrd-sgd", "byrd-saga") and 2 * cohort.B >= cohort.W:
        warnings.warn(f"{alg}: B >= W/2, geometric median breaks down", RuntimeWarning, stacklevel=3)


def evaluate(oracle, x, dataset, regular_shards, k, x_star=None, eval_data: Optional[Dataset] = None) -> MetricsRow:
    grad = global_gradient(oracle, x, dataset, regular_shards)
    if eval_data is not None:
        loss = oracle.loss(x, eval_data.X, eval_data.y)
        acc = oracle.accuracy(x, eval_data.X, eval_data.y)
    else:
        loss = global_loss(oracle, x, dataset, regular_shards)
        idx = np.concatenate([s.indices for s in regular_shards])
        acc = oracle.accuracy(x, dataset.X[idx], dataset.y[idx])
    dist = None if x_star is None else float(np.sum((x - x_star) ** 2))
    return MetricsRow(k, float(loss), acc, dist, float(np.linalg.norm(grad)))


def run(config: EngineConfig, oracle: ModelOracle, dataset: Dataset, shards: Sequence[WorkerShard],
        cohort: Cohort, x0=None, x_star=None, eval_data: Optional[Dataset] = None,
        stream_keys: Optional[Sequence[int]] = None) -> Trace:
    """Simulate `config.iterations` steps; metrics every `eval_every` steps.

    `shards[w]` is the data of worker w (Byzantine workers hold data too, used
    by the sign-flip attack).  The run stops early and sets `diverged` if the
    iterate becomes non-finite.
    """
    W = cohort.W
    if len(shards) != W:
        raise ValueError(f"got {len(shards)} shards for W={W}")
    Js = {s.J for s in shards}
    if len(Js) != 1:
        raise ValueError(f"workers must share one J, got {sorted(Js)}")
    J = Js.pop()
    _check_tolerance(config, cohort)
    alg = config.algorithm
    attack = replace(config.attack, byzantine=cohort.byzantine) if config.attack.kind != "none" else config.attack
    regular_shards = [shards[w] for w in cohort.regular]
    keys = range(W) if stream_keys is None else stream_keys
    samplers = [BatchSampler(worker_stream(config.seed, int(key)), J, config.batch_size) for key in keys]
    resample_rng = np.random.default_rng([config.seed, 1])
    attack_rng = np.random.default_rng([config.seed, 2])

    if x0 is None:
        x0 = oracle.initial_point(np.random.default_rng([config.seed, 3]))
    x = np.array(x0, dtype=float)
    if x.shape != (oracle.dim,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({oracle.dim},)")
    index = np.stack([s.indices for s in shards])          # (W, J)
    rows = np.arange(W)[:, None]
    bank = SagaBank.initialize(oracle, x, dataset, shards) if alg in SAGA_ALGORITHMS else None
    models = np.tile(x, (W, 1)) if alg == "rsa" else None
    agg_kw = dict(B=cohort.B, s=config.s, geomed=config.geomed, rng=resample_rng,
                  resample_scheme=config.resample_scheme)

    trace = Trace()
    for k in range(1, config.iterations + 1):
        batch = np.stack([smp.next() for smp in samplers])  # (W, b)
        flat = index[rows, batch].ravel()
        if alg == "rsa":
            G = np.stack([
                oracle.sample_gradients(models[w], dataset.X[index[w, batch[w]]], dataset.y[index[w, batch[w]]]).mean(axis=0)
                for w in range(W)
            ])
            sent = attacks.apply(attack, models, attack_rng)
            x, models = rsa_step(x, models, sent, G, config.gamma, config.lam)
            finite = np.all(np.isfinite(x)) and np.all(np.isfinite(models))
        else:
            G = oracle.sample_gradients(x, dataset.X[flat], dataset.y[flat]).reshape(W, batch.shape[1], -1)
            honest = bank.correct(batch, G) if bank is not None else G.mean(axis=1)
            sent = attacks.apply(attack, honest, attack_rng)
            if not np.all(np.isfinite(sent)):
                finite = False
            else:
                x = central_step(alg, x, sent, config.gamma, **agg_kw)
                finite = np.all(np.isfinite(x))
        trace.steps = k
        if not finite:
            trace.diverged = True
            logger.warning("%s diverged at step %d", alg, k)
            break
        if k % config.eval_every == 0:
            row = evaluate(oracle, x, dataset, regular_shards, k, x_star, eval_data)
            if not np.isfinite(row.loss):
                trace.diverged = True
                trace.rows.append(row)
                break
            trace.rows.append(row)
    trace.x = x
    return trace
