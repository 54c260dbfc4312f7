"""Finite-sum objectives, datasets and worker partitioning.

Every objective is an average of per-sample losses.  Oracles compute
per-sample gradients for a stack of samples at once, which is what the
simulation loop needs; the module-level helpers (`sample_gradient`,
`local_gradient`, `global_gradient`) give the single-worker views.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Feature matrix `X` (n, d) with labels `y` (n,)."""

    X: np.ndarray
    y: np.ndarray
    num_classes: int = 1

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y)
        if self.X.shape[0] == 0:
            raise ValueError("dataset is empty")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError(f"expected {self.X.shape[0]} labels, got shape {self.y.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("dataset contains non-finite features")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if np.issubdtype(self.y.dtype, np.integer):
            if self.y.min() < 0 or self.y.max() >= self.num_classes:
                raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.X[indices], self.y[indices], self.num_classes)


@dataclass(frozen=True)
class WorkerShard:
    worker_id: int
    indices: np.ndarray = field(compare=False)

    def __post_init__(self):
        if len(self.indices) < 1:
            raise ValueError(f"worker {self.worker_id} has an empty shard")

    @property
    def J(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class PartitionScheme:
    mode: str = "iid"
    workers_per_class: int = 1

    def __post_init__(self):
        if self.mode not in ("iid", "class-sharded"):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.workers_per_class < 1:
            raise ValueError("workers_per_class must be >= 1")


# --------------------------------------------------------------------------- #
# Oracles


class ModelOracle:
    """Base class: subclasses implement `sample_gradients` and `sample_losses`."""

    kind = "abstract"
    dim: int
    smoothness: Optional[float] = None
    strong_convexity: Optional[float] = None

    def sample_losses(self, x, X, y) -> np.ndarray:
        raise NotImplementedError

    def sample_gradients(self, x, X, y) -> np.ndarray:
        """Per-sample gradients, shape (n, dim)."""
        raise NotImplementedError

    def predict(self, x, X) -> Optional[np.ndarray]:
        return None

    def loss(self, x, X, y) -> float:
        return float(np.mean(self.sample_losses(x, X, y)))

    def accuracy(self, x, X, y) -> Optional[float]:
        pred = self.predict(x, X)
        if pred is None:
            return None
        return float(np.mean(pred == y))

    def initial_point(self, rng=None) -> np.ndarray:
        return np.zeros(self.dim)

    def optimum(self, dataset: Dataset, shards: Sequence[WorkerShard]) -> Optional[np.ndarray]:
        return None


class QuadraticOracle(ModelOracle):
    """f_j(x) = 1/2 (x - a_j)^T H (x - a_j) with a_j the sample's feature vector.

    `hessian` defaults to the identity; labels are ignored.
    """

    kind = "quadratic"

    def __init__(self, dim: int, hessian=None):
        self.dim = int(dim)
        H = np.eye(self.dim) if hessian is None else np.asarray(hessian, dtype=float)
        if H.ndim == 1:
            H = np.diag(H)
        if H.shape != (self.dim, self.dim) or not np.allclose(H, H.T):
            raise ValueError("hessian must be a symmetric (dim, dim) matrix")
        eig = np.linalg.eigvalsh(H)
        if eig[0] <= 0:
            raise ValueError("hessian must be positive definite")
        self.H = H
        self.strong_convexity = float(eig[0])
        self.smoothness = float(eig[-1])

    def sample_losses(self, x, X, y=None):
        D = x - X
        return 0.5 * np.einsum("ni,ij,nj->n", D, self.H, D)

    def sample_gradients(self, x, X, y=None):
        return (x - X) @ self.H

    def optimum(self, dataset, shards):
        idx = np.concatenate([s.indices for s in shards])
        # every regular worker holds J samples, so the global minimizer is the plain mean
        return dataset.X[idx].mean(axis=0)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class SoftmaxOracle(ModelOracle):
    """Multinomial logistic regression; parameters are a (C, d+1) matrix, bias last."""

    kind = "softmax"

    def __init__(self, in_dim: int, num_classes: int, l2: float = 0.0):
        self.in_dim = int(in_dim)
        self.num_classes = int(num_classes)
        self.l2 = float(l2)
        self.dim = self.num_classes * (self.in_dim + 1)
        if self.l2 > 0:
            self.strong_convexity = self.l2

    def _weights(self, x):
        return x.reshape(self.num_classes, self.in_dim + 1)

    def _logits(self, x, X):
        Wb = self._weights(x)
        return X @ Wb[:, :-1].T + Wb[:, -1]

    def sample_losses(self, x, X, y):
        logp = _log_softmax(self._logits(x, X))
        out = -logp[np.arange(len(y)), y]
        if self.l2:
            out = out + 0.5 * self.l2 * (x @ x)
        return out

    def sample_gradients(self, x, X, y):
        n = X.shape[0]
        P = np.exp(_log_softmax(self._logits(x, X)))
        P[np.arange(n), y] -= 1.0
        Xa = np.hstack([X, np.ones((n, 1))])
        G = (P[:, :, None] * Xa[:, None, :]).reshape(n, self.dim)
        if self.l2:
            G += self.l2 * x
        return G

    def predict(self, x, X):
        return np.argmax(self._logits(x, X), axis=1)


class MLPOracle(ModelOracle):
    """Two tanh hidden layers followed by a softmax output layer.

    Flat parameter layout: W1 (h1, d), b1, W2 (h2, h1), b2, W3 (C, h2), b3.
    """

    kind = "mlp2-tanh"

    def __init__(self, in_dim: int, num_classes: int, hidden=(50, 50)):
        h1, h2 = hidden
        self.in_dim, self.num_classes = int(in_dim), int(num_classes)
        self.hidden = (int(h1), int(h2))
        self._shapes = [
            (h1, in_dim), (h1,),
            (h2, h1), (h2,),
            (num_classes, h2), (num_classes,),
        ]
        self._sizes = [int(np.prod(s)) for s in self._shapes]
        self.dim = sum(self._sizes)

    def _unpack(self, x):
        parts, start = [], 0
        for shape, size in zip(self._shapes, self._sizes):
            parts.append(x[start:start + size].reshape(shape))
            start += size
        return parts

    def _forward(self, x, X):
        W1, b1, W2, b2, W3, b3 = self._unpack(x)
        h1 = np.tanh(X @ W1.T + b1)
        h2 = np.tanh(h1 @ W2.T + b2)
        return h1, h2, h2 @ W3.T + b3

    def sample_losses(self, x, X, y):
        logp = _log_softmax(self._forward(x, X)[2])
        return -logp[np.arange(len(y)), y]

    def sample_gradients(self, x, X, y):
        n = X.shape[0]
        _, _, W2, _, W3, _ = self._unpack(x)
        h1, h2, logits = self._forward(x, X)
        d3 = np.exp(_log_softmax(logits))
        d3[np.arange(n), y] -= 1.0
        d2 = (d3 @ W3) * (1.0 - h2 ** 2)
        d1 = (d2 @ W2) * (1.0 - h1 ** 2)
        blocks = [
            np.einsum("ni,nj->nij", d1, X), d1,
            np.einsum("ni,nj->nij", d2, h1), d2,
            np.einsum("ni,nj->nij", d3, h2), d3,
        ]
        return np.concatenate([b.reshape(n, -1) for b in blocks], axis=1)

    def predict(self, x, X):
        return np.argmax(self._forward(x, X)[2], axis=1)

    def initial_point(self, rng=None):
        # Glorot-style uniform weights, zero biases; a zero start is a saddle
        rng = np.random.default_rng(0) if rng is None else rng
        parts = []
        for shape in self._shapes:
            if len(shape) == 2:
                bound = np.sqrt(6.0 / (shape[0] + shape[1]))
                parts.append(rng.uniform(-bound, bound, size=shape).ravel())
            else:
                parts.append(np.zeros(shape))
        return np.concatenate(parts)


def make_oracle(kind: str, in_dim: int, num_classes: int = 1, **kw) -> ModelOracle:
    if kind == "quadratic":
        return QuadraticOracle(in_dim, kw.get("hessian"))
    if kind == "softmax":
        return SoftmaxOracle(in_dim, num_classes, kw.get("l2", 0.0))
    if kind == "mlp2-tanh":
        return MLPOracle(in_dim, num_classes, kw.get("hidden", (50, 50)))
    raise ValueError(f"unknown model kind {kind!r}")


# --------------------------------------------------------------------------- #
# Gradient views


def _check_point(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    return x


def sample_gradient(oracle: ModelOracle, x, dataset: Dataset, shard: WorkerShard, j: int) -> np.ndarray:
    """Gradient of the j-th local sample (0-based) of `shard` at x."""
    x = _check_point(x)
    if not 0 <= j < shard.J:
        raise IndexError(f"sample index {j} out of range for J={shard.J}")
    i = shard.indices[j : j + 1]
    return oracle.sample_gradients(x, dataset.X[i], dataset.y[i])[0]


def shard_gradients(oracle: ModelOracle, x, dataset: Dataset, shard: WorkerShard) -> np.ndarray:
    """All J per-sample gradients of a shard, shape (J, p)."""
    x = _check_point(x)
    return oracle.sample_gradients(x, dataset.X[shard.indices], dataset.y[shard.indices])


def local_gradient(oracle, x, dataset, shard) -> np.ndarray:
    return shard_gradients(oracle, x, dataset, shard).mean(axis=0)


def global_gradient(oracle, x, dataset, shards: Sequence[WorkerShard]) -> np.ndarray:
    if len(shards) == 0:
        raise ValueError("no regular workers")
    return np.mean([local_gradient(oracle, x, dataset, s) for s in shards], axis=0)


def global_loss(oracle, x, dataset, shards) -> float:
    return float(np.mean([oracle.loss(x, dataset.X[s.indices], dataset.y[s.indices]) for s in shards]))


@dataclass(frozen=True)
class Variations:
    delta_sq: float
    sigma_sq: float
    sigma_sq_mean: float


def measure_variations(oracle, x, dataset, shards: Sequence[WorkerShard]) -> Variations:
    """Outer variation (spread of local gradients) and inner variation (max and mean
    over workers of the per-sample spread), evaluated exactly at x."""
    locals_, inner = [], []
    for s in shards:
        G = shard_gradients(oracle, x, dataset, s)
        g = G.mean(axis=0)
        locals_.append(g)
        inner.append(np.mean(np.sum((G - g) ** 2, axis=1)))
    L = np.array(locals_)
    delta_sq = float(np.mean(np.sum((L - L.mean(axis=0)) ** 2, axis=1)))
    return Variations(delta_sq, float(max(inner)), float(np.mean(inner)))


# --------------------------------------------------------------------------- #
# Partitioning


def partition(dataset: Dataset, W: int, scheme: PartitionScheme = PartitionScheme(), seed: int = 0):
    """Split sample indices into W equal shards.

    Samples that do not fit an equal split are dropped, largest indices first.
    """
    if W < 1:
        raise ValueError("W must be >= 1")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    if scheme.mode == "iid":
        J = n // W
        if J == 0:
            raise ValueError(f"{n} samples cannot feed {W} workers")
        kept = rng.permutation(W * J)
        groups = [kept[w * J:(w + 1) * J] for w in range(W)]
    else:
        k = scheme.workers_per_class
        C = dataset.num_classes
        if W != k * C:
            raise ValueError(f"class-sharded partition needs W = {k} x {C}, got W={W}")
        by_class = [np.flatnonzero(dataset.y == c) for c in range(C)]
        J = min(len(ix) for ix in by_class) // k
        if J == 0:
            raise ValueError("some class has fewer samples than workers_per_class")
        groups = []
        for ix in by_class:
            ix = rng.permutation(ix[: k * J])
            groups.extend(ix[g * J:(g + 1) * J] for g in range(k))
    dropped = n - W * J
    if dropped:
        logger.info("partition dropped %d of %d samples to equalize J=%d", dropped, n, J)
    return [WorkerShard(w, np.sort(g)) for w, g in enumerate(groups)]


# --------------------------------------------------------------------------- #
# Data sources


def load_text_dataset(path, num_classes: Optional[int] = None) -> Dataset:
    """Read `label,feat1,feat2,...` lines; blank lines and `#` comments are skipped."""
    labels, rows = [], []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if len(values) < 2:
                raise ValueError(f"{path}:{lineno}: need a label and at least one feature")
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ValueError(f"{path}:{lineno}: expected {width - 1} features, got {len(values) - 1}")
            labels.append(values[0])
            rows.append(values[1:])
    if not rows:
        raise ValueError(f"{path}: no samples")
    y = np.array(labels)
    if np.all(y == np.round(y)):
        y = y.astype(int)
        if num_classes is None:
            num_classes = int(y.max()) + 1
    return Dataset(np.array(rows), y, num_classes or 1)


def gaussian_blobs(num_classes: int, per_class: int, dim: int, center_scale: float = 5.0,
                   spread: float = 1.0, seed: int = 0, centers=None) -> Dataset:
    """One isotropic Gaussian blob per class, samples grouped by class."""
    rng = np.random.default_rng(seed)
    if centers is None:
        centers = center_scale * rng.standard_normal((num_classes, dim))
    centers = np.asarray(centers, dtype=float)
    if centers.shape != (num_classes, dim):
        raise ValueError(f"centers must have shape ({num_classes}, {dim})")
    X = np.repeat(centers, per_class, axis=0) + spread * rng.standard_normal((num_classes * per_class, dim))
    y = np.repeat(np.arange(num_classes), per_class)
    return Dataset(X, y, num_classes)
