"""SAGA gradient tables and the corrected stochastic gradient.

`SagaTable` is the state of one worker.  `SagaBank` stacks the tables of all
workers into one (W, J, p) array so that a simulation step updates every
worker with a handful of vectorized operations; `bank.table(w)` is a view
onto worker w's slice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import shard_gradients, sample_gradient


@dataclass
class SagaTable:
    worker_id: int
    stored: np.ndarray   # (J, p) most recent gradient of every local sample
    average: np.ndarray  # (p,) running mean of `stored`

    @property
    def J(self) -> int:
        return self.stored.shape[0]

    def drift(self) -> float:
        """Relative gap between the running average and a fresh recomputation."""
        exact = self.stored.mean(axis=0)
        scale = max(np.linalg.norm(exact), np.abs(self.stored).max(), 1e-300)
        return float(np.linalg.norm(self.average - exact) / scale)

    def recompute(self):
        self.average[:] = self.stored.mean(axis=0)


def init_table(oracle, x0, dataset, shard) -> SagaTable:
    G = shard_gradients(oracle, x0, dataset, shard)
    return SagaTable(shard.worker_id, G.copy(), G.mean(axis=0))


def corrected_gradient(table: SagaTable, oracle, x, dataset, shard, j: int):
    """Return (v, table) for local sample j; `table` is updated in place.

    v = grad_j(x) - stored[j] + average, using the table as it was before the
    call; afterwards stored[j] holds grad_j(x).
    """
    fresh = sample_gradient(oracle, x, dataset, shard, j)
    v = fresh - table.stored[j] + table.average
    table.average += (fresh - table.stored[j]) / table.J
    table.stored[j] = fresh
    return v, table


def minibatch_corrected_gradient(table: SagaTable, oracle, x, dataset, shard, batch):
    """Batch version: all batch members are corrected against the pre-update table."""
    batch = np.asarray(batch, dtype=int)
    if batch.size == 0:
        raise ValueError("empty batch")
    if len(np.unique(batch)) != batch.size:
        raise ValueError("batch indices must be unique")
    if batch.min() < 0 or batch.max() >= table.J:
        raise IndexError(f"batch index out of range for J={table.J}")
    idx = shard.indices[batch]
    fresh = oracle.sample_gradients(np.asarray(x, dtype=float), dataset.X[idx], dataset.y[idx])
    delta = fresh - table.stored[batch]
    v = delta.mean(axis=0) + table.average
    table.average += delta.sum(axis=0) / table.J
    table.stored[batch] = fresh
    return v, table


class SagaBank:
    """Tables of W workers sharing one J, updated together."""

    def __init__(self, stored: np.ndarray):
        self.stored = np.array(stored, dtype=float)     # (W, J, p)
        self.average = self.stored.mean(axis=1)          # (W, p)

    @classmethod
    def initialize(cls, oracle, x0, dataset, shards):
        idx = np.stack([s.indices for s in shards])
        W, J = idx.shape
        G = oracle.sample_gradients(np.asarray(x0, dtype=float), dataset.X[idx.ravel()], dataset.y[idx.ravel()])
        return cls(G.reshape(W, J, -1))

    @property
    def J(self) -> int:
        return self.stored.shape[1]

    def table(self, w: int) -> SagaTable:
        return SagaTable(w, self.stored[w], self.average[w])

    def correct(self, batch: np.ndarray, fresh: np.ndarray) -> np.ndarray:
        """batch: (W, b) unique local indices per row; fresh: (W, b, p) gradients
        at the current point.  Returns the (W, p) corrected messages."""
        rows = np.arange(self.stored.shape[0])[:, None]
        delta = fresh - self.stored[rows, batch]
        v = delta.mean(axis=1) + self.average
        self.average += delta.sum(axis=1) / self.J
        self.stored[rows, batch] = fresh
        return v

    def drift(self) -> float:
        exact = self.stored.mean(axis=1)
        scale = np.maximum(np.linalg.norm(exact, axis=1), np.abs(self.stored).max(axis=(1, 2)))
        return float(np.max(np.linalg.norm(self.average - exact, axis=1) / np.maximum(scale, 1e-300)))

    def recompute(self):
        self.average[:] = self.stored.mean(axis=1)
