"""Aggregation rules applied by the central node, plus s-replacement resampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def _stack(messages) -> np.ndarray:
    if isinstance(messages, np.ndarray):
        M = messages
    else:
        if len(messages) == 0:
            raise ValueError("no messages to aggregate")
        shapes = {np.shape(m) for m in messages}
        if len(shapes) != 1:
            raise ValueError(f"messages have mismatched shapes {sorted(shapes)}")
        M = np.asarray(messages, dtype=float)
    if M.ndim != 2 or M.shape[0] == 0:
        raise ValueError("expected a non-empty (W, p) stack of messages")
    return M


def mean_aggregate(messages) -> np.ndarray:
    return _stack(messages).mean(axis=0)


@dataclass(frozen=True)
class GeoMedParams:
    epsilon: float = 1e-8
    max_iterations: int = 200
    smoothing: float = 1e-10

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.smoothing <= 0:
            raise ValueError("smoothing must be > 0")


@dataclass
class GeoMedResult:
    point: np.ndarray
    objective: float
    gap_bound: float
    iterations: int
    converged: bool
    objectives: list = field(default_factory=list, repr=False)


def geomed_objective(z, points) -> float:
    return float(np.linalg.norm(points - z, axis=1).sum())


def _is_median_vertex(P, k) -> bool:
    """Whether data point k minimizes the distance sum: the unit vectors
    toward the other points must sum to norm <= its multiplicity."""
    D = P - P[k]
    dist = np.sqrt(np.einsum("ij,ij->i", D, D))
    same = dist == 0
    pull = (D[~same] / dist[~same, None]).sum(axis=0)
    return float(np.linalg.norm(pull)) <= same.sum()


def weiszfeld(messages, params: GeoMedParams = GeoMedParams(), track: bool = False) -> GeoMedResult:
    """Weiszfeld iterations started from the coordinate-wise mean.

    When later iterates come close to a data point, that point is tested for
    exact optimality and returned if it passes.  Distances below
    `params.smoothing` are replaced by
    sqrt(d**2 + smoothing**2).  Each iterate carries a certified bound on its
    objective gap: by convexity the gap is at most |subgradient| times the
    largest distance to a data point, since the minimizer lies in the convex
    hull.  Iteration stops once that bound is <= epsilon.
    """
    P = _stack(messages)
    if not np.all(np.isfinite(P)):
        raise ValueError("geometric median of non-finite messages")
    W = P.shape[0]
    z = P.mean(axis=0)
    if W == 1:
        return GeoMedResult(P[0].copy(), 0.0, 0.0, 0, True, [0.0] if track else [])

    history = []
    smooth_sq = params.smoothing ** 2
    it = 0
    converged = False
    tested = set()
    while True:
        D = P - z
        dist = np.sqrt(np.einsum("ij,ij->i", D, D))
        if track:
            history.append(float(dist.sum()))
        dmin = dist.min()
        if it >= 5 and dmin * W <= 0.1 * dist.sum():
            k = int(dist.argmin())
            if k not in tested:
                tested.add(k)
                if _is_median_vertex(P, k):
                    z = P[k].copy()
                    gap, converged = 0.0, True
                    if track:
                        history.append(geomed_objective(z, P))
                    break
        if dmin <= params.smoothing:
            # at (or next to) a data point: the coincident points contribute a
            # ball of radius `near.sum()` to the subdifferential
            near = dist <= params.smoothing
            far = ~near
            pull = (D[far] / dist[far, None]).sum(axis=0) if far.any() else np.zeros_like(z)
            residual = max(0.0, float(np.linalg.norm(pull)) - near.sum())
            dist = np.where(near, np.sqrt(dist ** 2 + smooth_sq), dist)
            inv = 1.0 / dist
            z_new = inv @ P / inv.sum()
        else:
            inv = 1.0 / dist
            total = inv.sum()
            z_new = inv @ P / total
            step = z - z_new
            # the objective's gradient at z is total * (z - z_new)
            residual = total * math.sqrt(step @ step)
        gap = residual * dist.max()
        if gap <= params.epsilon:
            converged = True
            break
        if it >= params.max_iterations:
            break
        z = z_new
        it += 1
    obj = history[-1] if track else geomed_objective(z, P)
    return GeoMedResult(z, obj, gap, it, converged, history)


def geometric_median(messages, params: GeoMedParams = GeoMedParams()) -> np.ndarray:
    return weiszfeld(messages, params).point


def krum_scores(messages, B: int) -> np.ndarray:
    P = _stack(messages)
    W = P.shape[0]
    m = W - B - 2
    if m < 1:
        raise ValueError(f"krum needs W - B - 2 >= 1, got W={W}, B={B}")
    sq = np.sum(P ** 2, axis=1)
    D = np.maximum(sq[:, None] + sq[None, :] - 2 * P @ P.T, 0.0)
    np.fill_diagonal(D, np.inf)
    return np.sort(D, axis=1)[:, :m].sum(axis=1)


def krum(messages, B: int) -> np.ndarray:
    """The message with the smallest summed squared distance to its W-B-2
    nearest neighbours; ties go to the lowest index."""
    P = _stack(messages)
    return P[int(np.argmin(krum_scores(P, B)))].copy()


@dataclass
class ResampleParams:
    s: int = 2
    rng: Optional[np.random.Generator] = None
    scheme: str = "tickets"

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if self.scheme not in ("tickets", "workers"):
            raise ValueError(f"unknown resampling scheme {self.scheme!r}")
        if self.rng is None:
            self.rng = np.random.default_rng(0)


def resample_assignment(W: int, s: int, rng: np.random.Generator, scheme: str = "tickets") -> np.ndarray:
    """(W, s) array: row w lists the inputs averaged into output w.

    Every input is used exactly s times.  With scheme="tickets" each input
    owns s tickets and every draw picks one of the remaining tickets
    uniformly; drawing all sW tickets in sequence is the same as one random
    permutation of the ticket multiset, which is how it is computed.  With
    scheme="workers" every draw is uniform over the inputs whose usage
    counter is still below s, drawn in round-major order.
    """
    if scheme == "tickets":
        return rng.permutation(np.repeat(np.arange(W), s)).reshape(W, s)
    counts = np.zeros(W, dtype=int)
    eligible = list(range(W))
    out = np.empty((W, s), dtype=int)
    u = rng.random(W * s)
    for t in range(W * s):
        pos = int(u[t] * len(eligible))
        w = eligible[pos]
        out[t // s, t % s] = w
        counts[w] += 1
        if counts[w] == s:
            del eligible[pos]
    return out


def resample(messages, params: ResampleParams) -> np.ndarray:
    P = _stack(messages)
    idx = resample_assignment(P.shape[0], params.s, params.rng, params.scheme)
    return P[idx].mean(axis=1)
