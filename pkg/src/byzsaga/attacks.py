"""Byzantine message generation.

Attacks act on the full (W, p) stack of honest messages: row w is what
worker w would send if it followed the protocol.  Rows of regular workers
pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

ATTACK_KINDS = ("none", "sign-flip", "gaussian", "sample-duplicate")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    byzantine: Tuple[int, ...] = ()
    c: float = -5.0
    mean: float = 0.0
    variance: float = 10000.0
    target: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack {self.kind!r}; expected one of {ATTACK_KINDS}")
        object.__setattr__(self, "byzantine", tuple(sorted(int(b) for b in self.byzantine)))
        if len(set(self.byzantine)) != len(self.byzantine):
            raise ValueError("duplicate Byzantine worker ids")
        if self.variance < 0:
            raise ValueError("variance must be >= 0")
        if self.kind == "sample-duplicate" and self.byzantine:
            if self.target is None:
                raise ValueError("sample-duplicate attack needs a target worker")
            if self.target in self.byzantine:
                raise ValueError(f"target {self.target} is Byzantine, must be a regular worker")


def apply(spec: AttackSpec, honest_messages, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Return a copy of `honest_messages` with the Byzantine rows replaced."""
    M = np.array(honest_messages, dtype=float)
    byz = list(spec.byzantine)
    if spec.kind == "none" or not byz:
        return M
    if max(byz) >= M.shape[0] or min(byz) < 0:
        raise ValueError(f"Byzantine ids {byz} out of range for W={M.shape[0]}")
    if spec.kind == "sign-flip":
        M[byz] *= spec.c
    elif spec.kind == "gaussian":
        rng = np.random.default_rng(0) if rng is None else rng
        M[byz] = spec.mean + np.sqrt(spec.variance) * rng.standard_normal((len(byz), M.shape[1]))
    elif spec.kind == "sample-duplicate":
        if not 0 <= spec.target < M.shape[0]:
            raise ValueError(f"target {spec.target} out of range")
        M[byz] = M[spec.target]
    return M
