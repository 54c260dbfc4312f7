"""Robustness constants, learning-error bounds, and Monte-Carlo checks of the
concentration results they rest on.

Monte-Carlo trial t draws from ``default_rng(seed + t)``; estimates are
accumulated in trial order so reports are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from .aggregation import GeoMedParams, geomed_objective, resample_assignment, weiszfeld
from .saga import SagaTable


@dataclass(frozen=True)
class RobustnessConstants:
    W: int
    B: int
    s: int
    alpha: float
    d: float
    C_alpha: Optional[float]
    C_s_alpha: Optional[float]
    tolerable: bool     # B < W/2
    tolerable_s: bool   # B < W/(2s)

    def as_dict(self):
        return asdict(self)


def _c(a: Fraction) -> Optional[Fraction]:
    if 1 - 2 * a <= 0:
        return None
    return (2 - 2 * a) / (1 - 2 * a)


def exact_constants(W: int, B: int, s: int):
    """(alpha, d, C_alpha, C_s_alpha) as Fractions; C values are None when undefined."""
    alpha = Fraction(B, W)
    return alpha, Fraction(W - 1, s * W - 1), _c(alpha), _c(s * alpha)


def constants(W: int, B: int, s: int) -> RobustnessConstants:
    if W < 1 or not 0 <= B < W or s < 1:
        raise ValueError(f"need W >= 1, 0 <= B < W, s >= 1 (got W={W}, B={B}, s={s})")
    if s * W == 1:
        # W = s = 1: a single message, resampling is the identity
        d = Fraction(1)
        alpha, _, ca, csa = exact_constants(W, B, 1)
    else:
        alpha, d, ca, csa = exact_constants(W, B, s)
    return RobustnessConstants(
        W, B, s, float(alpha), float(d),
        None if ca is None else float(ca),
        None if csa is None else float(csa),
        2 * B < W, 2 * s * B < W,
    )


@dataclass(frozen=True)
class BoundReport:
    delta2_proposed: Optional[float]
    delta2_rs_byrd_sgd: Optional[float]
    gamma_max_proposed: Optional[float]
    gamma_max_proposed_eps: Optional[float]
    gamma_max_rs_byrd_sgd: float
    epsilon_term: Optional[float]            # added to 2*delta2 for the proposed method
    epsilon_term_rs_byrd_sgd: Optional[float]
    orders: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)


def bounds(c: RobustnessConstants, mu: float, L: float, J: int, R: int,
           delta_sq: float, sigma_sq: float, epsilon: float = 0.0) -> BoundReport:
    """Learning-error radii and step-size ceilings for the resampling methods,
    plus the four asymptotic error orders (without hidden constants)."""
    if not (mu > 0 and L > 0):
        raise ValueError("mu and L must be positive")
    orders = {}
    if c.tolerable:
        orders["byrd-sgd"] = c.C_alpha ** 2 * (sigma_sq + delta_sq)
        orders["byrd-saga"] = c.C_alpha ** 2 * delta_sq
    if c.tolerable_s:
        C2 = c.C_s_alpha ** 2
        shrink = c.d + (1 - c.d) / R
        orders["rs-byrd-sgd"] = shrink * C2 * sigma_sq + c.d * C2 * delta_sq
        orders["rs-byrd-saga"] = c.d * C2 * delta_sq
        gap_sq = (c.W - 2 * c.s * c.B) ** 2
        return BoundReport(
            delta2_proposed=5 * c.d * C2 * delta_sq / mu ** 2,
            delta2_rs_byrd_sgd=2 / mu ** 2 * (shrink * C2 * sigma_sq + c.d * C2 * delta_sq),
            gamma_max_proposed=mu / (2 * math.sqrt(10) * J ** 2 * L ** 2 * c.C_s_alpha),
            gamma_max_proposed_eps=mu / (4 * math.sqrt(5) * J ** 2 * L ** 2 * c.C_s_alpha),
            gamma_max_rs_byrd_sgd=mu / (2 * L ** 2),
            epsilon_term=10 * epsilon ** 2 / (mu ** 2 * gap_sq),
            epsilon_term_rs_byrd_sgd=4 * epsilon ** 2 / (mu ** 2 * gap_sq),
            orders=orders,
        )
    return BoundReport(None, None, None, None, mu / (2 * L ** 2), None, None, orders)


def error_curve(W: int, s_list: Sequence[int], alphas: Sequence[float]):
    """Rows (s, alpha, coefficient) with coefficient d*C_{s alpha}^2 (C_alpha^2 when s=1).

    Grid points outside an s's tolerable range (s*alpha >= 1/2) are skipped.
    """
    out = []
    for s in s_list:
        d = (W - 1) / (s * W - 1)
        for a in alphas:
            if not 0 <= s * a < 0.5:
                continue
            C = (2 - 2 * s * a) / (1 - 2 * s * a)
            out.append((s, float(a), d * C * C))
    return out


def crossover(W: int, s: int, alphas: Sequence[float]) -> Optional[float]:
    """First grid alpha where d*C_{s alpha}^2 stops being below C_alpha^2."""
    prev = None
    for s_, a, coef in error_curve(W, [s], alphas):
        base = ((2 - 2 * a) / (1 - 2 * a)) ** 2
        diff = coef - base
        if prev is not None and prev < 0 <= diff:
            return a
        prev = diff
    return None


# --------------------------------------------------------------------------- #
# Monte-Carlo verifiers


@dataclass
class CheckReport:
    name: str
    passed: bool
    estimate: float
    predicted: float
    trials: int
    tolerance: float
    details: dict = field(default_factory=dict)

    @property
    def rel_error(self) -> float:
        if self.predicted == 0:
            return abs(self.estimate)
        return abs(self.estimate - self.predicted) / abs(self.predicted)

    def as_dict(self):
        out = asdict(self)
        out["rel_error"] = self.rel_error
        return out


def _rel(a, b):
    return abs(a - b) / abs(b) if b != 0 else abs(a)


def verify_resampling_identities(vectors, s: int, trials: int = 100_000, seed: int = 0,
                                 mean_tol: float = 0.02, var_tol: float = 0.03,
                                 scheme: str = "tickets") -> CheckReport:
    """Per-output-slot mean and variance of resampled honest vectors against
    mean(z) and d * (1/W) sum |z_w - mean(z)|^2."""
    Z = np.asarray(vectors, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    W = Z.shape[0]
    d = (W - 1) / (s * W - 1)
    zbar = Z.mean(axis=0)
    pred_var = d * np.mean(np.sum((Z - zbar) ** 2, axis=1))
    dev = Z - zbar
    S1 = np.zeros_like(Z)
    S2 = np.zeros(W)
    for t in range(trials):
        out = dev[resample_assignment(W, s, np.random.default_rng(seed + t), scheme)].mean(axis=1)
        S1 += out
        S2 += np.einsum("ij,ij->i", out, out)
    shift = S1 / trials
    slot_mean = zbar + shift
    slot_var = np.maximum(S2 / trials - np.einsum("ij,ij->i", shift, shift), 0.0)
    mean_err = np.linalg.norm(slot_mean - zbar, axis=1) / max(np.linalg.norm(zbar), 1e-12)
    if pred_var == 0:
        var_err = np.abs(slot_var)
    else:
        var_err = np.abs(slot_var - pred_var) / pred_var
    passed = bool(mean_err.max() <= mean_tol and var_err.max() <= var_tol)
    return CheckReport(
        "resampling identities", passed, float(slot_var.mean()), float(pred_var), trials, var_tol,
        {"slot_means": slot_mean.tolist(), "slot_variances": slot_var.tolist(),
         "max_mean_rel_error": float(mean_err.max()), "max_var_rel_error": float(var_err.max()),
         "predicted_mean": zbar.tolist(), "d": d},
    )


@dataclass(frozen=True)
class GaussianSource:
    """Isotropic Gaussian N(mean, std^2 I); std = 0 gives a point mass."""

    mean: tuple
    std: float = 0.0

    def sample(self, rng):
        m = np.asarray(self.mean, dtype=float)
        if self.std == 0:
            return m.copy()
        return m + self.std * rng.standard_normal(m.shape)

    @property
    def variance(self) -> float:
        return self.std ** 2 * len(self.mean)


def _draw(sources: Sequence[GaussianSource], rng) -> np.ndarray:
    M = np.array([src.mean for src in sources], dtype=float)
    std = np.array([src.std for src in sources], dtype=float)
    if not std.any():
        return M
    return M + std[:, None] * rng.standard_normal(M.shape)


def _moments(sources: Sequence[GaussianSource]):
    M = np.array([np.asarray(src.mean, dtype=float) for src in sources])
    zbar = M.mean(axis=0)
    inner = float(np.mean([src.variance for src in sources]))
    outer = float(np.mean(np.sum((M - zbar) ** 2, axis=1)))
    return zbar, inner, outer


def verify_resampled_deviation(sources: Sequence[GaussianSource], s: int, trials: int = 100_000, seed: int = 0,
                  tol: float = 0.05) -> CheckReport:
    """All-honest (B = 0) check of the slot-averaged mean-square deviation after
    resampling: (d + (1-d)/R) * inner + d * outer."""
    R = W = len(sources)
    d = (W - 1) / (s * W - 1)
    zbar, inner, outer = _moments(sources)
    predicted = (d + (1 - d) / R) * inner + d * outer
    acc = 0.0
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        Z = _draw(sources, rng)
        out = Z[resample_assignment(W, s, rng)].mean(axis=1)
        acc += float(np.mean(np.sum((out - zbar) ** 2, axis=1)))
    est = acc / trials
    rel = _rel(est, predicted)
    return CheckReport("resampled deviation identity", bool(rel <= tol), est, predicted, trials, tol,
                       {"inner": inner, "outer": outer, "d": d})


def _push_to_gap(z, P, epsilon, direction):
    """Move from z along `direction` until the distance-sum objective has grown
    by exactly epsilon (bisection); the result is an epsilon-approximate median."""
    f0 = geomed_objective(z, P)
    u = direction / np.linalg.norm(direction)
    hi = 1.0
    while geomed_objective(z + hi * u, P) - f0 < epsilon:
        hi *= 2.0
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if geomed_objective(z + mid * u, P) - f0 <= epsilon:
            lo = mid
        else:
            hi = mid
    return z + lo * u


def verify_geomed_bounds(sources: Sequence[GaussianSource], adversaries, s: int, trials: int = 1000,
                         seed: int = 0, epsilon: float = 0.0, slack: float = 0.01,
                         geomed: GeoMedParams = GeoMedParams(epsilon=1e-10, max_iterations=1000)) -> CheckReport:
    """Empirical E|geomed - zbar|^2 against the concentration bound.

    `adversaries` are fixed Byzantine vectors.  s = 1 checks the plain
    geometric-median bound (constant C_alpha), s > 1 the bound after
    resampling (d, C_{s alpha}).  With epsilon > 0 the aggregate is pushed
    away from the median (toward the first adversary) until its objective gap
    equals epsilon, and the epsilon-augmented right-hand side is used.
    """
    R = len(sources)
    A = np.atleast_2d(np.asarray(adversaries, dtype=float)) if len(adversaries) else np.zeros((0, len(sources[0].mean)))
    B = A.shape[0]
    W = R + B
    c = constants(W, B, s)
    if not c.tolerable_s:
        raise ValueError(f"bound needs s*B < W/2 (W={W}, B={B}, s={s})")
    zbar, inner, outer = _moments(sources)
    C2 = c.C_s_alpha ** 2
    shrink = (c.d + (1 - c.d) / R) if s > 1 else 1.0
    rhs = shrink * C2 * inner + c.d * C2 * outer
    if epsilon > 0:
        rhs = 2 * rhs + 2 * epsilon ** 2 / (W - 2 * s * B) ** 2
    acc = 0.0
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        Z = np.vstack([_draw(sources, rng), A])
        if s > 1:
            Z = Z[resample_assignment(W, s, rng)].mean(axis=1)
        z = weiszfeld(Z, geomed).point
        if epsilon > 0:
            toward = (A[0] if B else Z[0]) - z
            if np.linalg.norm(toward) == 0:
                toward = np.ones_like(z)
            z = _push_to_gap(z, Z, epsilon, toward)
        acc += float(np.sum((z - zbar) ** 2))
    est = acc / trials
    name = ("resampled geomed bound" if s > 1 else "geomed bound") + (" (epsilon)" if epsilon > 0 else "")
    return CheckReport(name, bool(est <= (1 + slack) * rhs), est, rhs, trials, slack,
                       {"inner": inner, "outer": outer, "W": W, "B": B, "s": s, "epsilon": epsilon})


def verify_saga_variance(configs: int = 100, seed: int = 0, J: int = 8, p: int = 4) -> CheckReport:
    """Exact (enumerated) variance of the corrected gradient against
    L^2 * mean_j |x - phi_j|^2 on random quadratic problems.

    Each configuration draws an SPD Hessian, sample centres, a point x and a
    table of stale points phi_j.  `estimate` is the largest ratio lhs/rhs.
    """
    worst = 0.0
    violations = 0
    for t in range(configs):
        rng = np.random.default_rng(seed + t)
        Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
        eig = rng.uniform(0.1, 3.0, size=p)
        H = (Q * eig) @ Q.T
        L = eig.max()
        a = rng.standard_normal((J, p)) * rng.uniform(0.1, 5.0)
        x = rng.standard_normal(p) * 3
        phi = x + rng.standard_normal((J, p)) * rng.uniform(0.01, 3.0, size=(J, 1))
        stored = (phi - a) @ H
        table = SagaTable(0, stored, stored.mean(axis=0))
        fresh = (x - a) @ H
        local = fresh.mean(axis=0)
        V = fresh - table.stored + table.average  # every possible message, one per j
        lhs = float(np.mean(np.sum((V - local) ** 2, axis=1)))
        rhs = float(L ** 2 * np.mean(np.sum((x - phi) ** 2, axis=1)))
        if lhs > rhs * (1 + 1e-12):
            violations += 1
        worst = max(worst, lhs / rhs)
    return CheckReport("saga variance", violations == 0, worst, 1.0, configs, 0.0,
                       {"violations": violations})


def default_suite(trials: int = 100_000, seed: int = 0) -> List[CheckReport]:
    """The standard set of checks run by `byzsaga verify`."""
    pm = [GaussianSource((float(v),)) for v in range(4)]
    honest = [GaussianSource((0.2 * w, -0.1 * w), 1.0) for w in range(5)]
    far = [[1000.0, 0.0]]
    geo_trials = max(1000, trials // 100)
    return [
        verify_resampling_identities([0.0, 1.0, 2.0, 3.0], 2, trials, seed),
        verify_resampled_deviation(pm, 2, trials, seed),
        verify_resampled_deviation([GaussianSource((float(v), 0.5 * v), 0.7) for v in range(4)], 2, trials, seed),
        verify_geomed_bounds(honest, far, 1, geo_trials, seed),
        verify_geomed_bounds(honest, far, 2, geo_trials, seed),
        verify_geomed_bounds(honest, far, 1, geo_trials, seed, epsilon=0.5),
        verify_geomed_bounds(honest, far, 2, geo_trials, seed, epsilon=0.5),
        verify_saga_variance(100, seed),
    ]
