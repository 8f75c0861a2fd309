"""Monte-Carlo oracles for the single-layer regret-minimizer argument.

Reward streams here are i.i.d. standard normal vectors ``R_1..R_T`` in
``R^d``, ``S_t`` is the running sum and the best-in-hindsight policy on the
l2 ball of radius ``R_pi`` is ``R_pi * S_T / ||S_T||``.

Samples are generated in fixed-size chunks, each from its own sub-seed of the
root seed, and reduced in chunk order, so results do not depend on how the
work is scheduled.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .envs import derive_rng
from .errors import ConfigError, InsufficientDataError, SearchFailure

CHUNK = 20_000


@dataclass
class McEstimate:
    value: float | np.ndarray
    standard_error: float | np.ndarray
    n: int

    def to_dict(self) -> dict:
        return {"value": np.asarray(self.value).tolist(),
                "standard_error": np.asarray(self.standard_error).tolist(), "n": self.n}


def _root_seed(seed) -> int:
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2**63))
    return int(seed)


def _chunks(N: int, chunk: int = CHUNK):
    start = 0
    while start < N:
        yield start // chunk, min(chunk, N - start)
        start += chunk


def _streams(seed: int, index: int, n: int, T: int, d: int) -> np.ndarray:
    return derive_rng(seed, index).standard_normal((n, T, d))


def expected_norm_formula(d: int, T: int) -> float:
    """``E||S_T||`` for ``S_T ~ N(0, T I_d)``."""
    if d < 1 or T < 1:
        raise ConfigError("need d >= 1 and T >= 1")
    return math.sqrt(2 * T) * math.exp(special.gammaln((d + 1) / 2) - special.gammaln(d / 2))


def predicted_c(d: int, T: int, radius: float = 1.0) -> float:
    """``R E||S_T|| / (T d) = sqrt(2) R Gamma((d+1)/2) / (sqrt(T) d Gamma(d/2))``."""
    return radius * expected_norm_formula(d, T) / (T * d)


def predicted_c_over_d(d: int, T: int, radius: float = 1.0) -> float:
    """``(R / (T d)) * E||S_T|| / d``, the competing prediction with one more ``1/d``."""
    return radius * expected_norm_formula(d, T) / (T * d * d)


def _check(d: int, T: int, N: int) -> None:
    if d < 1 or T < 1:
        raise ConfigError("need d >= 1 and T >= 1")
    if N < 1:
        raise ConfigError("need N >= 1 samples")


def mc_expected_norm(d: int, T: int, N: int, seed=0) -> McEstimate:
    """Sample mean of ``||R_1 + ... + R_T||`` over ``N`` streams."""
    _check(d, T, N)
    seed = _root_seed(seed)
    total = total_sq = 0.0
    for idx, n in _chunks(N):
        norms = np.linalg.norm(_streams(seed, idx, n, T, d).sum(axis=1), axis=1)
        total += norms.sum()
        total_sq += (norms * norms).sum()
    mean = total / N
    var = max(total_sq / N - mean * mean, 0.0) * N / max(N - 1, 1)
    return McEstimate(mean, math.sqrt(var / N), N)


def _sum_samples(d: int, T: int, N: int, seed: int, rotation=None):
    for idx, n in _chunks(N):
        S = _streams(seed, idx, n, T, d).sum(axis=1)
        yield S if rotation is None else S @ rotation.T


@dataclass
class IsotropyReport:
    estimate: McEstimate
    diagonal_mean: float
    max_off_diagonal: float
    diagonal_spread: float
    prediction: float                 # E||S_T|| / d
    off_diagonal_ratio: float = field(init=False)
    diagonal_rel_error: float = field(init=False)

    def __post_init__(self):
        self.off_diagonal_ratio = self.max_off_diagonal / abs(self.diagonal_mean)
        self.diagonal_rel_error = abs(self.diagonal_mean - self.prediction) / self.prediction

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "estimate"}
        out["estimate"] = self.estimate.to_dict()
        out["isotropic_1pct"] = bool(self.off_diagonal_ratio < 0.01)
        out["diagonal_matches_1pct"] = bool(self.diagonal_rel_error < 0.01)
        return out


def mc_isotropy(d: int, T: int, N: int, seed=0, rotation=None) -> IsotropyReport:
    """Estimate ``E[S_T S_T^T / ||S_T||]``; ``rotation`` conjugates every sample."""
    _check(d, T, N)
    seed = _root_seed(seed)
    acc = np.zeros((d, d))
    acc_sq = np.zeros((d, d))
    for S in _sum_samples(d, T, N, seed, rotation):
        X = S[:, :, None] * S[:, None, :] / np.linalg.norm(S, axis=1)[:, None, None]
        acc += X.sum(axis=0)
        acc_sq += (X * X).sum(axis=0)
    mean = acc / N
    se = np.sqrt(np.maximum(acc_sq / N - mean * mean, 0.0) / N)
    diag = np.diag(mean)
    off = mean - np.diag(diag)
    return IsotropyReport(McEstimate(mean, se, N), float(diag.mean()), float(np.abs(off).max()) if d > 1 else 0.0,
                          float(diag.max() - diag.min()), expected_norm_formula(d, T) / d)


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


@dataclass
class OptimalCReport:
    C: np.ndarray
    scalar: float                     # trace(C) / d
    scalar_se: float
    off_diagonal_fraction: float      # ||offdiag C||_F / ||C||_F
    prediction: float                 # predicted_c
    prediction_over_d: float          # predicted_c_over_d
    n: int

    @property
    def matches_prediction(self) -> bool:
        return abs(self.scalar - self.prediction) <= 0.02 * self.prediction

    @property
    def matches_prediction_over_d(self) -> bool:
        return abs(self.scalar - self.prediction_over_d) <= 0.02 * self.prediction_over_d

    def to_dict(self) -> dict:
        return {"C": self.C.tolist(), "scalar": self.scalar, "scalar_se": self.scalar_se,
                "off_diagonal_fraction": self.off_diagonal_fraction,
                "prediction": self.prediction,
                "prediction_over_d": self.prediction_over_d,
                "matches_prediction_2pct": self.matches_prediction,
                "matches_prediction_over_d_2pct": self.matches_prediction_over_d,
                "identity_proportional_2pct": bool(self.off_diagonal_fraction < 0.02), "n": self.n}


def _c_normal_equations(S_prefix: np.ndarray, target: np.ndarray):
    """Accumulators ``G = sum S S^T`` and ``H = sum target S^T`` over (stream, round)."""
    G = np.einsum("ntj,ntk->jk", S_prefix, S_prefix)
    H = np.einsum("nj,ntk->jk", target, S_prefix)
    return G, H


def empirical_optimal_C(d: int, T: int, radius: float = 1.0, N: int = 100_000, seed=0,
                        rotation=None, n_batches: int = 20) -> OptimalCReport:
    """Least-squares ``C`` for the score ``sum_{i<t} C R_i`` against the ball's
    best-in-hindsight policy, summed over rounds ``t = 1..T``.

    The standard error of the scalar comes from ``n_batches`` batch means.
    """
    _check(d, T, N)
    if N < 10 * d * d:
        raise InsufficientDataError(f"need N >= {10 * d * d} streams for d={d}, got {N}")
    if T < 2:
        raise ConfigError("need T >= 2 for a nonzero prefix sum")
    seed = _root_seed(seed)
    G = np.zeros((d, d))
    H = np.zeros((d, d))
    batch_G = np.zeros((n_batches, d, d))
    batch_H = np.zeros((n_batches, d, d))
    chunk = min(CHUNK, max(1, N // n_batches))
    pos = 0
    for idx, n in _chunks(N, chunk):
        R = _streams(seed, idx, n, T, d)
        if rotation is not None:
            R = R @ rotation.T
        S = np.cumsum(R, axis=1)
        prefix = S - R                          # S_{t-1}, rounds t = 1..T
        target = radius * S[:, -1] / np.linalg.norm(S[:, -1], axis=1)[:, None]
        g, h = _c_normal_equations(prefix, target)
        G += g
        H += h
        b = min(pos * n_batches // N, n_batches - 1)
        batch_G[b] += g
        batch_H[b] += h
        pos += n
    C = np.linalg.solve(G.T, H.T).T             # C G = H
    scalars = []
    for g, h in zip(batch_G, batch_H):
        if np.linalg.matrix_rank(g) == d:
            scalars.append(np.trace(np.linalg.solve(g.T, h.T).T) / d)
    se = float(np.std(scalars, ddof=1) / math.sqrt(len(scalars))) if len(scalars) > 1 else float("nan")
    off = C - np.diag(np.diag(C))
    frac = float(np.linalg.norm(off) / np.linalg.norm(C))
    return OptimalCReport(C, float(np.trace(C) / d), se, frac,
                          predicted_c(d, T, radius), predicted_c_over_d(d, T, radius), N)


@dataclass
class DeltaReport:
    A: np.ndarray
    beta: np.ndarray
    C: np.ndarray
    delta_hat: np.ndarray
    minus_A_beta: np.ndarray
    rel_error: float
    loss_at_fit: float
    loss_at_plus: float

    def to_dict(self) -> dict:
        out = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}
        out["fit_matches_minus_A_beta_2pct"] = bool(self.rel_error < 0.02)
        out["fit_beats_plus_A_beta"] = bool(self.loss_at_fit < self.loss_at_plus)
        return out


def delta_condition_check(d: int, T: int, N: int, seed=0, A=None, beta=None, C=None,
                          radius: float = 1.0) -> DeltaReport:
    """Least-squares optimal constant term ``delta`` for fixed ``(A, beta, C)``.

    The objective ``sum_t ||sum_{i<t}(A R R^T beta + C R_i + delta) - pi*||^2``
    is quadratic in ``delta`` with minimizer
    ``-sum_t (t-1) E[X_t - pi*] / sum_t (t-1)^2``; it is estimated from ``N``
    streams and compared with ``-A beta``.
    """
    _check(d, T, N)
    if T < 2:
        raise ConfigError("need T >= 2")
    seed = _root_seed(seed)
    rng = derive_rng(seed, 2**32 - 1)
    A = rng.standard_normal((d, d)) if A is None else np.asarray(A, dtype=float)
    beta = rng.standard_normal(d) if beta is None else np.asarray(beta, dtype=float)
    C = rng.standard_normal((d, d)) if C is None else np.asarray(C, dtype=float)
    w = np.arange(T, dtype=float)                # t - 1 for t = 1..T
    resid_sum = np.zeros(d)
    chunks = []
    for idx, n in _chunks(N):
        R = _streams(seed, idx, n, T, d)
        per_round = (R @ beta)[..., None] * (R @ A.T) + R @ C.T
        X = np.cumsum(per_round, axis=1) - per_round
        S_T = R.sum(axis=1)
        target = radius * S_T / np.linalg.norm(S_T, axis=1)[:, None]
        resid = X - target[:, None, :]
        resid_sum += np.einsum("t,ntd->d", w, resid)
        chunks.append(resid)
    delta_hat = -resid_sum / (N * (w * w).sum())

    def loss(delta):
        return float(sum(((r + w[None, :, None] * delta) ** 2).sum() for r in chunks) / N)

    target_delta = -A @ beta
    denom = max(np.linalg.norm(target_delta), 1e-300)
    return DeltaReport(A, beta, C, delta_hat, target_delta,
                       float(np.linalg.norm(delta_hat - target_delta) / denom),
                       loss(delta_hat), loss(A @ beta))


def independent_directions(d: int, V1, rng: np.random.Generator, max_attempts: int = 100,
                           tol: float = 1e-8) -> np.ndarray:
    """``d`` vectors ``V1^T (R R^T - I)`` for ``R`` uniform in the unit ball,
    resampled until their determinant exceeds ``tol`` in magnitude.

    Returns the vectors as rows of a ``(d, d)`` array.
    """
    V1 = np.asarray(V1, dtype=float)
    if V1.shape != (d,):
        raise ConfigError(f"V1 must have shape ({d},)")
    if not np.any(V1):
        raise ConfigError("V1 must be nonzero")
    for _ in range(max_attempts):
        g = rng.standard_normal((d, d))
        radii = rng.uniform(size=d) ** (1.0 / d)
        R = g / np.linalg.norm(g, axis=1, keepdims=True) * radii[:, None]
        rows = (R @ V1)[:, None] * R - V1[None, :]
        if abs(np.linalg.det(rows)) > tol:
            return rows
    raise SearchFailure(f"no independent set found in {max_attempts} attempts")


def verify_all(seed: int = 0, N_norm: int = 1_000_000, N_c: int = 100_000, d: int = 3, T: int = 25,
               radius: float = 1.0) -> dict:
    """All oracle checks as one JSON-ready report."""
    norm = mc_expected_norm(d, T, N_norm, derive_rng(seed, 0))
    closed = expected_norm_formula(d, T)
    iso = mc_isotropy(d, T, N_norm, derive_rng(seed, 1))
    cr = empirical_optimal_C(d, T, radius, N_c, derive_rng(seed, 2))
    delta = delta_condition_check(2, 3, N_c, derive_rng(seed, 3))
    dirs = independent_directions(d, derive_rng(seed, 4).standard_normal(d), derive_rng(seed, 5))
    return {
        "expected_norm": {"estimate": norm.to_dict(), "closed_form": closed,
                          "rel_error": abs(norm.value - closed) / closed,
                          "within_1pct": bool(abs(norm.value - closed) < 0.01 * closed)},
        "isotropy": iso.to_dict(),
        "optimal_C": cr.to_dict(),
        "delta_condition": delta.to_dict(),
        "independent_directions": {"vectors": dirs.tolist(), "det": float(np.linalg.det(dirs))},
        "large_d_limit": {"d": 64, "sqrt_d_times_c": math.sqrt(64) * predicted_c(64, T, radius),
                          "limit": radius / math.sqrt(T)},
    }
