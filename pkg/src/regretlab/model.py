"""Single-layer linear-attention decision model.

Given a reward history ``R_1..R_{t-1}`` the model outputs

    Operator( sum_tau (V R_tau + v_c) * ((K R_tau + k_c) . (Q 1 + q_c)) )

where ``Operator`` is a softmax (simplex policies), a radial projection onto
an l2 ball, or the identity (raw score). The same score can be written as
``sum_tau A R R^T b + C R + dvec`` with ``A = V``, ``b = K^T(Q1 + q_c)``,
``C = (k_c . q~) V + v_c b^T`` and ``dvec = (k_c . q~) v_c``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize

from . import kernels
from .errors import ConfigError

PARAM_NAMES = ("V", "K", "Q", "v_c", "k_c", "q_c")
OPERATOR_CODES = {"softmax": kernels.SOFTMAX, "ball": kernels.BALL, "identity": kernels.IDENTITY}


@dataclass(frozen=True)
class Operator:
    kind: str = "softmax"
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in OPERATOR_CODES:
            raise ConfigError(f"operator must be one of {tuple(OPERATOR_CODES)}, got {self.kind!r}")
        if self.kind == "ball" and not self.radius > 0:
            raise ConfigError("ball radius must be positive")

    @property
    def code(self) -> int:
        return OPERATOR_CODES[self.kind]

    def __call__(self, score) -> np.ndarray:
        s = np.asarray(score, dtype=float)
        if self.kind == "softmax":
            z = np.exp(s - s.max(axis=-1, keepdims=True))
            return z / z.sum(axis=-1, keepdims=True)
        if self.kind == "ball":
            norm = np.linalg.norm(s, axis=-1, keepdims=True)
            return s * np.where(norm >= self.radius, self.radius / np.maximum(norm, 1e-300), 1.0)
        return s


@dataclass
class ModelParams:
    V: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    v_c: np.ndarray
    k_c: np.ndarray
    q_c: np.ndarray

    @property
    def d(self) -> int:
        return self.V.shape[0]

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, std: float = 0.1) -> "ModelParams":
        return cls(*(std * rng.standard_normal((d, d)) for _ in range(3)),
                   *(std * rng.standard_normal(d) for _ in range(3)))

    @classmethod
    def zeros(cls, d: int) -> "ModelParams":
        return cls(*(np.zeros((d, d)) for _ in range(3)), *(np.zeros(d) for _ in range(3)))

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, n) for n in PARAM_NAMES)

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, vec: np.ndarray, d: int) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        mats = [vec[i * d * d:(i + 1) * d * d].reshape(d, d) for i in range(3)]
        off = 3 * d * d
        vecs = [vec[off + i * d: off + (i + 1) * d] for i in range(3)]
        return cls(*(m.copy() for m in mats), *(v.copy() for v in vecs))

    def to_dict(self, operator: Operator | None = None) -> dict:
        out = {"d": self.d}
        if operator is not None:
            out["operator_kind"] = operator.kind
            out["radius"] = operator.radius
        out.update({n: a.tolist() for n, a in zip(PARAM_NAMES, self.arrays())})
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        try:
            params = cls(*(np.asarray(data[n], dtype=float) for n in PARAM_NAMES))
        except KeyError as exc:
            raise ConfigError(f"checkpoint is missing {exc.args[0]!r}") from None
        if "d" in data and params.d != int(data["d"]):
            raise ConfigError("checkpoint arrays do not match its d")
        return params


def save_checkpoint(path, params: ModelParams, operator: Operator) -> None:
    Path(path).write_text(json.dumps(params.to_dict(operator)))


def load_checkpoint(path) -> tuple[ModelParams, Operator]:
    data = json.loads(Path(path).read_text())
    op = Operator(data.get("operator_kind", "softmax"), float(data.get("radius", 1.0)))
    return ModelParams.from_dict(data), op


def _check_history(history, d: int) -> np.ndarray:
    h = np.asarray(history, dtype=float).reshape(-1, d) if np.size(history) else np.zeros((0, d))
    if np.size(history) and np.asarray(history).shape[-1] != d:
        raise ValueError(f"history entries must be {d}-dimensional")
    return h


def score(history, params: ModelParams) -> np.ndarray:
    """Pre-operator attention output, evaluated term by term."""
    h = _check_history(history, params.d)
    query = params.Q.sum(axis=1) + params.q_c
    weights = (h @ params.K.T + params.k_c) @ query
    values = h @ params.V.T + params.v_c
    return weights @ values


def forward(history, params: ModelParams, operator: Operator | str = "softmax") -> np.ndarray:
    """Policy for the next round; an empty history gives score 0."""
    if isinstance(operator, str):
        operator = Operator(operator)
    return operator(score(history, params))


@dataclass
class Reparam:
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    dvec: np.ndarray

    def score(self, history) -> np.ndarray:
        h = _check_history(history, self.b.shape[0])
        return (self.A @ (h.T @ (h @ self.b)) + self.C @ h.sum(axis=0) + h.shape[0] * self.dvec)


def reparam(params: ModelParams) -> Reparam:
    query = params.Q.sum(axis=1) + params.q_c
    b = params.K.T @ query
    kq = float(params.k_c @ query)
    C = kq * params.V + np.outer(params.v_c, b)
    return Reparam(A=params.V.copy(), b=b, C=C, dvec=kq * params.v_c)


@dataclass
class Diagnostics:
    a_b_norm: float
    c_dev: float
    d_dev: float

    def as_tuple(self) -> tuple[float, float, float]:
        return self.a_b_norm, self.c_dev, self.d_dev


def diagnostics(params: ModelParams, operator: Operator | str = "softmax") -> Diagnostics:
    """Distances from the form ``Operator(c * sum R)``.

    ``C`` is compared with ``mean(diag C) * I``. On the simplex ``dvec`` is
    compared with its mean times ``1`` (a constant shift is invisible to the
    softmax); on the ball ``dvec`` itself must vanish.
    """
    kind = operator.kind if isinstance(operator, Operator) else operator
    rp = reparam(params)
    d = params.d
    a_b = float(np.linalg.norm(rp.A) * np.linalg.norm(rp.b))
    c_dev = float(np.linalg.norm(rp.C - np.trace(rp.C) / d * np.eye(d)))
    if kind == "softmax":
        d_dev = float(np.linalg.norm(rp.dvec - rp.dvec.mean()))
    else:
        d_dev = float(np.linalg.norm(rp.dvec))
    return Diagnostics(a_b, c_dev, d_dev)


# ---------------------------------------------------------------------------
# Batched statistics and gradients


def history_stats(rewards) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-round statistics of the history seen before each round.

    ``rewards`` has shape ``(N, T, d)``; returns flattened ``(N*T,)`` counts,
    ``(N*T, d)`` sums and ``(N*T, d, d)`` second moments over rounds ``< t``.
    """
    R = np.asarray(rewards, dtype=float)
    N, T, d = R.shape
    outer = R[..., :, None] * R[..., None, :]
    M2 = np.cumsum(outer, axis=1) - outer
    S1 = np.cumsum(R, axis=1) - R
    n = np.broadcast_to(np.arange(T, dtype=float), (N, T))
    return (np.ascontiguousarray(n.reshape(-1)), np.ascontiguousarray(S1.reshape(-1, d)),
            np.ascontiguousarray(M2.reshape(-1, d, d)))


def stats_of(histories) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Statistics of a list of (possibly ragged) histories."""
    hs = [np.asarray(h, dtype=float).reshape(-1, np.shape(h)[-1]) for h in histories]
    n = np.array([h.shape[0] for h in hs], dtype=float)
    S1 = np.array([h.sum(axis=0) for h in hs])
    M2 = np.array([h.T @ h for h in hs])
    return n, np.ascontiguousarray(S1), np.ascontiguousarray(M2)


def loss_and_gradient(params: ModelParams, stats, targets, operator: Operator,
                      raw_score: bool = False) -> tuple[float, ModelParams]:
    """Summed squared distance ``sum ||Operator(score) - target||^2`` and its
    exact gradient. ``raw_score`` fits the pre-operator score instead."""
    n, S1, M2 = stats
    code = kernels.IDENTITY if raw_score else operator.code
    out = kernels.loss_and_grad(*(np.ascontiguousarray(a) for a in params.arrays()),
                                np.ascontiguousarray(n, dtype=float), S1, M2,
                                np.ascontiguousarray(targets, dtype=float), code, float(operator.radius))
    return out[0], ModelParams(*out[1:])


def gradient(params: ModelParams, batch, operator: Operator | str = "softmax",
             raw_score: bool = False) -> ModelParams:
    """Gradient of the summed squared error over ``batch = [(history, target), ...]``."""
    if isinstance(operator, str):
        operator = Operator(operator)
    histories = [h for h, _ in batch]
    targets = np.array([t for _, t in batch], dtype=float)
    return loss_and_gradient(params, stats_of(histories), targets, operator, raw_score)[1]


def batch_forward(params: ModelParams, stats, operator: Operator) -> np.ndarray:
    n, S1, M2 = stats
    rp = reparam(params)
    s = np.einsum("ij,bjk,k->bi", rp.A, M2, rp.b) + S1 @ rp.C.T + n[:, None] * rp.dvec
    return operator(s)


def ftrl_equivalence_gap(params: ModelParams, operator: Operator | str, probe_histories) -> tuple[float, float]:
    """Worst-case distance to the nearest ``Operator(c * sum R)`` map.

    The scalar ``c`` is fitted by least squares over the probe set; returns
    ``(gap, c)`` with ``gap = max_h ||forward(h) - Operator(c * sum h)||``.
    """
    if isinstance(operator, str):
        operator = Operator(operator)
    probes = list(probe_histories)
    if not probes:
        raise ValueError("need at least one probe history")
    outputs = np.array([forward(h, params, operator) for h in probes])
    sums = np.array([np.asarray(h, dtype=float).reshape(-1, params.d).sum(axis=0) for h in probes])

    def sse(c):
        return float(((outputs - operator(c * sums)) ** 2).sum())

    scale = max(np.median(np.linalg.norm(sums, axis=1)), 1e-12)
    grid = np.concatenate([-np.logspace(-4, 2, 61)[::-1], [0.0], np.logspace(-4, 2, 61)]) / scale
    vals = [sse(c) for c in grid]
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    c = grid[i]
    if hi > lo:
        res = optimize.minimize_scalar(sse, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12 * max(1.0, abs(c)) + 1e-15})
        if res.fun <= vals[i]:
            c = float(res.x)
    gap = float(np.linalg.norm(outputs - operator(c * sums), axis=1).max())
    return gap, float(c)


# ---------------------------------------------------------------------------
# The model as an online learner


class AttentionPolicy:
    """Runs the model round by round, keeping O(d^2) running statistics.

    In bandit mode the history holds masked reward vectors. ``sigma > 0`` adds
    Gaussian noise to the score before the operator.
    """

    def __init__(self, params: ModelParams, operator: Operator, bandit: bool = False,
                 sigma: float = 0.0, rng: np.random.Generator | None = None):
        self.rp = reparam(params)
        self.operator = operator
        self.bandit = bandit
        self.sigma = sigma
        self.rng = rng
        d = params.d
        self.d = d
        self.quad = np.zeros(d)
        self.lin = np.zeros(d)
        self.n = 0
        self.t = 1
        self._probs = None

    def score(self) -> np.ndarray:
        return self.rp.A @ self.quad + self.rp.C @ self.lin + self.n * self.rp.dvec

    def policy(self) -> np.ndarray:
        s = self.score()
        if self.sigma > 0:
            s = s + self.sigma * self.rng.standard_normal(self.d)
        self._probs = self.operator(s)
        return self._probs

    def select(self, rng: np.random.Generator) -> int:
        p = self._probs if self._probs is not None else self.policy()
        return int(min(np.searchsorted(np.cumsum(p), rng.uniform(), side="right"), self.d - 1))

    def _push(self, vec: np.ndarray) -> None:
        self.quad += vec * (vec @ self.rp.b)
        self.lin += vec
        self.n += 1
        self.t += 1
        self._probs = None

    def observe(self, reward) -> None:
        self._push(np.asarray(reward, dtype=float))

    def observe_bandit(self, action: int, reward: float) -> None:
        masked = np.zeros(self.d)
        masked[action] = reward
        self._push(masked)
