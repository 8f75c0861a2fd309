"""Online decision-making environments and reward generation processes.

Three environments are supported: full-information online learning (``"fol"``),
stochastic multi-armed bandits (``"mab"``) and non-stationary bandits
(``"nsmab"``). Rewards come from one of nine generation processes. Rounds are
1-based everywhere, so ``t`` in this module always means the round number that
appears in the reward formulas.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError

REWARD_MAX = 10.0

PROCESS_KINDS = (
    "uniform",
    "gaussian",
    "gamma",
    "bernoulli",
    "sine",
    "alternating",
    "noisy_alternating",
    "adaptive",
    "gradual",
)
STATIONARY_STOCHASTIC = ("uniform", "gaussian", "gamma", "bernoulli")
ENV_KINDS = ("fol", "mab", "nsmab")

# Named sub-streams of a scenario seed. Changing how many perturbations are drawn
# never shifts the environment's own randomness.
STREAM_PARAMS = 0
STREAM_REWARDS = 1
STREAM_PERTURB = 2
STREAM_ACTIONS = 3
STREAM_MEAN_MC = 4

_GAUSSIAN_MIX_STD = np.sqrt([1.0, 3.0, 10.0])


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the sub-stream ``keys`` of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit integer seed for the sub-stream ``keys`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def argmax_lowest(x: np.ndarray) -> int:
    """Argmax with lowest-index tie-breaking (``np.argmax`` already does this)."""
    return int(np.argmax(np.asarray(x)))


@dataclass(frozen=True)
class PolicySpace:
    kind: str = "simplex"
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("simplex", "ball"):
            raise ConfigError(f"policy_space.kind must be 'simplex' or 'ball', got {self.kind!r}")
        if self.kind == "ball" and not self.radius > 0:
            raise ConfigError(f"policy_space.radius must be positive, got {self.radius}")

    def contains(self, policy, tol: float = 1e-9) -> bool:
        p = np.asarray(policy, dtype=float)
        if not np.all(np.isfinite(p)):
            return False
        if self.kind == "simplex":
            return bool(np.all(p >= -tol) and abs(p.sum() - 1.0) <= tol)
        return bool(np.linalg.norm(p) <= self.radius + tol)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "radius": self.radius}

    @classmethod
    def from_dict(cls, data: dict) -> "PolicySpace":
        return cls(kind=data.get("kind", "simplex"), radius=float(data.get("radius", 1.0)))


@dataclass
class ProcessParams:
    """Sampled parameters of one reward generation process.

    ``values`` holds the per-kind arrays:

    ========================  ==============================================
    uniform                   ``low``, ``high`` (per-arm interval)
    gaussian                  ``mu``
    gamma                     ``shape``, ``scale``
    bernoulli                 ``levels`` (x, y), ``probs``
    sine                      ``freq``, ``phase``
    alternating / noisy       ``shift``
    adaptive                  (none)
    gradual                   ``mean`` (current r_t), ``round`` (its t)
    ========================  ==============================================
    """

    kind: str
    d: int
    values: dict = field(default_factory=dict)

    def copy(self) -> "ProcessParams":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.values.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, kind: str, d: int, data: dict) -> "ProcessParams":
        values = {}
        for k, v in data.items():
            values[k] = np.asarray(v, dtype=float) if isinstance(v, list) else v
        return cls(kind=kind, d=d, values=values)


def _check_kind(kind: str) -> None:
    if kind not in PROCESS_KINDS:
        raise ConfigError(f"unknown reward process {kind!r}; expected one of {PROCESS_KINDS}")


def sample_process_params(kind: str, d: int, rng: np.random.Generator) -> ProcessParams:
    """Draw the parameters of a reward process for ``d`` actions."""
    _check_kind(kind)
    if d < 2:
        raise ConfigError(f"need at least 2 actions, got d={d}")
    if kind == "uniform":
        x = rng.uniform(0.0, 10.0, size=d)
        y = rng.uniform(0.0, 10.0, size=d)
        values = {"low": np.minimum(x, y), "high": np.maximum(x, y)}
    elif kind == "gaussian":
        values = {"mu": rng.normal(5.0, 1.0, size=d)}
    elif kind == "gamma":
        values = {"shape": rng.uniform(0.0, 10.0, size=d), "scale": rng.uniform(0.0, 2.0, size=d)}
    elif kind == "bernoulli":
        values = {"levels": rng.uniform(0.0, 10.0, size=2), "probs": rng.uniform(0.0, 1.0, size=d)}
    elif kind == "sine":
        values = {"freq": rng.uniform(0.0, 10.0, size=d), "phase": rng.uniform(0.0, 10.0, size=d)}
    elif kind in ("alternating", "noisy_alternating"):
        values = {"shift": int(rng.integers(0, d))}
    elif kind == "adaptive":
        values = {}
    else:  # gradual
        values = {"mean": rng.uniform(0.0, 10.0, size=d), "round": 1}
    return ProcessParams(kind=kind, d=d, values=values)


def _gaussian_mixture(mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    std = _GAUSSIAN_MIX_STD[rng.integers(0, 3)]
    return np.clip(mean + std * rng.standard_normal(mean.shape[0]), 0.0, REWARD_MAX)


def next_reward(params: ProcessParams, t: int, rng: np.random.Generator, policy=None) -> np.ndarray:
    """Reward vector ``R_t`` of round ``t`` (1-based).

    ``policy`` is the policy committed at round ``t`` and is required by, and
    only by, the adaptive process. The gradual-variation process advances its
    stored mean to ``r_{t+1}`` as a side effect.
    """
    if t < 1:
        raise ValueError(f"rounds are 1-based, got t={t}")
    kind, d, v = params.kind, params.d, params.values
    if kind == "adaptive":
        if policy is None:
            raise ValueError("the adaptive process needs the current policy")
        r = np.full(d, REWARD_MAX)
        r[argmax_lowest(policy)] = 0.0
        return r
    if kind == "uniform":
        return rng.uniform(v["low"], v["high"])
    if kind == "gaussian":
        return _gaussian_mixture(v["mu"], rng)
    if kind == "gamma":
        return np.clip(rng.gamma(v["shape"], v["scale"]), 0.0, REWARD_MAX)
    if kind == "bernoulli":
        hi, lo = max(v["levels"]), min(v["levels"])
        return np.where(rng.uniform(size=d) < v["probs"], hi, lo)
    if kind == "sine":
        return 5.0 * (1.0 + np.sin(v["freq"] * t + v["phase"]))
    if kind == "alternating":
        r = np.zeros(d)
        r[(t + v["shift"]) % d] = REWARD_MAX
        return r
    if kind == "noisy_alternating":
        r = rng.uniform(9.0, 10.0, size=d)
        r[(t + v["shift"]) % d] = min(25.0 / (t + 1), REWARD_MAX)
        return r
    # gradual
    if v["round"] != t:
        raise ValueError(f"gradual process holds r_{v['round']}, asked for round {t}")
    r = _gaussian_mixture(v["mean"], rng)
    step = 1.0 / np.sqrt(t)
    v["mean"] = v["mean"] + rng.uniform(-step, step, size=d)
    v["round"] = t + 1
    return r


def mean_reward(params: ProcessParams, t: int = 1, mode: str = "analytic_unclipped",
                n_samples: int = 100_000, seed: int = 0) -> np.ndarray:
    """Mean reward vector of a stochastic process at round ``t``.

    ``analytic_unclipped`` is the mean before clipping to [0, 10];
    ``monte_carlo_clipped`` averages ``n_samples`` clipped draws from a generator
    derived from ``seed`` and ``t`` (so it is reproducible).
    """
    kind, v = params.kind, params.values
    if kind not in STATIONARY_STOCHASTIC and kind != "gradual":
        raise ConfigError(f"mean reward is undefined for the {kind!r} process")
    if kind == "gradual" and v["round"] != t:
        raise ValueError(f"gradual process holds r_{v['round']}, asked for round {t}")
    if mode == "analytic_unclipped":
        if kind == "uniform":
            return 0.5 * (v["low"] + v["high"])
        if kind == "gaussian":
            return np.array(v["mu"], dtype=float)
        if kind == "gamma":
            return v["shape"] * v["scale"]
        if kind == "bernoulli":
            hi, lo = max(v["levels"]), min(v["levels"])
            return v["probs"] * hi + (1.0 - v["probs"]) * lo
        return np.array(v["mean"], dtype=float)
    if mode != "monte_carlo_clipped":
        raise ConfigError(f"unknown mean mode {mode!r}")
    rng = derive_rng(seed, STREAM_MEAN_MC, t)
    d = params.d
    if kind == "uniform":
        draws = rng.uniform(v["low"], v["high"], size=(n_samples, d))
    elif kind == "gamma":
        draws = np.clip(rng.gamma(v["shape"], v["scale"], size=(n_samples, d)), 0.0, REWARD_MAX)
    elif kind == "bernoulli":
        hi, lo = max(v["levels"]), min(v["levels"])
        draws = np.where(rng.uniform(size=(n_samples, d)) < v["probs"], hi, lo)
    else:
        centre = v["mu"] if kind == "gaussian" else v["mean"]
        std = _GAUSSIAN_MIX_STD[rng.integers(0, 3, size=n_samples)][:, None]
        draws = np.clip(centre + std * rng.standard_normal((n_samples, d)), 0.0, REWARD_MAX)
    return draws.mean(axis=0)


def bandit_feedback(reward, action: int) -> tuple[float, np.ndarray]:
    """Scalar reward of ``action`` and the masked vector ``1(a = action) R(a)``."""
    reward = np.asarray(reward, dtype=float)
    if not 0 <= action < reward.shape[0]:
        raise ValueError(f"action {action} out of range for d={reward.shape[0]}")
    masked = np.zeros_like(reward)
    masked[action] = reward[action]
    return float(reward[action]), masked


def variation_budget(means) -> float:
    """Total variation ``sum_t ||r_t - r_{t-1}||_inf`` of a mean sequence."""
    means = np.asarray(means, dtype=float)
    if means.ndim != 2 or means.shape[0] < 2:
        raise ValueError("variation budget needs at least two mean vectors")
    return float(np.abs(np.diff(means, axis=0)).max(axis=1).sum())


@dataclass
class Scenario:
    """One sampled task instance."""

    env_kind: str
    d: int
    horizon: int
    process: ProcessParams
    seed: int
    policy_space: PolicySpace = field(default_factory=PolicySpace)

    def __post_init__(self):
        if self.env_kind not in ENV_KINDS:
            raise ConfigError(f"env_kind must be one of {ENV_KINDS}, got {self.env_kind!r}")
        if self.d < 2:
            raise ConfigError(f"d must be >= 2, got {self.d}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.process.d != self.d:
            raise ConfigError("process dimension does not match d")
        if self.env_kind in ("mab", "nsmab") and self.policy_space.kind != "simplex":
            raise ConfigError("bandit environments need the simplex policy space")
        if self.env_kind == "mab" and self.process.kind not in STATIONARY_STOCHASTIC:
            raise ConfigError(f"mab needs a stationary stochastic process, got {self.process.kind!r}")
        if self.env_kind == "nsmab" and self.process.kind != "gradual":
            raise ConfigError(f"nsmab needs the gradual process, got {self.process.kind!r}")

    @classmethod
    def sample(cls, env_kind: str, process_kind: str, d: int, horizon: int, seed: int,
               policy_space: PolicySpace | None = None) -> "Scenario":
        params = sample_process_params(process_kind, d, derive_rng(seed, STREAM_PARAMS))
        return cls(env_kind=env_kind, d=d, horizon=horizon, process=params, seed=int(seed),
                   policy_space=policy_space or PolicySpace())

    @property
    def policy_dependent(self) -> bool:
        return self.process.kind == "adaptive"

    def stream(self) -> "RewardStream":
        return RewardStream(self)

    def rewards(self) -> tuple[np.ndarray, np.ndarray | None]:
        """Pre-generate the whole ``(T, d)`` reward stream and, for stochastic
        processes, the ``(T, d)`` analytic mean sequence."""
        if self.policy_dependent:
            raise ValueError("the adaptive process cannot be pre-generated")
        stream = self.stream()
        rewards = np.empty((self.horizon, self.d))
        means = np.empty((self.horizon, self.d)) if stream.has_mean else None
        for t in range(self.horizon):
            if means is not None:
                means[t] = stream.mean()
            rewards[t] = stream.next()
        return rewards, means

    def to_dict(self) -> dict:
        return {
            "env_kind": self.env_kind,
            "d": self.d,
            "T": self.horizon,
            "policy_space": self.policy_space.to_dict(),
            "process_kind": self.process.kind,
            "process_params": self.process.to_dict(),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Scenario":
        try:
            d = int(data["d"])
            process = ProcessParams.from_dict(data["process_kind"], d, data["process_params"])
            return cls(env_kind=data["env_kind"], d=d, horizon=int(data["T"]), process=process,
                       seed=int(data["seed"]), policy_space=PolicySpace.from_dict(data.get("policy_space", {})))
        except KeyError as exc:
            raise ConfigError(f"scenario document is missing field {exc.args[0]!r}") from None

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))


class RewardStream:
    """Round-by-round reward generator for a scenario.

    Owns a private copy of the process parameters, so the scenario itself is
    never mutated and can be replayed.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.params = scenario.process.copy()
        self.rng = derive_rng(scenario.seed, STREAM_REWARDS)
        self.t = 1

    @property
    def has_mean(self) -> bool:
        return self.params.kind in STATIONARY_STOCHASTIC or self.params.kind == "gradual"

    def mean(self, mode: str = "analytic_unclipped") -> np.ndarray:
        return mean_reward(self.params, self.t, mode, seed=self.scenario.seed)

    def next(self, policy=None) -> np.ndarray:
        r = next_reward(self.params, self.t, self.rng, policy)
        self.t += 1
        return r
