"""Classical online learning and bandit algorithms used as comparators.

Full-information learners expose ``policy()`` and ``observe(reward_vector)``.
Bandit learners expose ``policy()`` (their sampling distribution over arms),
``select(rng)`` and ``observe_bandit(action, reward)``. Deterministic bandit
rules (UCB, greedy) report a one-hot distribution.
"""
from __future__ import annotations

import math

import numpy as np

from .envs import PolicySpace, REWARD_MAX
from .errors import ConfigError


# ---------------------------------------------------------------------------
# Step rules


def ftl_step(cum_reward, policy_space: PolicySpace) -> np.ndarray:
    """Follow-the-leader: best fixed policy for the cumulative reward ``S``."""
    s = np.asarray(cum_reward, dtype=float)
    if policy_space.kind == "simplex":
        out = np.zeros_like(s)
        out[int(np.argmax(s))] = 1.0
        return out
    norm = np.linalg.norm(s)
    if norm == 0.0:
        return np.zeros_like(s)
    return policy_space.radius * s / norm


def ftrl_l2_step(cum_reward, eta: float, radius: float) -> np.ndarray:
    """FTRL with a squared l2 regularizer on the ball: project ``eta * S``."""
    if not eta > 0:
        raise ConfigError(f"eta must be positive, got {eta}")
    x = eta * np.asarray(cum_reward, dtype=float)
    norm = np.linalg.norm(x)
    if norm <= radius:
        return x
    return radius * x / norm


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def hedge_step(cum_reward, eta: float) -> np.ndarray:
    """Exponential weights, ``pi(a) ∝ exp(eta * S(a))``.

    This is FTRL with negative-entropy regularization on the simplex.
    """
    return softmax(eta * np.asarray(cum_reward, dtype=float))


def hedge_eta(d: int, t: int) -> float:
    """Anytime stepsize ``sqrt(2 log d / t)``."""
    return math.sqrt(2.0 * math.log(d) / t)


def ucb_scores(means, counts, t: int, scale: float = 1.0) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    means = np.asarray(means, dtype=float)
    scores = np.full(counts.shape, np.inf)
    seen = counts > 0
    bonus = scale * np.sqrt(2.0 * math.log(max(t, 1)) / counts[seen])
    scores[seen] = means[seen] + bonus
    return scores


def ucb_step(means, counts, t: int, scale: float = 1.0) -> int:
    if t < 1:
        raise ValueError("t must be >= 1")
    return int(np.argmax(ucb_scores(means, counts, t, scale)))


def exp3_params(K: int, T: int) -> tuple[float, float]:
    """Learning rate and exploration rate ``(eta, gamma)`` for EXP3."""
    if K < 2 or T < 1:
        raise ConfigError(f"EXP3 needs K >= 2 and T >= 1, got K={K}, T={T}")
    eta = math.sqrt(2.0 * math.log(K) / (K * T))
    return eta, min(1.0, eta * K / 2.0)


def exp3_distribution(weights, gamma: float) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    return (1.0 - gamma) * w / w.sum() + gamma / w.shape[0]


def importance_weighted(reward: float, action: int, probs) -> np.ndarray:
    """``R~(a) = R / p(a) * 1{a = action}``."""
    est = np.zeros(len(probs))
    est[action] = reward / probs[action]
    return est


def rexp3_batch_length(K: int, T: int, variation: float) -> int:
    """Restart period ``ceil((K log K / V_T)^(1/3) T^(2/3))``, at least 1."""
    if not variation > 0:
        raise ConfigError(f"variation budget must be positive, got {variation}")
    return max(1, math.ceil((K * math.log(K) / variation) ** (1.0 / 3.0) * T ** (2.0 / 3.0)))


def rexp3_gamma(K: int, batch: int) -> float:
    return min(1.0, math.sqrt(K * math.log(K) / ((math.e - 1.0) * batch)))


# ---------------------------------------------------------------------------
# Learners


class FullInfoLearner:
    bandit = False

    def __init__(self, d: int, policy_space: PolicySpace | None = None):
        self.d = d
        self.policy_space = policy_space or PolicySpace()
        self.cum_reward = np.zeros(d)
        self.t = 1

    def observe(self, reward) -> None:
        self.cum_reward += reward
        self.t += 1


class FTL(FullInfoLearner):
    def policy(self) -> np.ndarray:
        return ftl_step(self.cum_reward, self.policy_space)


class FTRL(FullInfoLearner):
    """FTRL with an anytime or fixed stepsize.

    On the simplex the regularizer is the negative entropy (so this is Hedge);
    on the ball it is the squared l2 norm. ``horizon`` fixes the stepsize to
    ``sqrt(2 log d / horizon)``; otherwise ``eta`` (if given) or the anytime
    schedule ``sqrt(2 log d / t)`` is used.
    """

    def __init__(self, d: int, policy_space: PolicySpace | None = None, eta: float | None = None,
                 horizon: int | None = None):
        super().__init__(d, policy_space)
        if horizon is not None:
            eta = hedge_eta(d, horizon)
        self.eta = eta

    def policy(self) -> np.ndarray:
        eta = self.eta if self.eta is not None else hedge_eta(self.d, self.t)
        if self.policy_space.kind == "simplex":
            return hedge_step(self.cum_reward, eta)
        return ftrl_l2_step(self.cum_reward, eta, self.policy_space.radius)


class Hedge(FTRL):
    def __init__(self, d: int, policy_space: PolicySpace | None = None, eta: float | None = None,
                 horizon: int | None = None):
        super().__init__(d, PolicySpace("simplex"), eta=eta, horizon=horizon)


class UniformFull(FullInfoLearner):
    def policy(self) -> np.ndarray:
        if self.policy_space.kind == "ball":
            return np.zeros(self.d)
        return np.full(self.d, 1.0 / self.d)


class BanditLearner:
    bandit = True

    def __init__(self, d: int, horizon: int):
        self.d = d
        self.horizon = horizon
        self.t = 1

    def select(self, rng: np.random.Generator) -> int:
        p = self.policy()
        return int(min(np.searchsorted(np.cumsum(p), rng.uniform(), side="right"), self.d - 1))

    def observe_bandit(self, action: int, reward: float) -> None:
        self.t += 1


class _CountingLearner(BanditLearner):
    def __init__(self, d: int, horizon: int):
        super().__init__(d, horizon)
        self.counts = np.zeros(d)
        self.means = np.zeros(d)

    def observe_bandit(self, action: int, reward: float) -> None:
        self.counts[action] += 1
        self.means[action] += (reward - self.means[action]) / self.counts[action]
        self.t += 1

    def _one_hot(self, a: int) -> np.ndarray:
        p = np.zeros(self.d)
        p[a] = 1.0
        return p


class UCB(_CountingLearner):
    def __init__(self, d: int, horizon: int, scale: float = 1.0):
        super().__init__(d, horizon)
        self.scale = scale

    def choose(self) -> int:
        return ucb_step(self.means, self.counts, self.t, self.scale)

    def policy(self) -> np.ndarray:
        return self._one_hot(self.choose())


class Greedy(_CountingLearner):
    """Pull every arm once in index order, then the best empirical mean."""

    def choose(self) -> int:
        unseen = np.flatnonzero(self.counts == 0)
        if unseen.size:
            return int(unseen[0])
        return int(np.argmax(self.means))

    def policy(self) -> np.ndarray:
        return self._one_hot(self.choose())


class UniformBandit(BanditLearner):
    def policy(self) -> np.ndarray:
        return np.full(self.d, 1.0 / self.d)


class EXP3(BanditLearner):
    """EXP3 on rewards rescaled into [0, 1] by ``reward_scale``.

    Weights are stored in log space; the sampling distribution is computed
    with a max shift, so long horizons cannot overflow.
    """

    def __init__(self, d: int, horizon: int, reward_scale: float = REWARD_MAX):
        super().__init__(d, horizon)
        self.eta, self.gamma = exp3_params(d, horizon)
        self.reward_scale = reward_scale
        self.log_weights = np.zeros(d)
        self._probs = None

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def policy(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        self._probs = exp3_distribution(w, self.gamma)
        return self._probs

    def _update_rate(self) -> float:
        return self.eta

    def observe_bandit(self, action: int, reward: float) -> None:
        probs = self._probs if self._probs is not None else self.policy()
        est = importance_weighted(reward / self.reward_scale, action, probs)
        self.log_weights = self.log_weights + self._update_rate() * est
        self._probs = None
        self.t += 1


class Rexp3(EXP3):
    """EXP3 restarted every ``batch`` rounds, sized from the variation budget."""

    def __init__(self, d: int, horizon: int, variation: float, reward_scale: float = REWARD_MAX):
        BanditLearner.__init__(self, d, horizon)
        self.batch = rexp3_batch_length(d, horizon, variation)
        self.gamma = rexp3_gamma(d, self.batch)
        self.reward_scale = reward_scale
        self.log_weights = np.zeros(d)
        self._probs = None

    def _update_rate(self) -> float:
        return self.gamma / self.d

    def observe_bandit(self, action: int, reward: float) -> None:
        super().observe_bandit(action, reward)
        # self.t is now the next round; reset at the start of every batch
        if (self.t - 1) % self.batch == 0:
            self.log_weights = np.zeros(self.d)


FULL_INFO = {
    "ftl": FTL,
    "ftrl_l2": FTRL,
    "hedge": Hedge,
    "uniform": UniformFull,
}
BANDIT = {
    "ucb": UCB,
    "exp3": EXP3,
    "rexp3": Rexp3,
    "greedy": Greedy,
    "uniform": UniformBandit,
}
ALGORITHMS = ("ftl", "ftrl_l2", "hedge", "ucb", "exp3", "rexp3", "greedy", "uniform")


def make_learner(name: str, env_kind: str, d: int, horizon: int,
                 policy_space: PolicySpace | None = None, **options):
    """Construct a learner by identifier for the given environment kind.

    ``ftrl_l2`` and ``hedge`` accept ``eta`` or ``eta_horizon`` (fixed
    ``sqrt(2 log d / eta_horizon)``). ``rexp3`` needs ``variation``.
    """
    if name not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
    if env_kind == "fol":
        if name not in FULL_INFO:
            raise ConfigError(f"{name!r} is a bandit algorithm and cannot run in fol")
        cls = FULL_INFO[name]
        if name in ("ftrl_l2", "hedge"):
            if name == "ftrl_l2" and (policy_space is None or policy_space.kind != "ball"):
                raise ConfigError("ftrl_l2 needs the ball policy space")
            return cls(d, policy_space, eta=options.get("eta"), horizon=options.get("eta_horizon"))
        return cls(d, policy_space)
    if name not in BANDIT:
        raise ConfigError(f"{name!r} is a full-information algorithm and cannot run in {env_kind}")
    if name == "ucb":
        return UCB(d, horizon, scale=options.get("ucb_scale", 1.0))
    if name == "rexp3":
        if "variation" not in options:
            raise ConfigError("rexp3 needs a variation budget")
        return Rexp3(d, horizon, options["variation"])
    return BANDIT[name](d, horizon)
