"""Regret curves, growth-rate fits, exploration metrics and the one-sided KS test."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .envs import PolicySpace
from .errors import InsufficientDataError


@dataclass
class RegretCurve:
    values: np.ndarray
    env_kind: str = "fol"
    comparator_mode: str = "prefix"

    def __len__(self):
        return len(self.values)

    @property
    def final(self) -> float:
        return float(self.values[-1])


@dataclass
class GrowthFit:
    beta_hat: float
    alpha_hat: float
    p_reg: float
    points_used: int

    def to_dict(self) -> dict:
        return asdict(self)


def _best_value(cum_reward: np.ndarray, policy_space: PolicySpace) -> np.ndarray:
    if policy_space.kind == "simplex":
        return cum_reward.max(axis=-1)
    return policy_space.radius * np.linalg.norm(cum_reward, axis=-1)


def _best_policy(cum_reward: np.ndarray, policy_space: PolicySpace) -> np.ndarray:
    if policy_space.kind == "simplex":
        out = np.zeros_like(cum_reward)
        out[np.argmax(cum_reward)] = 1.0
        return out
    norm = np.linalg.norm(cum_reward)
    return np.zeros_like(cum_reward) if norm == 0 else policy_space.radius * cum_reward / norm


def fol_regret(rewards, policies, policy_space: PolicySpace | None = None,
               comparator: str = "prefix") -> RegretCurve:
    """Full-information regret at every round.

    ``prefix`` compares against the best fixed policy for the first ``t``
    rounds; ``final`` fixes the comparator to the best policy for the whole
    stream. Both agree at ``t = T``.
    """
    policy_space = policy_space or PolicySpace()
    rewards = np.asarray(rewards, dtype=float)
    policies = np.asarray(policies, dtype=float)
    if rewards.shape != policies.shape:
        raise ValueError(f"rewards {rewards.shape} and policies {policies.shape} differ in shape")
    earned = np.cumsum(np.einsum("td,td->t", rewards, policies))
    cum = np.cumsum(rewards, axis=0)
    if comparator == "prefix":
        best = _best_value(cum, policy_space)
    elif comparator == "final":
        best = cum @ _best_policy(cum[-1], policy_space)
    else:
        raise ValueError(f"unknown comparator {comparator!r}")
    return RegretCurve(best - earned, "fol", comparator)


def fol_regret_batch(rewards, policies, policy_space: PolicySpace) -> np.ndarray:
    """Prefix-comparator regret for a batch ``(..., T, d)``; returns ``(..., T)``."""
    earned = np.cumsum(np.einsum("...td,...td->...t", rewards, policies), axis=-1)
    return _best_value(np.cumsum(rewards, axis=-2), policy_space) - earned


def mab_expected_regret(means, policies) -> RegretCurve:
    means = np.asarray(means, dtype=float)
    policies = np.asarray(policies, dtype=float)
    t = np.arange(1, policies.shape[0] + 1)
    return RegretCurve(t * means.max() - np.cumsum(policies @ means), "mab", "expected")


def mab_realized_regret(means, actions, sampled_rewards) -> RegretCurve:
    """``t * max r - sum R_tau(a_tau)``; rewards are either the chosen scalars
    ``(T,)`` or the full sampled vectors ``(T, d)``."""
    means = np.asarray(means, dtype=float)
    actions = np.asarray(actions, dtype=int)
    sampled = np.asarray(sampled_rewards, dtype=float)
    if sampled.ndim == 2:
        sampled = sampled[np.arange(len(actions)), actions]
    if sampled.shape[0] != actions.shape[0]:
        raise ValueError("actions and rewards are not aligned")
    t = np.arange(1, len(actions) + 1)
    return RegretCurve(t * means.max() - np.cumsum(sampled), "mab", "realized")


def dynamic_regret(mean_sequence, policies) -> RegretCurve:
    means = np.asarray(mean_sequence, dtype=float)
    policies = np.asarray(policies, dtype=float)
    if means.shape != policies.shape:
        raise ValueError("mean sequence and policies differ in shape")
    gap = means.max(axis=1) - np.einsum("td,td->t", means, policies)
    return RegretCurve(np.cumsum(gap), "nsmab", "dynamic")


def fit_regret_growth(curve, eps: float = 1e-6) -> GrowthFit:
    """Least-squares fit of ``log Regret(t) = beta log t + alpha``.

    Rounds with regret ``<= eps`` are dropped. ``p_reg`` is the two-sided
    p-value of the slope under the usual t-test.
    """
    values = np.asarray(getattr(curve, "values", curve), dtype=float)
    t = np.arange(1, values.shape[0] + 1)
    keep = values > eps
    if keep.sum() < 3:
        raise InsufficientDataError(f"only {int(keep.sum())} rounds with positive regret; need 3")
    x, y = np.log(t[keep]), np.log(values[keep])
    res = stats.linregress(x, y)
    p = float(res.pvalue) if np.isfinite(res.pvalue) else 0.0
    return GrowthFit(float(res.slope), float(res.intercept), p, int(keep.sum()))


def suff_fail(actions, best_arm) -> np.ndarray:
    """``SuffFail(t, replicate)`` for every ``t``: shape ``(n_rep, T)``.

    ``best_arm`` is a scalar, one arm per replicate ``(n_rep,)``, or one per
    replicate and round ``(n_rep, T)``.
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=int))
    best = np.asarray(best_arm, dtype=int)
    if best.ndim == 1:
        best = best[:, None]
    hit = actions == best
    # hit anywhere in [t, T]: reverse cumulative OR
    hit_from = np.flip(np.cumsum(np.flip(hit, axis=1), axis=1), axis=1) > 0
    return ~hit_from


def suff_fail_freq(actions, best_arm, t: int) -> float:
    """Fraction of replicates that never pick the best arm in rounds ``t..T``."""
    actions = np.atleast_2d(actions)
    if not 1 <= t <= actions.shape[1]:
        raise ValueError(f"t={t} outside 1..{actions.shape[1]}")
    return float(suff_fail(actions, best_arm)[:, t - 1].mean())


def suff_fail_freq_series(actions, best_arm) -> np.ndarray:
    return suff_fail(actions, best_arm).mean(axis=0)


def min_frac_series(actions, d: int) -> np.ndarray:
    """``d * MinFrac(t)`` for every ``t``."""
    actions = np.atleast_2d(np.asarray(actions, dtype=int))
    counts = np.cumsum(actions[:, :, None] == np.arange(d), axis=1)
    t = np.arange(1, actions.shape[1] + 1)
    return d * (counts.min(axis=2) / t).mean(axis=0)


def min_frac(actions, t: int, d: int) -> float:
    if t < 1:
        raise ValueError("t must be >= 1")
    return float(min_frac_series(np.atleast_2d(actions)[:, :t], d)[t - 1])


def _ecdf(sample: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.searchsorted(np.sort(sample), x, side="right") / sample.shape[0]


def ks_one_sided(sample_a, sample_b) -> tuple[float, float]:
    """One-sided two-sample KS test that ``sample_a`` is stochastically smaller.

    Returns ``D = sup_x (F_a(x) - F_b(x))`` and the asymptotic p-value
    ``exp(-2 D^2 m n / (m + n))``.
    """
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("KS test needs two nonempty samples")
    grid = np.concatenate([a, b])
    D = float(max(0.0, np.max(_ecdf(a, grid) - _ecdf(b, grid))))
    m, n = a.size, b.size
    p = math.exp(-2.0 * D * D * m * n / (m + n))
    return D, min(1.0, max(0.0, p))


def ks_one_sided_exact(sample_a, sample_b) -> tuple[float, float]:
    """Exact permutation p-value of the one-sided statistic (small samples only)."""
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    m, n = a.size, b.size
    if m + n > 20:
        raise ValueError("exact enumeration is limited to m + n <= 20")
    D, _ = ks_one_sided(a, b)
    pooled = np.concatenate([a, b])
    hits = total = 0
    for idx in itertools.combinations(range(m + n), m):
        mask = np.zeros(m + n, dtype=bool)
        mask[list(idx)] = True
        d_perm, _ = ks_one_sided(pooled[mask], pooled[~mask])
        hits += d_perm >= D - 1e-12
        total += 1
    return D, hits / total
