"""Play learners against scenarios and score the resulting episodes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .envs import STREAM_ACTIONS, Scenario, derive_rng, variation_budget


@dataclass
class Episode:
    scenario: Scenario
    policies: np.ndarray            # (T, d) policy or sampling distribution per round
    rewards: np.ndarray             # (T, d) full sampled reward vectors
    actions: np.ndarray | None      # (T,) bandit actions
    means: np.ndarray | None        # (T, d) mean reward per round, when defined

    def regret(self, realized: bool = False) -> np.ndarray:
        env = self.scenario.env_kind
        if env == "fol":
            return metrics.fol_regret(self.rewards, self.policies, self.scenario.policy_space).values
        if env == "mab":
            if realized:
                return metrics.mab_realized_regret(self.means[0], self.actions, self.rewards).values
            return metrics.mab_expected_regret(self.means[0], self.policies).values
        return metrics.dynamic_regret(self.means, self.policies).values

    def best_arms(self) -> np.ndarray:
        return self.means.argmax(axis=1)


def run_episode(scenario: Scenario, learner, mean_mode: str = "analytic_unclipped") -> Episode:
    """Play ``learner`` for the scenario's horizon.

    Full-information learners see every reward vector; bandit learners draw an
    action from their own distribution (using the scenario's action stream)
    and observe only that arm.
    """
    stream = scenario.stream()
    T, d = scenario.horizon, scenario.d
    policies = np.empty((T, d))
    rewards = np.empty((T, d))
    means = np.empty((T, d)) if stream.has_mean else None
    if scenario.env_kind == "fol":
        for t in range(T):
            if means is not None:
                means[t] = stream.mean(mean_mode)
            policies[t] = learner.policy()
            rewards[t] = stream.next(policies[t])
            learner.observe(rewards[t])
        return Episode(scenario, policies, rewards, None, means)
    action_rng = derive_rng(scenario.seed, STREAM_ACTIONS)
    actions = np.empty(T, dtype=np.int64)
    for t in range(T):
        means[t] = stream.mean(mean_mode)
        policies[t] = learner.policy()
        actions[t] = learner.select(action_rng)
        rewards[t] = stream.next()
        learner.observe_bandit(int(actions[t]), float(rewards[t, actions[t]]))
    return Episode(scenario, policies, rewards, actions, means)


def scenario_variation(scenario: Scenario) -> float:
    """Variation budget of the scenario's own mean trajectory."""
    _, means = scenario.rewards()
    return variation_budget(means)


@dataclass
class EvalResult:
    """Per-replicate regret curves plus bandit actions for one learner."""

    curves: np.ndarray              # (n_rep, T)
    actions: np.ndarray | None      # (n_rep, T)
    best_arms: np.ndarray | None    # (n_rep, T)

    @property
    def mean_curve(self) -> np.ndarray:
        return self.curves.mean(axis=0)

    def growth(self) -> metrics.GrowthFit:
        return metrics.fit_regret_growth(self.mean_curve)


def evaluate(scenarios, make_learner, realized: bool = False,
             mean_mode: str = "analytic_unclipped") -> EvalResult:
    """Run a fresh learner from ``make_learner(scenario)`` on every scenario."""
    curves, actions, best = [], [], []
    for sc in scenarios:
        ep = run_episode(sc, make_learner(sc), mean_mode)
        curves.append(ep.regret(realized))
        if ep.actions is not None:
            actions.append(ep.actions)
            best.append(ep.best_arms())
    return EvalResult(np.array(curves), np.array(actions) if actions else None,
                      np.array(best) if best else None)
