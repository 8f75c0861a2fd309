import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regretlab import metrics
from regretlab.baselines import (EXP3, FTL, UCB, Greedy, Hedge, Rexp3, exp3_distribution, exp3_params,
                                 ftl_step, ftrl_l2_step, hedge_eta, hedge_step, importance_weighted,
                                 make_learner, rexp3_batch_length, rexp3_gamma, ucb_scores, ucb_step)
from regretlab.envs import PolicySpace, Scenario
from regretlab.errors import ConfigError
from regretlab.simulate import run_episode

BALL = PolicySpace("ball", 1.0)


def test_ftl_examples():
    assert np.array_equal(ftl_step([3, 1, 2], PolicySpace()), [1, 0, 0])
    assert np.array_equal(ftl_step([0, 0], BALL), [0, 0])
    assert np.allclose(ftl_step([3, 4], BALL), [0.6, 0.8])


def test_ftrl_l2_examples():
    assert np.allclose(ftrl_l2_step([0.1, 0.2], 1.0, 1.0), [0.1, 0.2])
    assert np.allclose(ftrl_l2_step([0, 3], 1.0, 1.0), [0, 1])
    assert np.array_equal(ftrl_l2_step([0, 0, 0], 0.5, 1.0), [0, 0, 0])
    with pytest.raises(ConfigError):
        ftrl_l2_step([1, 1], 0.0, 1.0)


def test_hedge_examples():
    assert np.allclose(hedge_step([0, 0, 0], 0.3), 1 / 3)
    e = math.e
    assert np.allclose(hedge_step([1, 0], 1.0), [e / (e + 1), 1 / (e + 1)])
    assert hedge_eta(3, 4) == pytest.approx(math.sqrt(2 * math.log(3) / 4))


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=5), st.floats(-100, 100), st.floats(0.01, 2))
def test_hedge_shift_invariant(s, c, eta):
    s = np.asarray(s)
    assert np.allclose(hedge_step(s, eta), hedge_step(s + c, eta), atol=1e-12)


def test_ucb_examples():
    assert ucb_step(np.zeros(3), np.zeros(3), 1) == 0
    scores = ucb_scores(np.array([0.0, 5.0, 4.0]), np.array([0, 2, 1]), 3)
    assert scores[0] == np.inf
    assert scores[1] == pytest.approx(5 + math.sqrt(2 * math.log(3) / 2), abs=1e-3)
    assert scores[1] == pytest.approx(6.048, abs=1e-3) and scores[2] == pytest.approx(5.482, abs=1e-3)
    assert ucb_step(np.array([5.0, 4.0]), np.array([2, 1]), 3) == 0


def test_ucb_converges_to_rewarded_arm():
    ucb = UCB(3, 2000)
    rng = np.random.default_rng(0)
    picks = []
    for _ in range(2000):
        ucb.policy()
        a = ucb.select(rng)
        picks.append(a)
        ucb.observe_bandit(a, 10.0 if a == 2 else 0.0)
    picks = np.array(picks)
    assert (picks[:500] == 2).mean() < (picks[-500:] == 2).mean()
    assert (picks[-500:] == 2).mean() > 0.95


def test_ucb_counts_sum_to_rounds():
    ucb = UCB(4, 50)
    rng = np.random.default_rng(1)
    for t in range(1, 31):
        a = ucb.select(rng)
        ucb.observe_bandit(a, float(rng.uniform(0, 10)))
        assert ucb.counts.sum() == t and np.all(ucb.counts >= 0)


def test_exp3_parameters():
    eta, gamma = exp3_params(3, 100)
    assert eta == pytest.approx(math.sqrt(2 * math.log(3) / 300)) and eta == pytest.approx(0.08558, abs=1e-5)
    assert gamma == pytest.approx(min(1.0, eta * 3 / 2))
    with pytest.raises(ConfigError):
        exp3_params(1, 100)
    with pytest.raises(ConfigError):
        exp3_params(3, 0)


def test_exp3_uniform_when_gamma_one():
    assert np.allclose(exp3_distribution(np.array([1.0, 5.0, 100.0]), 1.0), 1 / 3)


def test_exp3_unchosen_weights_unchanged():
    learner = EXP3(3, 100)
    rng = np.random.default_rng(0)
    learner.policy()
    a = learner.select(rng)
    before = learner.weights.copy()
    learner.observe_bandit(a, 7.0)
    after = learner.weights
    others = [i for i in range(3) if i != a]
    assert np.array_equal(before[others], after[others])
    assert after[a] > before[a]
    assert np.all(after > 0)


def test_importance_weighted_unbiased():
    rng = np.random.default_rng(3)
    p = np.array([0.2, 0.5, 0.3])
    reward = np.array([0.4, 0.9, 0.1])
    n = 100_000
    actions = np.minimum(np.searchsorted(np.cumsum(p), rng.uniform(size=n), side="right"), 2)
    est = np.array([importance_weighted(reward[a], a, p) for a in actions])
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(mean - reward) <= 3 * se)


def test_rexp3_batch_examples():
    assert rexp3_batch_length(3, 100, 10.0) == 15
    assert rexp3_batch_length(3, 100, 1e12) == 1
    with pytest.raises(ConfigError):
        rexp3_batch_length(3, 100, 0.0)
    assert rexp3_gamma(3, 15) == pytest.approx(min(1, math.sqrt(3 * math.log(3) / ((math.e - 1) * 15))))


def test_rexp3_reset():
    learner = Rexp3(3, 100, 10.0)
    assert learner.batch == 15
    rng = np.random.default_rng(0)
    for t in range(1, 16):
        learner.policy()
        a = learner.select(rng)
        learner.observe_bandit(a, 8.0)
        if t < 15:
            assert not np.allclose(learner.weights, 1.0)
    assert np.array_equal(learner.weights, np.ones(3))


def test_greedy_examples():
    g = Greedy(3, 20)
    rng = np.random.default_rng(0)
    order = []
    for r in (5.0, 9.0, 9.0):
        a = g.select(rng)
        order.append(a)
        g.observe_bandit(a, r)
    assert order == [0, 1, 2]
    assert g.select(rng) == 1
    for _ in range(10):
        a = g.select(rng)
        g.observe_bandit(a, 9.0)
        assert a == 1


@pytest.mark.parametrize("name", ["ucb", "exp3", "greedy", "uniform"])
def test_bandit_distributions_valid(name):
    sc = Scenario.sample("mab", "bernoulli", 4, 60, 3)
    ep = run_episode(sc, make_learner(name, "mab", 4, 60))
    assert np.all(ep.policies >= 0) and np.allclose(ep.policies.sum(axis=1), 1, atol=1e-9)


def test_rexp3_distributions_valid():
    sc = Scenario.sample("nsmab", "gradual", 3, 80, 3)
    ep = run_episode(sc, make_learner("rexp3", "nsmab", 3, 80, variation=5.0))
    assert np.all(ep.policies >= 0) and np.allclose(ep.policies.sum(axis=1), 1, atol=1e-9)


def test_hedge_regret_bound():
    rng = np.random.default_rng(8)
    T, d = 200, 2
    for _ in range(100):
        rewards = rng.uniform(0, 1, size=(T, d))
        h = Hedge(d)
        pol = []
        for r in rewards:
            pol.append(h.policy())
            h.observe(r)
        reg = metrics.fol_regret(rewards, np.array(pol)).values
        assert reg[-1] <= 10 * math.sqrt(2 * T * math.log(d))


def test_ftl_linear_hedge_sublinear_on_alternating():
    ftl_curves, hedge_curves = [], []
    for seed in range(20):
        sc = Scenario.sample("fol", "alternating", 2, 200, seed)
        ftl_curves.append(run_episode(sc, FTL(2)).regret())
        hedge_curves.append(run_episode(sc, Hedge(2)).regret())
    ftl_mean = np.mean(ftl_curves, axis=0)
    per_round = np.diff(ftl_mean)
    assert per_round[50:].mean() > 1.0
    assert metrics.fit_regret_growth(np.mean(hedge_curves, axis=0)).beta_hat < 1


def test_make_learner_errors():
    with pytest.raises(ConfigError):
        make_learner("thompson", "mab", 3, 10)
    with pytest.raises(ConfigError):
        make_learner("ucb", "fol", 3, 10)
    with pytest.raises(ConfigError):
        make_learner("hedge", "mab", 3, 10)
    with pytest.raises(ConfigError):
        make_learner("rexp3", "nsmab", 3, 10)
    with pytest.raises(ConfigError):
        make_learner("ftrl_l2", "fol", 3, 10, PolicySpace())


def test_fixed_step_ftrl_variants():
    h25 = make_learner("hedge", "fol", 3, 100, eta_horizon=25)
    assert h25.eta == pytest.approx(math.sqrt(2 * math.log(3) / 25))
