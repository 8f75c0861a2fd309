"""Regret-ranked self-imitation training.

Each iteration samples ``M`` scenarios, plays ``L`` perturbed rollouts of the
current model on each, keeps the ``k`` lowest-regret rollouts per scenario and
fits the model to their policies with Adam on squared policy error.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import kernels
from .envs import (PROCESS_KINDS, STREAM_ACTIONS, STREAM_PERTURB, PolicySpace, Scenario,
                   derive_rng, derive_seed)
from .errors import ConfigError
from .model import (AttentionPolicy, ModelParams, Operator, diagnostics, history_stats,
                    loss_and_gradient, reparam, save_checkpoint)

DEFAULT_SIGMA = {"fol": 1.0, "mab": 0.1, "nsmab": 0.1}

# sub-stream ids under the root training seed
_SEED_INIT, _SEED_SCENARIOS, _SEED_SHUFFLE, _SEED_ROLLOUT = 0, 1, 2, 3


@dataclass
class TrainConfig:
    iterations: int = 1000
    M: int = 100
    L: int = 10
    k: int = 1
    sigma: float | None = None          # None picks the per-environment default
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1000
    epochs: int = 1
    d: int = 3
    T: int = 25
    env_kind: str = "fol"
    process: str = "gaussian"
    operator_kind: str = "softmax"
    radius: float = 1.0
    init_std: float = 0.1
    realized_regret: bool = False
    raw_score: bool = False
    fixed_pool: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.sigma is None:
            self.sigma = DEFAULT_SIGMA.get(self.env_kind, 1.0)
        self.validate()

    def validate(self) -> None:
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.M < 1 or self.L < 1:
            raise ConfigError("M and L must be >= 1")
        if not 1 <= self.k <= self.L:
            raise ConfigError(f"k must satisfy 1 <= k <= L, got k={self.k}, L={self.L}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.process not in PROCESS_KINDS:
            raise ConfigError(f"process must be one of {PROCESS_KINDS}, got {self.process!r}")
        op = Operator(self.operator_kind, self.radius)
        if self.env_kind != "fol" and op.kind != "softmax":
            raise ConfigError("bandit training needs the softmax operator")
        if self.env_kind == "fol" and (op.kind == "softmax") != (self.policy_space.kind == "simplex"):
            raise ConfigError("operator does not match the policy space")
        # building a scenario checks env/process compatibility
        Scenario.sample(self.env_kind, self.process, self.d, self.T, 0, self.policy_space)

    @property
    def operator(self) -> Operator:
        return Operator(self.operator_kind, self.radius)

    @property
    def policy_space(self) -> PolicySpace:
        if self.operator_kind == "ball":
            return PolicySpace("ball", self.radius)
        return PolicySpace("simplex")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training config field(s): {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TrajectoryRecord:
    scenario: Scenario
    policies: np.ndarray            # (T, d) perturbed policies
    rewards: np.ndarray             # (T, d) full sampled reward vectors
    actions: np.ndarray | None      # (T,) for bandits
    regret: float

    @property
    def inputs(self) -> np.ndarray:
        """Vectors fed to the model: full rewards, or masked rewards for bandits."""
        if self.actions is None:
            return self.rewards
        masked = np.zeros_like(self.rewards)
        rows = np.arange(len(self.actions))
        masked[rows, self.actions] = self.rewards[rows, self.actions]
        return masked


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)
    path: Path | None = None
    initial: dict = field(default_factory=dict)   # diagnostics before training

    def append(self, entry: dict) -> None:
        self.entries.append(entry)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(entry) + "\n")

    def __len__(self):
        return len(self.entries)

    def column(self, key: str) -> np.ndarray:
        return np.array([e[key] for e in self.entries])

    @classmethod
    def read(cls, path) -> "TrainLog":
        lines = Path(path).read_text().splitlines()
        return cls([json.loads(x) for x in lines if x.strip()])


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, size: int, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.steps = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.steps += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.steps)
        v_hat = self.v / (1 - self.beta2 ** self.steps)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Rollouts


def _final_regret(scenario: Scenario, policies, rewards, means, actions, realized: bool) -> np.ndarray:
    """Final-round regret of a batch of trajectories ``(L, T, d)`` on one scenario."""
    if scenario.env_kind == "fol":
        earned = np.einsum("ltd,ltd->l", policies, rewards)
        total = rewards.sum(axis=1)
        if scenario.policy_space.kind == "simplex":
            best = total.max(axis=-1)
        else:
            best = scenario.policy_space.radius * np.linalg.norm(total, axis=-1)
        return best - earned
    T = policies.shape[1]
    if scenario.env_kind == "nsmab":
        return (means.max(axis=1).sum() - np.einsum("ltd,td->l", policies, means))
    if realized:
        chosen = np.take_along_axis(rewards, actions[..., None], axis=2)[..., 0]
        return T * means[0].max() - chosen.sum(axis=1)
    return T * means[0].max() - np.einsum("ltd,d->l", policies, means[0])


def _perturbation(scenario: Scenario, n: int, sigma: float, rng):
    if rng is None:
        noise_rng = derive_rng(scenario.seed, STREAM_PERTURB)
        action_rng = derive_rng(scenario.seed, STREAM_ACTIONS)
    else:
        noise_rng = action_rng = rng
    noise = sigma * noise_rng.standard_normal((n, scenario.horizon, scenario.d))
    uniforms = action_rng.uniform(size=(n, scenario.horizon))
    return noise, uniforms


def _sequential_rollout(scenario, params, operator, noise, uniforms):
    """Round-by-round rollout for processes whose rewards depend on the policy."""
    policy = AttentionPolicy(params, operator, bandit=scenario.env_kind != "fol")
    stream = scenario.stream()
    T, d = scenario.horizon, scenario.d
    policies, rewards = np.empty((T, d)), np.empty((T, d))
    actions = np.empty(T, dtype=np.int64) if scenario.env_kind != "fol" else None
    for t in range(T):
        p = operator(policy.score() + noise[t])
        policies[t] = p
        rewards[t] = stream.next(p)
        if actions is None:
            policy.observe(rewards[t])
        else:
            a = int(min(np.searchsorted(np.cumsum(p), uniforms[t], side="right"), d - 1))
            actions[t] = a
            policy.observe_bandit(a, rewards[t, a])
    return policies, rewards, actions


def rollout_many(scenario: Scenario, params: ModelParams, operator: Operator, sigma: float,
                 n_rollouts: int, realized: bool = False,
                 rng: np.random.Generator | None = None) -> list[TrajectoryRecord]:
    """``n_rollouts`` perturbed rollouts.

    Noise and action draws come from ``rng`` when given, otherwise from the
    scenario's own perturbation and action streams.
    """
    noise, uniforms = _perturbation(scenario, n_rollouts, sigma, rng)
    T, d = scenario.horizon, scenario.d
    if scenario.policy_dependent:
        outs = [_sequential_rollout(scenario, params, operator, noise[i], uniforms[i])
                for i in range(n_rollouts)]
        policies = np.array([o[0] for o in outs])
        rewards = np.array([o[1] for o in outs])
        actions = None if scenario.env_kind == "fol" else np.array([o[2] for o in outs])
        means = None
    else:
        r, means = scenario.rewards()
        rewards = np.repeat(r[None], n_rollouts, axis=0)
        rp = reparam(params)
        if scenario.env_kind == "fol":
            policies = kernels.fol_rollout(rp.A, rp.b, rp.C, rp.dvec, rewards, noise,
                                           operator.code, float(operator.radius))
            actions = None
        else:
            policies, actions = kernels.mab_rollout(rp.A, rp.b, rp.C, rp.dvec, rewards, noise, uniforms)
        policies = np.asarray(policies)
        actions = None if actions is None else np.asarray(actions)
    regrets = _final_regret(scenario, policies, rewards, means, actions, realized)
    return [TrajectoryRecord(scenario, policies[i], rewards[i],
                             None if actions is None else actions[i], float(regrets[i]))
            for i in range(n_rollouts)]


def rollout(scenario: Scenario, params: ModelParams, sigma: float, rng: np.random.Generator | None = None,
            operator: Operator | str = "softmax", realized: bool = False) -> TrajectoryRecord:
    """A single perturbed rollout."""
    if isinstance(operator, str):
        operator = Operator(operator)
    return rollout_many(scenario, params, operator, sigma, 1, realized, rng)[0]


def select_topk(records, k: int) -> list:
    """The ``k`` lowest-regret records; ties go to the lower index."""
    records = list(records)
    if not 1 <= k <= len(records):
        raise ConfigError(f"k must satisfy 1 <= k <= {len(records)}, got {k}")
    regrets = np.array([r.regret for r in records])
    order = np.argsort(regrets, kind="stable")[:k]
    return [records[i] for i in order]


# ---------------------------------------------------------------------------
# Supervised fitting


def sft_update(params: ModelParams, dataset, config: TrainConfig, optimizer: Adam | None = None,
               rng: np.random.Generator | None = None) -> tuple[ModelParams, float]:
    """Fit the model to the recorded policies of ``dataset`` (trajectory records).

    Items are (trajectory, round) pairs, shuffled into batches of
    ``config.batch_size``; each batch takes one Adam step on the batch-mean
    squared error. Returns the new params and the mean per-item loss observed
    during the pass.
    """
    dataset = list(dataset)
    if not dataset:
        raise ConfigError("sft_update needs a non-empty dataset")
    if optimizer is None:
        optimizer = Adam(params.flat().size, config.lr, config.beta1, config.beta2, config.eps)
    if rng is None:
        rng = np.random.default_rng(0)
    inputs = np.array([rec.inputs for rec in dataset])
    targets = np.array([rec.policies for rec in dataset]).reshape(-1, params.d)
    n, S1, M2 = history_stats(inputs)
    operator = config.operator
    theta = params.flat()
    total, count = 0.0, 0
    for _ in range(config.epochs):
        order = rng.permutation(n.shape[0])
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            current = ModelParams.from_flat(theta, params.d)
            stats = (n[idx], np.ascontiguousarray(S1[idx]), np.ascontiguousarray(M2[idx]))
            loss, grad = loss_and_gradient(current, stats, targets[idx], operator, config.raw_score)
            theta = optimizer.step(theta, grad.flat() / idx.size)
            total += loss
            count += idx.size
    return ModelParams.from_flat(theta, params.d), total / count


# ---------------------------------------------------------------------------
# Main loop


def _scenarios(config: TrainConfig, seed: int, iteration: int) -> list[Scenario]:
    it = 0 if config.fixed_pool else iteration
    return [Scenario.sample(config.env_kind, config.process, config.d, config.T,
                            derive_seed(seed, _SEED_SCENARIOS, it, i), config.policy_space)
            for i in range(config.M)]


def initial_params(config: TrainConfig, seed: int) -> ModelParams:
    return ModelParams.init(config.d, derive_rng(seed, _SEED_INIT), config.init_std)


def train(config: TrainConfig, seed: int = 0, params: ModelParams | None = None,
          log_path=None, checkpoint_dir=None, callback=None) -> tuple[ModelParams, TrainLog]:
    """Run the training loop; returns the final params and the per-iteration log.

    ``log_path`` receives the log as JSON lines; ``checkpoint_dir`` receives
    ``ckpt_<iteration>.json`` every ``config.checkpoint_every`` iterations and
    ``final.json`` at the end.
    """
    operator = config.operator
    params = initial_params(config, seed) if params is None else params.copy()
    log = TrainLog(path=Path(log_path) if log_path else None)
    if log.path is not None:
        log.path.write_text("")
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    optimizer = Adam(params.flat().size, config.lr, config.beta1, config.beta2, config.eps)
    init_diag = diagnostics(params, operator.kind)
    log.initial = {"a_b_norm": init_diag.a_b_norm, "c_dev": init_diag.c_dev, "d_dev": init_diag.d_dev}
    for it in range(config.iterations):
        started = time.perf_counter()
        selected, all_regret, sel_regret = [], [], []
        for i, sc in enumerate(_scenarios(config, seed, it)):
            records = rollout_many(sc, params, operator, config.sigma, config.L, config.realized_regret,
                                   derive_rng(seed, _SEED_ROLLOUT, it, i))
            top = select_topk(records, config.k)
            selected.extend(top)
            all_regret.append(np.mean([r.regret for r in records]))
            sel_regret.append(np.mean([r.regret for r in top]))
        params, loss = sft_update(params, selected, config, optimizer,
                                  derive_rng(seed, _SEED_SHUFFLE, it))
        diag = diagnostics(params, operator.kind)
        entry = {
            "iteration": it + 1,
            "loss": loss,
            "a_b_norm": diag.a_b_norm,
            "c_dev": diag.c_dev,
            "d_dev": diag.d_dev,
            "mean_selected_regret": float(np.mean(sel_regret)),
            "mean_rollout_regret": float(np.mean(all_regret)),
            "seconds": time.perf_counter() - started,
        }
        if ckpt_dir is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            path = ckpt_dir / f"ckpt_{it + 1:06d}.json"
            save_checkpoint(path, params, operator)
            entry["checkpoint"] = str(path)
        log.append(entry)
        if callback is not None:
            callback(it + 1, params, entry)
    if ckpt_dir is not None:
        save_checkpoint(ckpt_dir / "final.json", params, operator)
    return params, log
