"""Regret-ranked self-imitation training for online decision making.

Subpackages and modules:

* ``envs``: scenarios, reward processes and seeded sub-streams
* ``baselines``: FTL, FTRL/Hedge, UCB, EXP3, Rexp3 and friends
* ``metrics``: regret curves, growth fits, exploration metrics, one-sided KS
* ``model``: the linear-attention decision model and its gradients
* ``trainer``: perturbation rollouts, top-k selection and Adam fitting
* ``theory``: Monte-Carlo oracles for the single-layer optimality argument
* ``kernels``: compiled hot loops with a numpy fallback
"""
from .envs import PolicySpace, Scenario
from .errors import ConfigError, InsufficientDataError, SearchFailure
from .model import ModelParams, Operator, forward, reparam
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "InsufficientDataError",
    "ModelParams",
    "Operator",
    "PolicySpace",
    "Scenario",
    "SearchFailure",
    "TrainConfig",
    "forward",
    "reparam",
    "train",
]
