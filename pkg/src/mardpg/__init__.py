"""Cooperative multi-scenario ranking via recurrent deterministic policy
gradients, with a synthetic two-scenario marketplace for desk-scale
experiments."""

from .env import MarketplaceEnv, SimConfig, scripted_optimal_gap
from .model import Actor, CommModule, Critic, FixedActor, TargetSet
from .train import MaTrainer, ReplayBuffer, TrainConfig, evaluate, run_training
from .baselines import IndependentTrainer, make_trainer

__all__ = [
    "Actor",
    "CommModule",
    "Critic",
    "FixedActor",
    "IndependentTrainer",
    "MaTrainer",
    "MarketplaceEnv",
    "ReplayBuffer",
    "SimConfig",
    "TargetSet",
    "TrainConfig",
    "evaluate",
    "make_trainer",
    "run_training",
    "scripted_optimal_gap",
]
