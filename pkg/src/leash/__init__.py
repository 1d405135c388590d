"""Adaptive length penalty via Lagrangian primal-dual reward shaping.

Desk-scale implementation on synthetic think-then-answer environments.
"""

__version__ = "0.1.0"

from leash.envsim import Action, Rollout, TaskSet, TaskSpec, default_task_set
from leash.shaping import ShapedReward, ShapingParams
from leash.dual import DualState, ViolationEstimate
from leash.policy import PolicyParams, SurrogateConfig
from leash.trainer import IterationMetrics, TrainConfig, TrainHistory, train

__all__ = [
    "Action",
    "DualState",
    "IterationMetrics",
    "PolicyParams",
    "Rollout",
    "ShapedReward",
    "ShapingParams",
    "SurrogateConfig",
    "TaskSet",
    "TaskSpec",
    "TrainConfig",
    "TrainHistory",
    "ViolationEstimate",
    "default_task_set",
    "train",
]
