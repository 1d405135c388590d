"""Reward arithmetic: task reward, length penalties and the clipped shaped reward."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ShapingParams:
    target_length: int
    reward_clip_low: float = -1.0
    reward_clip_high: float = 1.0

    def __post_init__(self) -> None:
        if self.target_length <= 0:
            raise ValueError(f"target_length must be positive, got {self.target_length}")
        if not self.reward_clip_low < self.reward_clip_high:
            raise ValueError("reward_clip_low must be below reward_clip_high")


@dataclass(frozen=True)
class ShapedReward:
    task_reward: float
    penalty: float
    augmented: float
    clipped: float


def task_reward(correct: bool) -> float:
    return 1.0 if correct else -1.0


def violation(length: float, target: int) -> float:
    """Relative length excess ``length / target - 1``; negative when under target."""
    if target <= 0:
        raise ValueError(f"target length must be positive, got {target}")
    return length / target - 1.0


def one_sided_penalty(length: float, target: int) -> float:
    return max(0.0, violation(length, target))


def shaped_reward(r: float, lam: float, penalty: float, params: ShapingParams) -> ShapedReward:
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    if penalty < 0:
        raise ValueError(f"penalty must be nonnegative, got {penalty}")
    augmented = r - lam * penalty
    clipped = min(max(augmented, params.reward_clip_low), params.reward_clip_high)
    return ShapedReward(task_reward=r, penalty=penalty, augmented=augmented, clipped=clipped)


def two_sided_augmented_reward(r: float, lam: float, length: float, target: int) -> float:
    """Unclipped ``r - lam * (length / target - 1)``.

    Short outputs earn a bonus here, which is why training uses the one-sided
    form. Kept for the ablation arm.
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    return r - lam * violation(length, target)


def two_sided_clipped_reward(r: float, lam: float, length: float, params: ShapingParams) -> float:
    value = two_sided_augmented_reward(r, lam, length, params.target_length)
    return min(max(value, params.reward_clip_low), params.reward_clip_high)


# Array versions used by the trainer. Same formulas, applied elementwise.

def task_rewards(correct: np.ndarray) -> np.ndarray:
    return np.where(correct, 1.0, -1.0)


def violations(lengths: np.ndarray, target: int) -> np.ndarray:
    if target <= 0:
        raise ValueError(f"target length must be positive, got {target}")
    return np.asarray(lengths, dtype=float) / target - 1.0


def one_sided_penalties(lengths: np.ndarray, target: int) -> np.ndarray:
    return np.maximum(0.0, violations(lengths, target))


PENALTY_KINDS = ("one_sided", "two_sided", "two_sided_clipped")


def shaped_rewards(
    correct: np.ndarray,
    lengths: np.ndarray,
    lam: float,
    params: ShapingParams,
    penalty_kind: str = "one_sided",
) -> np.ndarray:
    """Per-rollout training reward for the chosen penalty arm."""
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    r = task_rewards(correct)
    lo, hi = params.reward_clip_low, params.reward_clip_high
    if penalty_kind == "one_sided":
        return np.clip(r - lam * one_sided_penalties(lengths, params.target_length), lo, hi)
    if penalty_kind == "two_sided":
        return r - lam * violations(lengths, params.target_length)
    if penalty_kind == "two_sided_clipped":
        return np.clip(r - lam * violations(lengths, params.target_length), lo, hi)
    raise ValueError(f"unknown penalty kind {penalty_kind!r}; expected one of {PENALTY_KINDS}")
