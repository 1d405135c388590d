"""Lagrange multiplier control for the length constraint."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from leash.shaping import violation


@dataclass(frozen=True)
class DualState:
    """Penalty coefficient with its box and step size.

    Defaults follow the 1.5B schedule: start at 0.1, step 0.005, box [0, 1].
    """

    lam: float = 0.1
    lambda_min: float = 0.0
    lambda_max: float = 1.0
    step_size: float = 0.005

    def __post_init__(self) -> None:
        if not 0.0 <= self.lambda_min <= self.lam <= self.lambda_max:
            raise ValueError(
                f"need 0 <= lambda_min <= lambda <= lambda_max, got "
                f"{self.lambda_min}, {self.lam}, {self.lambda_max}"
            )
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")

    def at_bound(self, tol: float = 0.0) -> bool:
        return self.lam <= self.lambda_min + tol or self.lam >= self.lambda_max - tol


@dataclass(frozen=True)
class ViolationEstimate:
    value: float
    sample_count: int


def estimate_violation(lengths: Sequence[float], target: int) -> ViolationEstimate:
    """Mean of ``L / target - 1`` over every sample in the batch."""
    if len(lengths) == 0:
        raise ValueError("cannot estimate violation from an empty batch")
    total = math.fsum(violation(float(L), target) for L in lengths)
    return ViolationEstimate(value=total / len(lengths), sample_count=len(lengths))


def dual_update(state: DualState, estimate: ViolationEstimate) -> DualState:
    """Projected ascent step: ``clip(lam + step * violation, lambda_min, lambda_max)``."""
    lam = state.lam + state.step_size * estimate.value
    lam = min(max(lam, state.lambda_min), state.lambda_max)
    return replace(state, lam=lam)


def constant_controller(state: DualState, estimate: ViolationEstimate) -> DualState:
    """Fixed-penalty variant: the multiplier never moves."""
    return state


CONTROLLERS = {"adaptive": dual_update, "constant": constant_controller}
