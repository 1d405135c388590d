"""Exact ground truth for small instances.

The policy only conditions on the think count, so a trajectory's reward
depends on its length alone. Summing the path probability over every
think-variant sequence of a fixed length factorises:

    sum over variants v_0..v_{k-1} of prod_t p(v_t | t) * p(STOP | k)
        = prod_t (1 - p(STOP | t)) * p(STOP | k)

so expectations reduce to a sum over length profiles. ``enumerate_sequences``
checks this identity by brute force on tiny caps.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from leash.envsim import Action, TaskSet, TaskSpec, success_probability
from leash.policy import PolicyParams
from leash.shaping import ShapingParams, one_sided_penalty, shaped_reward, task_reward, violation

ENUMERATION_BOUND = 20
SEQUENCE_BOUND = 7


class EnumerationBoundError(ValueError):
    pass


@dataclass(frozen=True)
class ExactExpectations:
    expected_task_reward: float
    expected_violation: float
    expected_length: float
    expected_shaped_reward: float
    trajectory_count: int
    expected_accuracy: float = float("nan")
    total_probability: float = 1.0


def length_distribution(policy: PolicyParams, max_length: int) -> np.ndarray:
    """``p[l - 1] = P(L = l)`` for ``l = 1 .. max_length``.

    The last entry includes episodes cut off at the cap.
    """
    q = policy.stop_probabilities(max_length)
    survive = np.concatenate(([1.0], np.cumprod(1.0 - q)[:-1]))  # P(reach step t)
    p = survive * q
    p[-1] = survive[-1]
    return p


def _expectations(probs: np.ndarray, task: TaskSpec, lam: float, shaping: ShapingParams) -> ExactExpectations:
    jr = jp = el = es = acc = 0.0
    count = 0
    for i, p in enumerate(probs):
        if p <= 0.0:
            continue
        count += 1
        length = i + 1
        s = success_probability(task, length)
        pen = one_sided_penalty(length, shaping.target_length)
        good = shaped_reward(task_reward(True), lam, pen, shaping).clipped
        bad = shaped_reward(task_reward(False), lam, pen, shaping).clipped
        jr += p * (s * task_reward(True) + (1.0 - s) * task_reward(False))
        jp += p * violation(length, shaping.target_length)
        el += p * length
        es += p * (s * good + (1.0 - s) * bad)
        acc += p * s
    return ExactExpectations(jr, jp, el, es, count, acc, float(math.fsum(probs)))


def enumerate_exact(
    policy: PolicyParams, task: TaskSpec, lam: float, shaping: ShapingParams
) -> ExactExpectations:
    """Exact expectations by summing over every length profile."""
    if task.max_length > ENUMERATION_BOUND:
        raise EnumerationBoundError(
            f"task {task.id} has max_length {task.max_length}; enumeration is limited to {ENUMERATION_BOUND}"
        )
    return _expectations(length_distribution(policy, task.max_length), task, lam, shaping)


def exact_expectations(
    policy: PolicyParams, task: TaskSpec, lam: float, shaping: ShapingParams
) -> ExactExpectations:
    """Same sums as :func:`enumerate_exact` without the enumeration bound."""
    return _expectations(length_distribution(policy, task.max_length), task, lam, shaping)


def exact_taskset(policy: PolicyParams, tasks: TaskSet, lam: float, shaping: ShapingParams) -> ExactExpectations:
    """Expectations under the prompt distribution, weighted by sampling weights."""
    parts = [exact_expectations(policy, t, lam, shaping) for t in tasks.tasks]
    w = tasks.sampling_weights

    def avg(attr: str) -> float:
        return math.fsum(wi * getattr(e, attr) for wi, e in zip(w, parts))

    return ExactExpectations(
        expected_task_reward=avg("expected_task_reward"),
        expected_violation=avg("expected_violation"),
        expected_length=avg("expected_length"),
        expected_shaped_reward=avg("expected_shaped_reward"),
        trajectory_count=sum(e.trajectory_count for e in parts),
        expected_accuracy=avg("expected_accuracy"),
        total_probability=avg("total_probability"),
    )


def enumerate_sequences(
    policy: PolicyParams, task: TaskSpec, lam: float, shaping: ShapingParams
) -> ExactExpectations:
    """Brute force over every action sequence, no factorisation. Tiny caps only."""
    if task.max_length > SEQUENCE_BOUND:
        raise EnumerationBoundError(f"sequence enumeration is limited to max_length {SEQUENCE_BOUND}")
    probs = np.exp(policy.step_log_probs(task.max_length))
    think = [a for a in Action if a != Action.STOP]
    jr = jp = el = es = acc = mass = 0.0
    count = 0
    for k in range(task.max_length):
        # k think actions, then STOP, or the cap reached with k + 1 thinks
        endings = [(Action.STOP,)] if k < task.max_length - 1 else [(Action.STOP,)] + [(a,) for a in think]
        for prefix in itertools.product(think, repeat=k):
            for end in endings:
                seq = prefix + end
                p = 1.0
                for t, a in enumerate(seq):
                    p *= probs[t, a]
                if p <= 0.0:
                    continue
                count += 1
                length = len(seq)
                s = success_probability(task, length)
                pen = one_sided_penalty(length, shaping.target_length)
                mass += p
                jr += p * (2.0 * s - 1.0)
                jp += p * violation(length, shaping.target_length)
                el += p * length
                es += p * (s * shaped_reward(1.0, lam, pen, shaping).clipped
                           + (1.0 - s) * shaped_reward(-1.0, lam, pen, shaping).clipped)
                acc += p * s
    return ExactExpectations(jr, jp, el, es, count, acc, mass)


def finite_difference_gradient(
    objective_evaluator: Callable, params: PolicyParams | np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central differences of ``objective_evaluator`` with respect to every entry.

    The evaluator receives a ``PolicyParams`` when given one, else an array.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    as_policy = isinstance(params, PolicyParams)
    x0 = np.array(params.logits if as_policy else params, dtype=float)

    def f(x: np.ndarray) -> float:
        value = float(objective_evaluator(params.with_logits(x) if as_policy else x))
        if not math.isfinite(value):
            raise FloatingPointError("objective evaluated to a non-finite value")
        return value

    grad = np.zeros_like(x0)
    for idx in np.ndindex(x0.shape):
        x = x0.copy()
        x[idx] = x0[idx] + h
        fplus = f(x)
        x[idx] = x0[idx] - h
        fminus = f(x)
        grad[idx] = (fplus - fminus) / (2.0 * h)
    return grad


def slackness_check(
    lam: float,
    expected_violation: float,
    tol: float,
    lambda_min: float = 0.0,
    lambda_max: float = 1.0,
) -> bool:
    """Complementary-slackness diagnostic at a candidate saddle point."""
    if abs(lam * expected_violation) < tol:
        return True
    return lam <= lambda_min or lam >= lambda_max
