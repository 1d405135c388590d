"""Primal-dual training loop.

One iteration: snapshot the policy, sample ``B`` prompts with ``G`` rollouts
each, shape rewards with the current multiplier, normalise advantages per
group, take one surrogate ascent step, then move the multiplier using the
batch's mean length violation.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from leash import dual as dual_mod
from leash.dual import DualState, ViolationEstimate, estimate_violation
from leash.envsim import RolloutBatch, TaskSet, sample_batch
from leash.policy import (
    PolicyParams,
    SurrogateConfig,
    TokenBatch,
    group_advantages,
    sgd_step,
    surrogate_gradient,
)
from leash.shaping import PENALTY_KINDS, ShapingParams, one_sided_penalties, shaped_rewards

log = logging.getLogger(__name__)

METRIC_FIELDS = (
    "iteration",
    "satisfaction_rate",
    "lambda",
    "effective_penalty",
    "mean_length",
    "mean_accuracy",
    "mean_shaped_reward",
    "violation_estimate",
)

# SeedSequence stream ids within one iteration
_PROMPTS, _ROLLOUTS, _DUAL_ROLLOUTS = 0, 1, 2

Hook = Callable[[str, dict], None]


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    group_size: int = 8
    target_length: int = 48
    iterations: int = 2000
    shaping: ShapingParams | None = None
    dual: DualState = field(default_factory=DualState)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    controller_kind: str = "adaptive"
    penalty_kind: str = "one_sided"
    global_seed: int = 0
    bucket_width: int = 1
    init_stop_prob: float = 0.01
    fresh_rollouts_for_dual: bool = False
    early_stop: bool = False

    def __post_init__(self) -> None:
        if self.shaping is None:
            object.__setattr__(self, "shaping", ShapingParams(self.target_length))
        elif self.shaping.target_length != self.target_length:
            raise ValueError("shaping.target_length disagrees with target_length")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2 for group-relative advantages")
        if self.controller_kind not in dual_mod.CONTROLLERS:
            raise ValueError(f"controller_kind must be one of {sorted(dual_mod.CONTROLLERS)}")
        if self.penalty_kind not in PENALTY_KINDS:
            raise ValueError(f"penalty_kind must be one of {PENALTY_KINDS}")
        if self.global_seed < 0:
            raise ValueError("global_seed must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shaping"].pop("target_length")
        d["dual"]["lambda_init"] = d["dual"].pop("lam")
        return d

    def fingerprint(self, tasks: TaskSet) -> str:
        blob = json.dumps({"config": self.to_dict(), "tasks": tasks.to_dict()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    satisfaction_rate: float
    lam: float
    effective_penalty: float
    mean_length: float
    mean_accuracy: float
    mean_shaped_reward: float
    violation_estimate: float

    def row(self) -> list[str]:
        floats = [
            self.satisfaction_rate,
            self.lam,
            self.effective_penalty,
            self.mean_length,
            self.mean_accuracy,
            self.mean_shaped_reward,
            self.violation_estimate,
        ]
        return [str(self.iteration)] + [f"{x:.6g}" for x in floats]


@dataclass
class TrainHistory:
    fingerprint: str
    metrics: list[IterationMetrics]
    final_policy: PolicyParams
    final_dual: DualState

    def column(self, name: str) -> np.ndarray:
        attr = "lam" if name == "lambda" else name
        return np.array([getattr(m, attr) for m in self.metrics], dtype=float)


def effective_penalty(lam: float, penalties) -> float:
    """``lam`` times the batch-mean one-sided penalty."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if len(penalties) == 0:
        raise ValueError("no penalties to average")
    return lam * math.fsum(penalties) / len(penalties)


def _rng(cfg: TrainConfig, iteration: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.global_seed, iteration, stream]))


def sample_iteration_batch(
    snapshot: PolicyParams, tasks: TaskSet, cfg: TrainConfig, iteration: int, stream: int = _ROLLOUTS
) -> RolloutBatch:
    prompts = _rng(cfg, iteration, _PROMPTS).choice(len(tasks), size=cfg.batch_size, p=tasks.weights_array())
    return sample_batch(snapshot, tasks, prompts, cfg.group_size, _rng(cfg, iteration, stream))


def run_iteration(
    policy: PolicyParams,
    dual: DualState,
    tasks: TaskSet,
    cfg: TrainConfig,
    iteration: int,
    hook: Hook | None = None,
) -> tuple[PolicyParams, DualState, IterationMetrics]:
    snapshot = policy.snapshot()
    batch = sample_iteration_batch(snapshot, tasks, cfg, iteration)
    lam = dual.lam
    if hook:
        hook("shaping", {"iteration": iteration, "lambda": lam})

    rewards = shaped_rewards(batch.correct, batch.lengths, lam, cfg.shaping, cfg.penalty_kind)
    adv = group_advantages(rewards.reshape(cfg.batch_size, cfg.group_size))
    tokens = TokenBatch.from_rollout_batch(batch, adv)
    grad = surrogate_gradient(policy, snapshot, tokens, cfg.surrogate)
    new_policy = sgd_step(policy, grad, cfg.surrogate)

    dual_lengths = batch.lengths
    if cfg.fresh_rollouts_for_dual:
        dual_lengths = sample_iteration_batch(new_policy, tasks, cfg, iteration, _DUAL_ROLLOUTS).lengths
    estimate: ViolationEstimate = estimate_violation(dual_lengths.tolist(), cfg.target_length)
    if hook:
        hook("dual", {"iteration": iteration, "lengths": dual_lengths.copy(), "estimate": estimate.value})
    new_dual = dual_mod.CONTROLLERS[cfg.controller_kind](dual, estimate)

    n = batch.size
    metrics = IterationMetrics(
        iteration=iteration,
        satisfaction_rate=int(np.count_nonzero(batch.lengths <= cfg.target_length)) / n,
        lam=lam,
        effective_penalty=effective_penalty(lam, one_sided_penalties(batch.lengths, cfg.target_length).tolist()),
        mean_length=float(batch.lengths.mean()),
        mean_accuracy=int(np.count_nonzero(batch.correct)) / n,
        mean_shaped_reward=float(rewards.mean()),
        violation_estimate=estimate.value,
    )
    values = [getattr(metrics, f.name) for f in fields(metrics)]
    if not all(math.isfinite(v) for v in values):
        raise TrainingError(f"non-finite metric at iteration {iteration}: {metrics}")
    return new_policy, new_dual, metrics


def initial_policy(cfg: TrainConfig, tasks: TaskSet) -> PolicyParams:
    return PolicyParams.initial(tasks.horizon, cfg.bucket_width, cfg.init_stop_prob)


def _plateaued(metrics: list[IterationMetrics], window: int = 20) -> bool:
    if len(metrics) < window:
        return False
    recent = metrics[-window:]
    lams = [m.lam for m in recent]
    return all(abs(m.violation_estimate) < 0.02 for m in recent) and max(lams) - min(lams) < 1e-3


def train(
    cfg: TrainConfig,
    tasks: TaskSet,
    metrics_path: str | Path | None = None,
    policy: PolicyParams | None = None,
    hook: Hook | None = None,
) -> TrainHistory:
    policy = policy if policy is not None else initial_policy(cfg, tasks)
    if policy.horizon < tasks.horizon:
        raise ValueError(f"policy covers {policy.horizon} steps but tasks reach {tasks.horizon}")
    dual = cfg.dual
    history: list[IterationMetrics] = []
    writer = None
    fh = None
    if metrics_path is not None:
        try:
            fh = open(metrics_path, "w", newline="", encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write metrics to {metrics_path}: {exc.strerror}") from exc
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
    try:
        for it in range(cfg.iterations):
            policy, dual, m = run_iteration(policy, dual, tasks, cfg, it, hook)
            history.append(m)
            if writer is not None:
                writer.writerow(m.row())
                fh.flush()
            if it % 100 == 0:
                log.debug("iter %d len %.1f sat %.3f lam %.4f", it, m.mean_length, m.satisfaction_rate, m.lam)
            if cfg.early_stop and _plateaued(history):
                log.info("early stop at iteration %d", it)
                break
    finally:
        if fh is not None:
            fh.close()
    return TrainHistory(cfg.fingerprint(tasks), history, policy, dual)
