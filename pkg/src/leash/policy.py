"""Tabular stop/continue policy and the asymmetric clipped surrogate.

The policy is a table of logits indexed by ``(state_bucket, action)`` where
the state is the number of think actions taken so far and buckets have a
fixed width. Since every action before ``STOP`` is a think action, the state
at step ``t`` is simply ``t``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from leash.envsim import N_ACTIONS, Action, Rollout, RolloutBatch
from leash.shaping import ShapedReward

POLICY_SCHEMA_VERSION = 1
ADVANTAGE_EPS = 1e-8


class SnapshotMismatchError(RuntimeError):
    """Rollouts were not sampled from the snapshot handed to the surrogate."""


class NonFiniteGradientError(FloatingPointError):
    pass


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class PolicyParams:
    logits: np.ndarray
    bucket_width: int = 1
    version: int = 0

    def __post_init__(self) -> None:
        logits = np.array(self.logits, dtype=float)
        if logits.ndim != 2 or logits.shape[1] != N_ACTIONS:
            raise ValueError(f"logits must have shape (S, {N_ACTIONS}), got {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        if self.bucket_width < 1:
            raise ValueError("bucket_width must be positive")
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)

    @classmethod
    def initial(cls, horizon: int, bucket_width: int = 1, stop_prob: float = 0.01) -> "PolicyParams":
        """Uniform over think variants, stopping with ``stop_prob`` at every step."""
        if not 0.0 < stop_prob < 1.0:
            raise ValueError("stop_prob must lie in (0, 1)")
        n_buckets = -(-horizon // bucket_width)
        logits = np.zeros((n_buckets, N_ACTIONS))
        # four think variants share 1 - stop_prob equally
        logits[:, Action.STOP] = np.log(stop_prob * (N_ACTIONS - 1) / (1.0 - stop_prob))
        return cls(logits, bucket_width)

    @property
    def n_buckets(self) -> int:
        return self.logits.shape[0]

    @property
    def horizon(self) -> int:
        return self.n_buckets * self.bucket_width

    def bucket_of(self, step: int) -> int:
        return step // self.bucket_width

    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits)

    def step_log_probs(self, horizon: int) -> np.ndarray:
        if horizon > self.horizon:
            raise ValueError(f"policy covers {self.horizon} steps, {horizon} requested")
        return self.log_probs()[np.arange(horizon) // self.bucket_width]

    def stop_probabilities(self, horizon: int) -> np.ndarray:
        return np.exp(self.step_log_probs(horizon)[:, Action.STOP])

    def snapshot(self) -> "PolicyParams":
        return PolicyParams(self.logits.copy(), self.bucket_width, self.version)

    def with_logits(self, logits: np.ndarray) -> "PolicyParams":
        return PolicyParams(logits, self.bucket_width, self.version)

    def to_dict(self) -> dict:
        return {
            "schema_version": POLICY_SCHEMA_VERSION,
            "bucket_width": self.bucket_width,
            "logits": self.logits.tolist(),
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyParams":
        if data.get("schema_version") != POLICY_SCHEMA_VERSION:
            raise ValueError(f"unsupported policy schema_version {data.get('schema_version')!r}")
        return cls(np.asarray(data["logits"], dtype=float), int(data["bucket_width"]), int(data["version"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PolicyParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class SurrogateConfig:
    eps_low: float = 0.2
    eps_high: float = 0.28
    learning_rate: float = 500.0
    aggregation: str = "token_mean"

    def __post_init__(self) -> None:
        if not (self.eps_low > 0 and self.eps_high > 0):
            raise ValueError("clip thresholds must be positive")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


@dataclass
class GroupBatch:
    prompt_index: int
    rollouts: list[Rollout]
    shaped: list[ShapedReward]
    advantages: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if len(self.rollouts) != len(self.shaped):
            raise ValueError("one shaped reward per rollout required")
        if len({r.task_id for r in self.rollouts}) > 1:
            raise ValueError("all rollouts in a group must share one task")
        if self.advantages is None:
            self.advantages = group_advantages([s.clipped for s in self.shaped])


def action_distribution(params: PolicyParams, state_bucket: int) -> np.ndarray:
    if not 0 <= state_bucket < params.n_buckets:
        raise IndexError(f"bucket {state_bucket} outside [0, {params.n_buckets})")
    return np.exp(log_softmax(params.logits[state_bucket]))


def group_advantages(clipped_rewards: Sequence[float] | np.ndarray) -> np.ndarray:
    """Standardise within each group (last axis) with population std plus 1e-8."""
    r = np.asarray(clipped_rewards, dtype=float)
    if r.shape[-1] < 2:
        raise ValueError("group-relative advantages need at least two samples per group")
    centered = r - r.mean(axis=-1, keepdims=True)
    # second pass removes the rounding residual, which the 1e-8 guard would otherwise amplify
    centered -= centered.mean(axis=-1, keepdims=True)
    sigma = np.sqrt((centered**2).mean(axis=-1, keepdims=True))
    return centered / (sigma + ADVANTAGE_EPS)


@dataclass
class TokenBatch:
    """Every token of a batch flattened, in rollout order then step order."""

    steps: np.ndarray           # (T,) step index within its rollout
    actions: np.ndarray         # (T,)
    behavior_logp: np.ndarray   # (T,)
    advantages: np.ndarray      # (T,) trajectory advantage broadcast to tokens
    rollout_index: np.ndarray   # (T,)
    n_rollouts: int
    policy_version: int

    @classmethod
    def from_groups(cls, groups: Sequence[GroupBatch]) -> "TokenBatch":
        steps, actions, blp, adv, idx = [], [], [], [], []
        versions = set()
        n = 0
        for g in groups:
            for r, a in zip(g.rollouts, np.asarray(g.advantages, dtype=float)):
                versions.add(r.policy_version)
                steps.append(np.arange(r.length))
                actions.append(np.asarray([int(x) for x in r.actions], dtype=np.intp))
                blp.append(np.asarray(r.behavior_logprobs, dtype=float))
                adv.append(np.full(r.length, a))
                idx.append(np.full(r.length, n))
                n += 1
        if len(versions) > 1:
            raise SnapshotMismatchError(f"rollouts from several policy versions: {sorted(versions)}")
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)  # noqa: E731
        return cls(
            steps=cat(steps, np.intp),
            actions=cat(actions, np.intp),
            behavior_logp=cat(blp, float),
            advantages=cat(adv, float),
            rollout_index=cat(idx, np.intp),
            n_rollouts=n,
            policy_version=versions.pop() if versions else -1,
        )

    @classmethod
    def from_rollout_batch(cls, batch: RolloutBatch, advantages: np.ndarray) -> "TokenBatch":
        mask = batch.token_mask()
        rows, steps = np.nonzero(mask)
        return cls(
            steps=steps,
            actions=batch.actions[rows, steps].astype(np.intp),
            behavior_logp=batch.behavior_logp[rows, steps],
            advantages=np.asarray(advantages, dtype=float).reshape(-1)[rows],
            rollout_index=rows,
            n_rollouts=batch.size,
            policy_version=batch.policy_version,
        )


def _token_mean_weights(tokens: TokenBatch) -> np.ndarray:
    return np.full(tokens.steps.size, 1.0 / max(tokens.steps.size, 1))


def _sequence_mean_weights(tokens: TokenBatch) -> np.ndarray:
    counts = np.bincount(tokens.rollout_index, minlength=tokens.n_rollouts)
    return 1.0 / (tokens.n_rollouts * counts[tokens.rollout_index])


AGGREGATIONS = {"token_mean": _token_mean_weights, "sequence_mean": _sequence_mean_weights}


def _as_tokens(batches, snapshot: PolicyParams) -> TokenBatch:
    tokens = batches if isinstance(batches, TokenBatch) else TokenBatch.from_groups(batches)
    if tokens.steps.size and tokens.policy_version != snapshot.version:
        raise SnapshotMismatchError(
            f"rollouts sampled under policy version {tokens.policy_version}, snapshot is {snapshot.version}"
        )
    return tokens


def _ratios(params: PolicyParams, tokens: TokenBatch) -> tuple[np.ndarray, np.ndarray]:
    buckets = tokens.steps // params.bucket_width
    logp = params.log_probs()[buckets, tokens.actions]
    return np.exp(logp - tokens.behavior_logp), buckets


def token_contributions(params: PolicyParams, snapshot: PolicyParams, batches, cfg: SurrogateConfig) -> np.ndarray:
    """Per-token ``min(rho * A, clip(rho, 1 - eps_low, 1 + eps_high) * A)``."""
    tokens = _as_tokens(batches, snapshot)
    rho, _ = _ratios(params, tokens)
    adv = tokens.advantages
    return np.minimum(rho * adv, np.clip(rho, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high) * adv)


def surrogate_objective(params: PolicyParams, snapshot: PolicyParams, batches, cfg: SurrogateConfig) -> float:
    tokens = _as_tokens(batches, snapshot)
    if tokens.steps.size == 0:
        return 0.0
    weights = AGGREGATIONS[cfg.aggregation](tokens)
    return float(np.dot(weights, token_contributions(params, snapshot, tokens, cfg)))


def surrogate_gradient(params: PolicyParams, snapshot: PolicyParams, batches, cfg: SurrogateConfig) -> np.ndarray:
    """Exact gradient of :func:`surrogate_objective` with respect to the logits.

    Tokens whose ratio sits in the clipped branch contribute nothing.
    """
    tokens = _as_tokens(batches, snapshot)
    grad = np.zeros_like(params.logits)
    if tokens.steps.size == 0:
        return grad
    rho, buckets = _ratios(params, tokens)
    adv = tokens.advantages
    clipped = ((adv > 0) & (rho > 1.0 + cfg.eps_high)) | ((adv < 0) & (rho < 1.0 - cfg.eps_low))
    coef = np.where(clipped, 0.0, AGGREGATIONS[cfg.aggregation](tokens) * adv * rho)
    flat = buckets * N_ACTIONS + tokens.actions
    # d log pi(a|s) / d logit[s, k] = 1[a == k] - pi(k|s)
    taken = np.bincount(flat, weights=coef, minlength=grad.size).reshape(grad.shape)
    per_state = np.bincount(buckets, weights=coef, minlength=params.n_buckets)
    return taken - per_state[:, None] * np.exp(params.log_probs())


def sgd_step(params: PolicyParams, gradient: np.ndarray, cfg: SurrogateConfig) -> PolicyParams:
    """Ascent step ``logits + lr * gradient``; bumps the version."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != params.logits.shape:
        raise ValueError(f"gradient shape {gradient.shape} does not match logits {params.logits.shape}")
    if not np.all(np.isfinite(gradient)):
        bad = np.argwhere(~np.isfinite(gradient))
        raise NonFiniteGradientError(f"non-finite gradient at {len(bad)} entries, first (bucket, action) = {tuple(int(i) for i in bad[0])}")
    return PolicyParams(params.logits + cfg.learning_rate * gradient, params.bucket_width, params.version + 1)
