"""Synthetic think-then-answer environments.

Each episode is a stop/continue process: at every step the policy emits one
of four think actions or ``STOP``. The state is the number of think actions
taken so far. Correctness is drawn once the episode ends, from a model that
only depends on the episode length.

Randomness is consumed as one row of uniforms per rollout: column 0 decides
correctness, column ``t + 1`` decides the action at step ``t``. The same
decoder serves single rollouts and whole batches, so a batch row and a
single rollout fed the same uniforms are identical.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

TASKS_SCHEMA_VERSION = 1


class Action(enum.IntEnum):
    THINK = 0
    THINK_SUMMARY = 1
    THINK_RETHINK = 2
    THINK_PLAN = 3
    STOP = 4


N_ACTIONS = len(Action)


class StepPolicy(Protocol):
    version: int

    def step_log_probs(self, horizon: int) -> np.ndarray:
        """Log-probabilities of shape ``(horizon, N_ACTIONS)``, row ``t`` for step ``t``."""


@dataclass(frozen=True)
class TaskSpec:
    """A synthetic prompt.

    ``required_length`` is the episode length (STOP included) at which the
    answer becomes reliably correct. Below it the answer is correct with
    probability ``base_success``. With ``sigmoid_scale`` set, the step is
    replaced by a logistic ramp centred on ``required_length``.
    """

    id: int
    required_length: int
    max_length: int
    base_success: float
    reference_answer: str = ""
    sigmoid_scale: float | None = None

    def __post_init__(self) -> None:
        if not 0 < self.required_length <= self.max_length:
            raise ValueError(
                f"task {self.id}: need 0 < required_length <= max_length, "
                f"got {self.required_length}, {self.max_length}"
            )
        if not 0.0 <= self.base_success < 1.0:
            raise ValueError(f"task {self.id}: base_success must be in [0, 1), got {self.base_success}")
        if self.sigmoid_scale is not None and not self.sigmoid_scale > 0:
            raise ValueError(f"task {self.id}: sigmoid_scale must be positive")


@dataclass(frozen=True)
class TaskSet:
    tasks: tuple[TaskSpec, ...]
    sampling_weights: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.tasks:
            raise ValueError("task set is empty")
        if not self.sampling_weights:
            n = len(self.tasks)
            object.__setattr__(self, "sampling_weights", tuple([1.0 / n] * n))
        w = self.sampling_weights
        if len(w) != len(self.tasks):
            raise ValueError(f"{len(w)} weights for {len(self.tasks)} tasks")
        if any(x < 0 or not math.isfinite(x) for x in w) or not math.isclose(sum(w), 1.0, abs_tol=1e-9):
            raise ValueError("sampling weights must be nonnegative and sum to 1")

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, i: int) -> TaskSpec:
        return self.tasks[i]

    @property
    def horizon(self) -> int:
        return max(t.max_length for t in self.tasks)

    def weights_array(self) -> np.ndarray:
        return np.asarray(self.sampling_weights, dtype=float)

    def to_dict(self) -> dict:
        tasks = []
        for t in self.tasks:
            d = {
                "id": t.id,
                "required_length": t.required_length,
                "max_length": t.max_length,
                "base_success": t.base_success,
            }
            if t.reference_answer:
                d["reference_answer"] = t.reference_answer
            if t.sigmoid_scale is not None:
                d["sigmoid_scale"] = t.sigmoid_scale
            tasks.append(d)
        return {
            "schema_version": TASKS_SCHEMA_VERSION,
            "tasks": tasks,
            "sampling_weights": list(self.sampling_weights),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSet":
        if not isinstance(data, dict):
            raise ValueError("task file must hold a JSON object")
        version = data.get("schema_version")
        if version != TASKS_SCHEMA_VERSION:
            raise ValueError(f"unsupported task schema_version {version!r}")
        records = data.get("tasks")
        if not isinstance(records, list):
            raise ValueError("task file needs a 'tasks' array")
        allowed = {"id", "required_length", "max_length", "base_success", "reference_answer", "sigmoid_scale"}
        tasks = []
        for i, rec in enumerate(records):
            if not isinstance(rec, dict):
                raise ValueError(f"tasks[{i}] is not an object")
            extra = set(rec) - allowed
            if extra:
                raise ValueError(f"tasks[{i}]: unknown keys {sorted(extra)}")
            try:
                tasks.append(
                    TaskSpec(
                        id=int(rec["id"]),
                        required_length=int(rec["required_length"]),
                        max_length=int(rec["max_length"]),
                        base_success=float(rec["base_success"]),
                        reference_answer=str(rec.get("reference_answer", "")),
                        sigmoid_scale=rec.get("sigmoid_scale"),
                    )
                )
            except KeyError as exc:
                raise ValueError(f"tasks[{i}]: missing field {exc.args[0]!r}") from None
        weights = data.get("sampling_weights") or ()
        return cls(tuple(tasks), tuple(float(x) for x in weights))


def save_task_set(tasks: TaskSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(tasks.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_task_set(path: str | Path) -> TaskSet:
    with open(path, encoding="utf-8") as fh:
        return TaskSet.from_dict(json.load(fh))


def generate_task_set(
    count: int,
    required_range: tuple[int, int],
    max_length: int,
    base_success: float,
    seed: int = 0,
) -> TaskSet:
    """Draw ``count`` tasks with required lengths uniform on the inclusive range."""
    lo, hi = required_range
    if count < 1:
        raise ValueError("count must be positive")
    if not 0 < lo <= hi <= max_length:
        raise ValueError(f"bad required-length range {required_range} for max_length {max_length}")
    rng = np.random.default_rng(seed)
    req = rng.integers(lo, hi, endpoint=True, size=count)
    tasks = tuple(
        TaskSpec(id=i, required_length=int(r), max_length=max_length, base_success=base_success,
                 reference_answer=f"answer-{i}")
        for i, r in enumerate(req)
    )
    return TaskSet(tasks)


def default_task_set(seed: int = 0) -> TaskSet:
    """32 tasks, required length uniform on [20, 120], cap 256, base success 0.05."""
    return generate_task_set(32, (20, 120), 256, 0.05, seed=seed)


def success_probability(task: TaskSpec, length: int) -> float:
    if length < 0 or length > task.max_length:
        raise ValueError(f"length {length} outside [0, {task.max_length}] for task {task.id}")
    if task.sigmoid_scale is not None:
        z = (length - task.required_length) / task.sigmoid_scale
        return task.base_success + (1.0 - task.base_success) / (1.0 + math.exp(-z))
    return 1.0 if length >= task.required_length else task.base_success


def success_probabilities(task: TaskSpec, lengths: np.ndarray) -> np.ndarray:
    """Vectorised :func:`success_probability`."""
    lengths = np.asarray(lengths)
    if lengths.size and (lengths.min() < 0 or lengths.max() > task.max_length):
        raise ValueError(f"length outside [0, {task.max_length}] for task {task.id}")
    if task.sigmoid_scale is not None:
        z = (lengths - task.required_length) / task.sigmoid_scale
        return task.base_success + (1.0 - task.base_success) / (1.0 + np.exp(-z))
    return np.where(lengths >= task.required_length, 1.0, task.base_success)


@dataclass(frozen=True)
class Rollout:
    task_id: int
    actions: tuple[Action, ...]
    length: int
    correct: bool
    behavior_logprobs: tuple[float, ...]
    seed: int
    policy_version: int = 0

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "actions": [a.name for a in self.actions],
            "length": self.length,
            "correct": self.correct,
            "behavior_logprobs": list(self.behavior_logprobs),
            "seed": self.seed,
            "policy_version": self.policy_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Rollout":
        actions = tuple(Action[a] for a in d["actions"])
        logps = tuple(float(x) for x in d.get("behavior_logprobs", [0.0] * len(actions)))
        length = int(d.get("length", len(actions)))
        if length != len(actions) or len(logps) != len(actions):
            raise ValueError("rollout length does not match its actions")
        return cls(
            task_id=int(d.get("task_id", -1)),
            actions=actions,
            length=length,
            correct=bool(d.get("correct", False)),
            behavior_logprobs=logps,
            seed=int(d.get("seed", 0)),
            policy_version=int(d.get("policy_version", 0)),
        )


@dataclass
class RolloutBatch:
    """Rollouts of one iteration in array form, row ``n`` = prompt ``n // G``, sample ``n % G``."""

    task_index: np.ndarray      # (N,) index into the TaskSet
    actions: np.ndarray         # (N, H) int8, only ``t < lengths[n]`` meaningful
    lengths: np.ndarray         # (N,) int64
    correct: np.ndarray         # (N,) bool
    behavior_logp: np.ndarray   # (N, H) log-prob of the taken action under the snapshot
    policy_version: int
    group_size: int
    task_ids: np.ndarray = field(default=None)  # (N,) TaskSpec.id

    @property
    def size(self) -> int:
        return int(self.lengths.shape[0])

    def token_mask(self) -> np.ndarray:
        h = self.actions.shape[1]
        return np.arange(h)[None, :] < self.lengths[:, None]

    def rollout(self, n: int) -> Rollout:
        L = int(self.lengths[n])
        return Rollout(
            task_id=int(self.task_ids[n]),
            actions=tuple(Action(int(a)) for a in self.actions[n, :L]),
            length=L,
            correct=bool(self.correct[n]),
            behavior_logprobs=tuple(float(x) for x in self.behavior_logp[n, :L]),
            seed=n,
            policy_version=self.policy_version,
        )

    def rollouts(self) -> list[Rollout]:
        return [self.rollout(n) for n in range(self.size)]


def decode_rollouts(
    log_probs: np.ndarray,
    uniforms: np.ndarray,
    max_lengths: np.ndarray,
    row_tasks: Sequence[TaskSpec],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Turn uniform rows into trajectories.

    ``uniforms`` has shape ``(N, 1 + H)``; ``log_probs`` has shape at least
    ``(H, 5)``. Returns ``(actions, lengths, correct, behavior_logp)``.
    """
    n, width = uniforms.shape
    horizon = width - 1
    if log_probs.shape[0] < horizon:
        raise ValueError("policy horizon shorter than the uniform rows")
    log_probs = log_probs[:horizon]
    cdf = np.cumsum(np.exp(log_probs), axis=1)[:, : N_ACTIONS - 1]
    actions = (uniforms[:, 1:, None] >= cdf[None, :, :]).sum(axis=2).astype(np.int8)
    is_stop = actions == Action.STOP
    has_stop = is_stop.any(axis=1)
    lengths = np.where(has_stop, np.argmax(is_stop, axis=1) + 1, horizon)
    lengths = np.minimum(lengths, max_lengths).astype(np.int64)
    behavior_logp = log_probs[np.arange(horizon)[None, :], actions.astype(np.intp)]
    p_ok = np.array([success_probability(task, int(L)) for task, L in zip(row_tasks, lengths)])
    correct = uniforms[:, 0] < p_ok
    return actions, lengths, correct, behavior_logp


def sample_rollout(policy_snapshot: StepPolicy, task: TaskSpec, rng_seed: int) -> Rollout:
    """Sample one trajectory; identical arguments give identical rollouts."""
    rng = np.random.default_rng(rng_seed)
    u = rng.random((1, 1 + task.max_length))
    logp = policy_snapshot.step_log_probs(task.max_length)
    actions, lengths, correct, blp = decode_rollouts(logp, u, np.array([task.max_length]), [task])
    L = int(lengths[0])
    return Rollout(
        task_id=task.id,
        actions=tuple(Action(int(a)) for a in actions[0, :L]),
        length=L,
        correct=bool(correct[0]),
        behavior_logprobs=tuple(float(x) for x in blp[0, :L]),
        seed=rng_seed,
        policy_version=policy_snapshot.version,
    )


def sample_batch(
    policy_snapshot: StepPolicy,
    tasks: TaskSet,
    prompt_indices: np.ndarray,
    group_size: int,
    rng: np.random.Generator,
) -> RolloutBatch:
    """Sample ``group_size`` rollouts for each prompt in one vectorised pass."""
    task_index = np.repeat(np.asarray(prompt_indices, dtype=np.int64), group_size)
    selected = [tasks[int(i)] for i in task_index]
    max_lengths = np.array([t.max_length for t in selected], dtype=np.int64)
    horizon = int(max_lengths.max())
    uniforms = rng.random((task_index.size, 1 + horizon))
    logp = policy_snapshot.step_log_probs(horizon)
    actions, lengths, correct, blp = decode_rollouts(logp, uniforms, max_lengths, selected)
    return RolloutBatch(
        task_index=task_index,
        actions=actions,
        lengths=lengths,
        correct=correct,
        behavior_logp=blp,
        policy_version=policy_snapshot.version,
        group_size=group_size,
        task_ids=np.array([t.id for t in selected], dtype=np.int64),
    )


def is_equivalent(rollout: Rollout) -> bool:
    """Answer check; the Bernoulli draw made at sampling time stands in for it."""
    return bool(rollout.correct)
