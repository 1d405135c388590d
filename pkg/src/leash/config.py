"""Run configuration files (JSON or TOML) and their validation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import tomli

from leash.dual import DualState
from leash.envsim import TaskSet, default_task_set, generate_task_set, load_task_set
from leash.policy import AGGREGATIONS, SurrogateConfig
from leash.shaping import ShapingParams
from leash.trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the file and the offending field."""


_TOP = {
    "batch_size": int,
    "group_size": int,
    "target_length": int,
    "iterations": int,
    "controller_kind": str,
    "penalty_kind": str,
    "global_seed": int,
    "bucket_width": int,
    "init_stop_prob": float,
    "fresh_rollouts_for_dual": bool,
    "early_stop": bool,
}
_SECTIONS = {
    "shaping": {"reward_clip_low": float, "reward_clip_high": float},
    "dual": {"lambda_init": float, "lambda_min": float, "lambda_max": float, "step_size": float},
    "surrogate": {"eps_low": float, "eps_high": float, "learning_rate": float, "aggregation": str},
}
_TASK_GEN = {
    "count": int,
    "required_min": int,
    "required_max": int,
    "max_length": int,
    "base_success": float,
    "seed": int,
}


@dataclass(frozen=True)
class RunSpec:
    config: TrainConfig
    tasks: TaskSet

    def to_dict(self) -> dict:
        d = self.config.to_dict()
        d["tasks"] = self.tasks.to_dict()
        return d


def _typed(value: Any, kind: type, where: str) -> Any:
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _section(raw: dict, schema: dict, where: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a table/object")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return {k: _typed(v, schema[k], f"{where}.{k}") for k, v in raw.items()}


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            return tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _norm_kind(value: str) -> str:
    return value.replace("-", "_")


def _tasks_from(raw: Any, base_dir: Path, where: str) -> TaskSet:
    if raw is None:
        return default_task_set()
    try:
        if isinstance(raw, str):
            p = Path(raw)
            p = p if p.is_absolute() else base_dir / p
            if not p.is_file():
                raise ConfigError(f"{where}: task file {p} not found")
            return load_task_set(p)
        if isinstance(raw, dict) and "schema_version" in raw:
            return TaskSet.from_dict(raw)
        spec = _section(raw, _TASK_GEN, where)
        missing = sorted(set(_TASK_GEN) - {"seed"} - set(spec))
        if missing:
            raise ConfigError(f"{where}: generator spec missing {', '.join(missing)}")
        return generate_task_set(
            spec["count"], (spec["required_min"], spec["required_max"]),
            spec["max_length"], spec["base_success"], seed=spec.get("seed", 0),
        )
    except (ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None


def build_run(data: dict, source: str = "<config>", base_dir: Path | None = None) -> RunSpec:
    base_dir = base_dir or Path.cwd()
    allowed = set(_TOP) | set(_SECTIONS) | {"tasks"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
    top = {k: _typed(v, _TOP[k], f"{source}: field '{k}'") for k, v in data.items() if k in _TOP}
    for k in ("controller_kind", "penalty_kind"):
        if k in top:
            top[k] = _norm_kind(top[k])
    sections = {name: _section(data.get(name, {}), schema, f"{source}: section '{name}'")
                for name, schema in _SECTIONS.items()}
    tasks = _tasks_from(data.get("tasks"), base_dir, f"{source}: field 'tasks'")
    try:
        dual_raw = sections["dual"]
        dual = DualState(
            lam=dual_raw.get("lambda_init", DualState.lam),
            lambda_min=dual_raw.get("lambda_min", DualState.lambda_min),
            lambda_max=dual_raw.get("lambda_max", DualState.lambda_max),
            step_size=dual_raw.get("step_size", DualState.step_size),
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: section 'dual': {exc}") from None
    try:
        surrogate = SurrogateConfig(**sections["surrogate"])
        if not surrogate.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
    except ValueError as exc:
        raise ConfigError(f"{source}: section 'surrogate': {exc} (aggregations: {sorted(AGGREGATIONS)})") from None
    target = top.get("target_length", TrainConfig.target_length)
    try:
        shaping = ShapingParams(target, **sections["shaping"])
        cfg = TrainConfig(shaping=shaping, dual=dual, surrogate=surrogate, **top)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return RunSpec(cfg, tasks)


def load_run(path: str | Path) -> RunSpec:
    path = Path(path)
    return build_run(read_config_file(path), str(path), path.parent)
