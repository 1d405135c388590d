"""Command line entry point: ``leash {train,eval,ablate,analyze,gen-tasks}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Log verbosity comes from the ``LEASH_LOG`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

import leash
from leash import analysis, oracle, report
from leash.config import ConfigError, RunSpec, build_run, load_run
from leash.envsim import Rollout, generate_task_set, load_task_set, sample_rollout, save_task_set
from leash.policy import PolicyParams
from leash.trainer import TrainHistory, train

log = logging.getLogger("leash")

ARMS = (
    ("adaptive", "one_sided"),
    ("constant", "one_sided"),
    ("adaptive", "two_sided"),
    ("constant", "two_sided"),
)
COMPARISON_COLUMNS = ("mean_length", "satisfaction_rate", "lambda", "mean_accuracy")


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("LEASH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _resolve_run(args: argparse.Namespace) -> RunSpec:
    spec = load_run(args.config) if args.config else build_run({}, "<defaults>")
    overrides = {}
    if args.seed is not None:
        overrides["global_seed"] = args.seed
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.controller is not None:
        overrides["controller_kind"] = args.controller
    if args.penalty is not None:
        overrides["penalty_kind"] = args.penalty.replace("-", "_")
    if overrides:
        try:
            spec = RunSpec(replace(spec.config, **overrides), spec.tasks)
        except ValueError as exc:
            raise ConfigError(f"command-line override: {exc}") from None
    return spec


def _prepare_out(path: str) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path {out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(spec: RunSpec, history: TrainHistory | None, command: str) -> dict:
    return {
        "command": command,
        "fingerprint": spec.config.fingerprint(spec.tasks),
        "seed": spec.config.global_seed,
        "versions": {"leash": leash.__version__, "numpy": np.__version__, "python": platform.python_version()},
        "iterations_completed": len(history.metrics) if history else 0,
        "final_lambda": history.final_dual.lam if history else None,
        # a valid config file: ``leash train --config manifest-config.json`` reruns this exactly
        "config": spec.to_dict(),
    }


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_into(out: Path, spec: RunSpec, command: str) -> TrainHistory:
    history = train(spec.config, spec.tasks, metrics_path=out / "metrics.csv")
    history.final_policy.save(out / "policy.json")
    manifest = _manifest(spec, history, command)
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "config.resolved.json", manifest["config"])
    label = f"{spec.config.controller_kind}/{spec.config.penalty_kind}"
    report.plot_dynamics({label: history.metrics}, out / "dynamics.svg", spec.config.target_length)
    report.plot_length_accuracy({label: history.metrics}, out / "length_accuracy.svg")
    return history


def cmd_train(args: argparse.Namespace) -> int:
    spec = _resolve_run(args)
    out = _prepare_out(args.out)
    history = _run_into(out, spec, "train")
    last = history.metrics[-1] if history.metrics else None
    if last:
        print(f"{len(history.metrics)} iterations; final mean length {last.mean_length:.2f}, "
              f"satisfaction {last.satisfaction_rate:.3f}, lambda {history.final_dual.lam:.4f}")
    print(f"wrote {out / 'metrics.csv'}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    spec = _resolve_run(args)
    out = _prepare_out(args.out)
    two_sided = (args.penalty or "two-sided").replace("-", "_")
    if two_sided == "one_sided":
        two_sided = "two_sided"
    histories = {}
    for controller, penalty in ARMS:
        penalty = two_sided if penalty != "one_sided" else penalty
        name = f"{controller}_{penalty}"
        cfg = replace(spec.config, controller_kind=controller, penalty_kind=penalty)
        arm_dir = out / name
        arm_dir.mkdir(exist_ok=True)
        histories[name] = _run_into(arm_dir, RunSpec(cfg, spec.tasks), "ablate")
        log.info("arm %s done", name)
    n_rows = max(len(h.metrics) for h in histories.values())
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration"] + [f"{arm}.{col}" for arm in histories for col in COMPARISON_COLUMNS])
        for i in range(n_rows):
            row = [str(i)]
            for h in histories.values():
                if i < len(h.metrics):
                    m = h.metrics[i]
                    vals = (m.mean_length, m.satisfaction_rate, m.lam, m.mean_accuracy)
                    row += [f"{v:.6g}" for v in vals]
                else:
                    row += [""] * len(COMPARISON_COLUMNS)
            w.writerow(row)
    report.plot_dynamics({k: h.metrics for k, h in histories.items()}, out / "comparison.svg",
                         spec.config.target_length)
    print(f"wrote {len(histories)} arms and {out / 'comparison.csv'}")
    return 0


def _eval_seed(seed: int, task_index: int, sample: int) -> int:
    return int(np.random.SeedSequence([seed, task_index, sample]).generate_state(1, np.uint64)[0])


def cmd_eval(args: argparse.Namespace) -> int:
    policy_path = Path(args.policy)
    if not policy_path.is_file():
        raise UsageError(f"policy file {policy_path} not found")
    spec = _resolve_run(args)
    tasks = spec.tasks
    if args.tasks:
        try:
            tasks = load_task_set(args.tasks)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{args.tasks}: {exc}") from None
    out = _prepare_out(args.out)
    try:
        policy = PolicyParams.load(policy_path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{policy_path}: {exc}") from None
    if policy.horizon < tasks.horizon:
        raise ConfigError(f"{policy_path}: policy covers {policy.horizon} steps, tasks need {tasks.horizon}")
    lam = args.lam if args.lam is not None else spec.config.dual.lam
    seed = spec.config.global_seed
    rollouts: list[Rollout] = []
    with open(out / "eval.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id", "required_length", "expected_length", "expected_accuracy", "expected_task_reward",
                    "expected_violation", "sampled_mean_length", "sampled_accuracy", "samples"])
        for i, task in enumerate(tasks.tasks):
            ex = oracle.exact_expectations(policy, task, lam, spec.config.shaping)
            batch = [sample_rollout(policy, task, _eval_seed(seed, i, j)) for j in range(args.samples)]
            rollouts += batch
            w.writerow([task.id, task.required_length] + [f"{v:.6g}" for v in (
                ex.expected_length, ex.expected_accuracy, ex.expected_task_reward, ex.expected_violation,
                np.mean([r.length for r in batch]), np.mean([r.correct for r in batch]))] + [args.samples])
    agg = oracle.exact_taskset(policy, tasks, lam, spec.config.shaping)
    _write_json(out / "rollouts.json", {"rollouts": [r.to_dict() for r in rollouts]})
    summary = {
        "expected_length": agg.expected_length,
        "expected_accuracy": agg.expected_accuracy,
        "expected_task_reward": agg.expected_task_reward,
        "expected_violation": agg.expected_violation,
        "lambda": lam,
        "slackness_ok": oracle.slackness_check(lam, agg.expected_violation, args.slackness_tol,
                                               spec.config.dual.lambda_min, spec.config.dual.lambda_max),
    }
    _write_json(out / "eval_summary.json", summary)
    print(f"expected length {agg.expected_length:.2f}, expected accuracy {agg.expected_accuracy:.4f}, "
          f"J_P {agg.expected_violation:+.4f}")
    return 0


def _read_analysis_input(path: Path) -> tuple[str, list, int]:
    """Return ``(kind, records, n_invalid)`` where kind is ``text`` or ``rollouts``."""
    raw = path.read_text(encoding="utf-8")
    records: list = []
    try:
        doc = json.loads(raw) if raw.strip() else None
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict) and isinstance(doc.get("rollouts"), list):
        records = doc["rollouts"]
    elif isinstance(doc, list):
        records = doc
    elif raw.strip():
        for line in raw.splitlines():
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                records.append(None)
    kind = None
    parsed: list = []
    bad = 0
    for rec in records:
        item, rec_kind = None, None
        if isinstance(rec, dict) and isinstance(rec.get("text"), str):
            item, rec_kind = rec["text"], "text"
        elif isinstance(rec, dict) and isinstance(rec.get("actions"), list):
            try:
                item, rec_kind = Rollout.from_dict(rec), "rollouts"
            except (KeyError, ValueError, TypeError):
                item = None
        if item is None or (kind is not None and rec_kind != kind):
            bad += 1
            continue
        kind = rec_kind
        parsed.append(item)
    return kind or "text", parsed, bad


def _load_groups(path: str | None) -> analysis.KeywordGroups:
    if not path:
        return analysis.KeywordGroups()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return analysis.KeywordGroups(**{k: tuple(v) for k, v in data.items()})
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: invalid keyword groups: {exc}") from None


def cmd_analyze(args: argparse.Namespace) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"input file {src} not found")
    groups = _load_groups(args.groups)
    out = _prepare_out(args.out)
    kind, items, bad = _read_analysis_input(src)
    if bad:
        print(f"warning: skipped {bad} malformed record(s)", file=sys.stderr)
    if not items:
        print(f"error: no valid records in {src}", file=sys.stderr)
        return 1
    stats = analysis.rollout_behavior_stats(items) if kind == "rollouts" else analysis.text_behavior_stats(items, groups)
    with open(out / "behavior.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "mean_count"])
        for g in analysis.GROUP_NAMES:
            w.writerow([g, f"{stats.mean_counts[g]:.6g}"])
    with open(out / "length_stats.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["mean_length", f"{stats.mean_length:.6g}"])
        w.writerow(["sample_count", stats.sample_count])
        w.writerow(["skipped", bad])
    report.plot_behavior({src.stem: stats.mean_counts}, out / "behavior.svg")
    print(f"{stats.sample_count} {kind} record(s); skipped {bad}")
    return 0


def cmd_gen_tasks(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    try:
        tasks = generate_task_set(args.count, (args.required_min, args.required_max), args.max_length,
                                  args.base_success, seed=args.seed if args.seed is not None else 0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    save_task_set(tasks, out)
    print(f"wrote {len(tasks)} tasks to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leash", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=leash.__version__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def run_flags(p: argparse.ArgumentParser, out_default: str) -> None:
        p.add_argument("--config", help="JSON or TOML run configuration")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--seed", type=int, help="override global_seed")
        p.add_argument("--iterations", type=int, help="override iterations")
        p.add_argument("--controller", choices=["adaptive", "constant"])
        p.add_argument("--penalty", choices=["one-sided", "two-sided", "two-sided-clipped"])

    p = sub.add_parser("train", help="run one primal-dual training job")
    run_flags(p, "runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="adaptive vs constant x one-sided vs two-sided on shared seeds")
    run_flags(p, "runs/ablate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="exact and sampled evaluation of a saved policy")
    run_flags(p, "runs/eval")
    p.add_argument("--policy", required=True, help="policy JSON written by train")
    p.add_argument("--tasks", help="task set JSON (defaults to the config's tasks)")
    p.add_argument("--samples", type=int, default=16, help="rollouts per task")
    p.add_argument("--lambda", dest="lam", type=float, help="multiplier used for shaped-reward expectations")
    p.add_argument("--slackness-tol", type=float, default=0.05)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="keyword / marker-action behaviour statistics")
    p.add_argument("--input", required=True, help="JSONL of {id, text} records, or rollout JSON")
    p.add_argument("--groups", help="JSON object with summary/rethink/plan keyword lists")
    p.add_argument("--out", default="runs/analyze")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen-tasks", help="synthesise a task set")
    p.add_argument("--out", required=True, help="task JSON to write")
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--required-min", type=int, default=20)
    p.add_argument("--required-max", type=int, default=120)
    p.add_argument("--max-length", type=int, default=256)
    p.add_argument("--base-success", type=float, default=0.05)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_tasks)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
