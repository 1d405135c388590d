"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Expensive training runs are shared through module-scoped fixtures. Noisy
batch metrics called "final" are the mean over the last 100 iterations; the
final multiplier is the controller state after the last update.
"""

import json
import math
import time

import numpy as np
import pytest

from leash.cli import main
from leash.dual import DualState, ViolationEstimate, dual_update, estimate_violation
from leash.envsim import N_ACTIONS, Action, Rollout, TaskSet, TaskSpec, default_task_set, generate_task_set, sample_batch
from leash.oracle import enumerate_exact, exact_taskset, finite_difference_gradient, slackness_check
from leash.policy import (
    GroupBatch,
    PolicyParams,
    SurrogateConfig,
    TokenBatch,
    action_distribution,
    group_advantages,
    sgd_step,
    surrogate_gradient,
    surrogate_objective,
)
from leash.shaping import (
    ShapedReward,
    ShapingParams,
    one_sided_penalty,
    shaped_reward,
    two_sided_augmented_reward,
    violation,
)
from leash.trainer import TrainConfig, train

from test_analysis import FIXTURE, FIXTURE_TOTALS

SEEDS = (0, 1, 2)
TARGET = 48
LAMBDA_INIT = 0.1
TAIL = 100


def verdict(record_property, n: int, passed: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}"
    print(line)
    record_property("acceptance", line)
    assert passed, line


def tail_mean(history, column: str) -> float:
    return float(history.column(column)[-TAIL:].mean())


def first_reaching(history, threshold: float = 0.9) -> float:
    hits = np.nonzero(history.column("satisfaction_rate") >= threshold)[0]
    return float(hits[0]) if hits.size else math.inf


def run_arms(tasks: TaskSet, **overrides) -> tuple[dict, float]:
    start = time.perf_counter()
    runs = {s: train(TrainConfig(global_seed=s, target_length=TARGET, **overrides), tasks) for s in SEEDS}
    return runs, time.perf_counter() - start


@pytest.fixture(scope="module")
def default_tasks() -> TaskSet:
    return default_task_set()


@pytest.fixture(scope="module")
def adaptive(default_tasks):
    return run_arms(default_tasks, dual=DualState(lam=LAMBDA_INIT))


@pytest.fixture(scope="module")
def constant(default_tasks):
    return run_arms(default_tasks, dual=DualState(lam=LAMBDA_INIT), controller_kind="constant")[0]


@pytest.fixture(scope="module")
def unconstrained(default_tasks):
    return run_arms(default_tasks, dual=DualState(lam=0.0), controller_kind="constant")[0]


def test_criterion_1_arithmetic(record_property):
    start = time.perf_counter()
    p4000 = ShapingParams(4000)
    checks = {
        "violation(6000,4000)": (violation(6000, 4000), 0.5),
        "violation(2000,4000)": (violation(2000, 4000), -0.5),
        "penalty(8000,4000)": (one_sided_penalty(8000, 4000), 1.0),
        "shaped(+1,0.1,1).aug": (shaped_reward(1.0, 0.1, 1.0, p4000).augmented, 0.9),
        "shaped(+1,0.1,1).clip": (shaped_reward(1.0, 0.1, 1.0, p4000).clipped, 0.9),
        "shaped(-1,1,5).aug": (shaped_reward(-1.0, 1.0, 5.0, p4000).augmented, -6.0),
        "shaped(-1,1,5).clip": (shaped_reward(-1.0, 1.0, 5.0, p4000).clipped, -1.0),
        "two_sided(-1,1,0)": (two_sided_augmented_reward(-1.0, 1.0, 0, 4000), 0.0),
        "two_sided(+1,0.5,6000)": (two_sided_augmented_reward(1.0, 0.5, 6000, 4000), 0.75),
        "estimate([6000,6000,2000,2000])": (estimate_violation([6000, 6000, 2000, 2000], 4000).value, 0.0),
        "estimate([8000])": (estimate_violation([8000], 4000).value, 1.0),
        "dual(0.1,0.005,0.5)": (dual_update(DualState(0.1, step_size=0.005), ViolationEstimate(0.5, 4)).lam, 0.1025),
        "dual(0.98,0.05,1.0)": (dual_update(DualState(0.98, step_size=0.05), ViolationEstimate(1.0, 4)).lam, 1.0),
    }
    probs = action_distribution(PolicyParams(np.array([[math.log(2), 0, 0, 0, 0]])), 0)
    for i, want in enumerate([2 / 6] + [1 / 6] * 4):
        checks[f"softmax[{i}]"] = (float(probs[i]), want)
    for i, want in enumerate([1, 1, -1, -1]):
        checks[f"advantage[{i}]"] = (float(group_advantages([1, 1, -1, -1])[i]), want / (1 + 1e-8))
    p = PolicyParams(np.zeros((1, N_ACTIONS)))
    for ratio, want in ((1.5, 1.28), (0.5, 0.5)):
        behavior = float(p.log_probs()[0, Action.STOP]) - math.log(ratio)
        r = Rollout(0, (Action.STOP,), 1, True, (behavior,), 0)
        batch = [GroupBatch(0, [r], [ShapedReward(1.0, 0.0, 1.0, 1.0)], advantages=np.array([1.0]))]
        checks[f"surrogate(rho={ratio})"] = (surrogate_objective(p, p, batch, SurrogateConfig()), want)
    g = np.zeros((1, N_ACTIONS))
    g[0, 2] = 2.0
    checks["sgd(g=2,lr=0.1)"] = (float(sgd_step(p, g, SurrogateConfig(learning_rate=0.1)).logits[0, 2]), 0.2)
    elapsed = time.perf_counter() - start
    wrong = {k: v for k, v in checks.items() if abs(v[0] - v[1]) > 1e-12}
    verdict(record_property, 1, not wrong and elapsed < 1.0,
            f"{len(checks) - len(wrong)}/{len(checks)} examples exact to 1e-12 in {elapsed:.3f}s"
            + (f"; mismatches {wrong}" if wrong else ""))


def test_criterion_2_gradient(record_property):
    start = time.perf_counter()
    cfg = SurrogateConfig()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        tasks = TaskSet(tuple(TaskSpec(i, int(rng.integers(1, 4)), 3, float(rng.uniform(0, 0.5))) for i in range(3)))
        snap = PolicyParams(rng.normal(0, 1, size=(3, N_ACTIONS)))
        batch = sample_batch(snap, tasks, rng.integers(0, 3, 4), 4, rng)
        tokens = TokenBatch.from_rollout_batch(batch, rng.normal(size=(4, 4)))
        # small perturbation keeps every ratio strictly inside the clip band
        params = snap.with_logits(snap.logits + rng.uniform(-0.03, 0.03, size=snap.logits.shape))
        analytic = surrogate_gradient(params, snap, tokens, cfg)
        numeric = finite_difference_gradient(lambda q: surrogate_objective(q, snap, tokens, cfg), params, h=1e-5)
        worst = max(worst, float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)))
    elapsed = time.perf_counter() - start
    verdict(record_property, 2, worst < 1e-5 and elapsed < 30.0,
            f"worst relative error {worst:.2e} over 50 instances in {elapsed:.2f}s")


def test_criterion_3_oracle_agreement(record_property):
    start = time.perf_counter()
    n = 100_000
    group = 8
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(2000 + seed)
        cap = int(rng.integers(2, 13))
        task = TaskSpec(0, int(rng.integers(1, cap + 1)), cap, float(rng.uniform(0, 0.5)))
        policy = PolicyParams(rng.normal(0, 1, size=(cap, N_ACTIONS)))
        shaping = ShapingParams(int(rng.integers(1, cap + 1)))
        exact = enumerate_exact(policy, task, 0.0, shaping)
        batch = sample_batch(policy, TaskSet((task,)), np.zeros(n // group, dtype=int), group, rng)
        r = np.where(batch.correct, 1.0, -1.0)
        v = batch.lengths / shaping.target_length - 1.0
        for sample, truth in ((r, exact.expected_task_reward), (v, exact.expected_violation)):
            se = sample.std(ddof=1) / math.sqrt(sample.size)
            err = abs(sample.mean() - truth)
            # a constant sample (e.g. a task no rollout can solve) must match exactly
            worst = max(worst, err / se if se > 0 else (0.0 if err < 1e-12 else math.inf))
    elapsed = time.perf_counter() - start
    verdict(record_property, 3, worst <= 3.0 and elapsed < 60.0,
            f"largest deviation {worst:.2f} standard errors over 10 pairs x (J_R, J_P) in {elapsed:.1f}s")


def test_criterion_4_constraint_satisfaction(record_property, adaptive):
    runs, elapsed = adaptive
    sat = np.mean([h.column("satisfaction_rate") for h in runs.values()], axis=0)
    length = np.mean([h.column("mean_length") for h in runs.values()], axis=0)
    ok = np.nonzero((sat >= 0.9) & (length <= 1.1 * TARGET))[0]
    reached = int(ok[0]) if ok.size else None
    verdict(record_property, 4, reached is not None and elapsed < 300.0,
            f"seed-averaged satisfaction >= 0.9 with mean length <= {1.1 * TARGET:.1f} first at iteration {reached}; "
            f"final satisfaction {np.mean(sat[-TAIL:]):.3f}, length {np.mean(length[-TAIL:]):.1f}; "
            f"3 runs in {elapsed:.0f}s")


def test_criterion_5_lambda_shape(record_property, adaptive):
    runs, _ = adaptive
    parts, ok = [], True
    for seed, h in runs.items():
        peak = float(h.column("lambda").max())
        final = h.final_dual.lam
        ok &= peak > LAMBDA_INIT and final < 0.5 * peak
        parts.append(f"seed {seed} peak {peak:.3f} final {final:.3f}")
    verdict(record_property, 5, ok, "; ".join(parts))


def test_criterion_6_adaptive_vs_constant(record_property, adaptive, constant):
    runs, _ = adaptive
    faster = sum(first_reaching(runs[s]) <= first_reaching(constant[s]) for s in SEEDS)
    len_a = np.mean([tail_mean(runs[s], "mean_length") for s in SEEDS])
    len_c = np.mean([tail_mean(constant[s], "mean_length") for s in SEEDS])
    reach = ", ".join(f"{first_reaching(runs[s]):.0f} vs {first_reaching(constant[s]):.0f}" for s in SEEDS)
    verdict(record_property, 6, faster >= 2 and len_a <= 1.05 * len_c,
            f"iterations to 90% satisfaction adaptive vs constant: {reach} ({faster}/3 no slower); "
            f"final length {len_a:.1f} vs {len_c:.1f}")


def accuracy_ceiling(tasks: TaskSet, target: int, satisfied: float = 0.9) -> float:
    """Best accuracy any length allocation can reach while keeping `satisfied` of rollouts at or under target.

    Lengths above the target are spent on the tasks that fail at the target, which is the most generous use.
    """
    w = tasks.weights_array()
    solved = np.array([t.required_length <= target for t in tasks.tasks])
    base = np.array([t.base_success for t in tasks.tasks])
    at_target = float(np.sum(w * np.where(solved, 1.0, base)))
    unsolved_mass = float(np.sum(w[~solved]))
    lift = float(np.sum(w[~solved] * (1.0 - base[~solved]))) / max(unsolved_mass, 1e-12)
    return at_target + min(1.0 - satisfied, unsolved_mass) * lift


def test_criterion_7_accuracy_preserved(record_property, adaptive, unconstrained, default_tasks):
    runs, _ = adaptive
    acc_c = np.mean([tail_mean(runs[s], "mean_accuracy") for s in SEEDS])
    acc_u = np.mean([tail_mean(unconstrained[s], "mean_accuracy") for s in SEEDS])
    ceiling = accuracy_ceiling(default_tasks, TARGET)
    verdict(record_property, 7, abs(acc_c - acc_u) <= 0.05,
            f"final accuracy constrained {acc_c:.3f} vs unconstrained {acc_u:.3f} (gap {100 * abs(acc_c - acc_u):.1f} pts); "
            f"any policy meeting 90% satisfaction at L_t={TARGET} is capped at {ceiling:.3f} on this task set")


def test_criterion_8_two_sided_collapse(record_property):
    tasks = generate_task_set(32, (40, 60), 256, 0.0, seed=1)
    common = dict(iterations=1000, controller_kind="constant", dual=DualState(lam=1.0))
    parts, ok = [], True
    for seed in SEEDS:
        one = train(TrainConfig(global_seed=seed, target_length=TARGET, penalty_kind="one_sided", **common), tasks)
        two = train(TrainConfig(global_seed=seed, target_length=TARGET, penalty_kind="two_sided", **common), tasks)
        len_two = tail_mean(two, "mean_length")
        gap = tail_mean(one, "mean_accuracy") - tail_mean(two, "mean_accuracy")
        ok &= len_two < 0.5 * TARGET and gap >= 0.20
        parts.append(f"seed {seed} two-sided length {len_two:.1f}, accuracy gap {100 * gap:.1f} pts")
    verdict(record_property, 8, ok, "; ".join(parts))


def test_criterion_9_slackness(record_property, adaptive, default_tasks):
    runs, _ = adaptive
    parts, ok = [], True
    for seed, h in runs.items():
        lam = h.final_dual.lam
        cfg = TrainConfig(target_length=TARGET)
        jp = exact_taskset(h.final_policy, default_tasks, lam, cfg.shaping).expected_violation
        passed = slackness_check(lam, jp, 0.05, cfg.dual.lambda_min, cfg.dual.lambda_max)
        ok &= passed
        parts.append(f"seed {seed} lambda {lam:.4f} J_P {jp:+.4f} lambda*J_P {lam * jp:+.4f}")
    verdict(record_property, 9, ok, "; ".join(parts))


def test_criterion_10_keyword_counter(record_property):
    from leash.analysis import count_keywords

    misses = [s for s, *want in FIXTURE if list(count_keywords(s).values()) != want]
    totals = count_keywords("\n".join(s for s, *_ in FIXTURE))
    verdict(record_property, 10, not misses and totals == FIXTURE_TOTALS and len(FIXTURE) == 20,
            f"{20 - len(misses)}/20 sentences exact; totals {totals}")


def test_criterion_11_determinism(record_property, tmp_path):
    cfg = {"batch_size": 8, "group_size": 4, "iterations": 30, "global_seed": 4,
           "tasks": {"count": 6, "required_min": 5, "required_max": 20, "max_length": 40, "base_success": 0.05}}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    same = {}
    for verb, csv_name in (("train", "metrics.csv"), ("ablate", "comparison.csv")):
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{verb}_{rep}"
            assert main([verb, "--config", str(path), "--out", str(out)]) == 0
            outs.append((out / csv_name).read_bytes())
        same[verb] = outs[0] == outs[1]
        if verb == "ablate":
            arms = sorted(p.name for p in (tmp_path / "ablate_a").iterdir() if p.is_dir())
            same["ablate arms"] = all(
                (tmp_path / "ablate_a" / a / "metrics.csv").read_bytes()
                == (tmp_path / "ablate_b" / a / "metrics.csv").read_bytes() for a in arms)
    verdict(record_property, 11, all(same.values()), f"byte-identical reruns: {same}")
