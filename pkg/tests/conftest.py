import numpy as np
import pytest

from leash.envsim import N_ACTIONS, Action, TaskSpec
from leash.policy import PolicyParams

BIG = 50.0  # logit gap that makes an action certain in float64


def stop_at(step: int, horizon: int) -> PolicyParams:
    """Policy that thinks until ``step`` then stops with certainty."""
    logits = np.zeros((horizon, N_ACTIONS))
    logits[:, Action.STOP] = -BIG
    if step < horizon:
        logits[step, Action.STOP] = BIG
    return PolicyParams(logits)


def always_stop(horizon: int) -> PolicyParams:
    return stop_at(0, horizon)


def never_stop(horizon: int) -> PolicyParams:
    logits = np.zeros((horizon, N_ACTIONS))
    logits[:, Action.STOP] = -BIG
    return PolicyParams(logits)


def random_policy(rng: np.random.Generator, horizon: int, scale: float = 1.0) -> PolicyParams:
    return PolicyParams(rng.normal(0.0, scale, size=(horizon, N_ACTIONS)))


@pytest.fixture
def small_task() -> TaskSpec:
    return TaskSpec(id=7, required_length=4, max_length=8, base_success=0.1)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Echo the per-criterion lines recorded by the acceptance suite."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "") != "call":
                continue
            lines += [value for name, value in rep.user_properties if name == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
