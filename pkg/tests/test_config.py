import json

import pytest

from leash.config import ConfigError, build_run, load_run
from leash.envsim import default_task_set


def test_defaults():
    spec = build_run({})
    assert spec.tasks == default_task_set()
    cfg = spec.config
    assert (cfg.batch_size, cfg.group_size, cfg.target_length) == (64, 8, 48)
    assert (cfg.dual.lam, cfg.dual.step_size, cfg.dual.lambda_max) == (0.1, 0.005, 1.0)
    assert (cfg.surrogate.eps_low, cfg.surrogate.eps_high) == (0.2, 0.28)


def test_sections_and_kinds():
    spec = build_run({
        "penalty_kind": "two-sided-clipped",
        "dual": {"lambda_init": 0.3, "step_size": 0.01},
        "surrogate": {"learning_rate": 10},
        "shaping": {"reward_clip_low": -2.0},
    })
    assert spec.config.penalty_kind == "two_sided_clipped"
    assert spec.config.dual.lam == 0.3 and spec.config.dual.step_size == 0.01
    assert spec.config.surrogate.learning_rate == 10.0
    assert spec.config.shaping.reward_clip_low == -2.0


@pytest.mark.parametrize("data,needle", [
    ({"batchsize": 4}, "batchsize"),
    ({"batch_size": "4"}, "batch_size"),
    ({"batch_size": True}, "batch_size"),
    ({"dual": {"lambda": 0.2}}, "lambda"),
    ({"dual": {"lambda_init": 2.0}}, "dual"),
    ({"surrogate": {"learning_rate": 0}}, "learning_rate"),
    ({"group_size": 1}, "group_size"),
    ({"tasks": {"count": 3}}, "missing"),
    ({"tasks": "nowhere.json"}, "nowhere.json"),
])
def test_rejections_name_the_field(data, needle):
    with pytest.raises(ConfigError, match=needle):
        build_run(data, "cfg.json")


def test_resolved_config_roundtrip(tmp_path):
    spec = build_run({"iterations": 5, "global_seed": 9, "dual": {"lambda_init": 0.2},
                      "tasks": {"count": 3, "required_min": 2, "required_max": 4, "max_length": 8,
                                "base_success": 0.0}})
    path = tmp_path / "resolved.json"
    path.write_text(json.dumps(spec.to_dict()))
    again = load_run(path)
    assert again == spec
    assert again.config.fingerprint(again.tasks) == spec.config.fingerprint(spec.tasks)


def test_toml(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('iterations = 7\n[dual]\nlambda_init = 0.25\n[tasks]\ncount = 2\nrequired_min = 3\n'
                    'required_max = 5\nmax_length = 9\nbase_success = 0.1\n')
    spec = load_run(path)
    assert spec.config.iterations == 7 and spec.config.dual.lam == 0.25 and len(spec.tasks) == 2
    path.write_text("iterations = = 3\n")
    with pytest.raises(ConfigError, match="run.toml"):
        load_run(path)
