import json

import pytest

from share_grpo import cli
from share_grpo.config import ConfigError, DuplicateRunNameError, ExperimentSpec, TrainConfig


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.algo, cfg.m, cfg.n, cfg.p, cfg.temperature) == ("share_grpo", 2, 6, 0.3, 0.7)
    assert (cfg.clip_eps, cfg.learning_rate, cfg.ppo_epochs, cfg.batch_seed_questions, cfg.steps) == (0.2, 0.05, 1, 32, 300)
    assert cfg.kl_beta == 0.0 and TrainConfig(algo="grpo").kl_beta == 0.01


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        TrainConfig(m=0)
    with pytest.raises(ConfigError):
        TrainConfig(p=1.5)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})


def test_config_dict_round_trip():
    cfg = TrainConfig(algo="grpo", n=12, p=0.0, rng_seed=4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_replace_updates_default_beta_with_algo():
    assert TrainConfig().replace(algo="grpo").kl_beta == 0.01
    assert TrainConfig(kl_beta=0.3).replace(algo="grpo").kl_beta == 0.3


def test_experiment_duplicate_names():
    spec = {"runs": [{"name": "a", "config": {}}, {"name": "a", "config": {"m": 4}}]}
    with pytest.raises(DuplicateRunNameError):
        ExperimentSpec.from_dict(spec)


def parse_train(argv):
    return cli.resolve_train_config(cli.build_parser().parse_args(["train", "--out", "x", *argv]))


def test_flag_overrides_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"m": 3, "n": 5}))
    cfg = parse_train(["--config", str(path), "--m", "4"])
    assert (cfg.m, cfg.n) == (4, 5)


def test_config_file_overrides_defaults(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"temperature": 1.1}))
    assert parse_train(["--config", str(path)]).temperature == 1.1


def test_hyphenated_algo_and_bool_flag():
    cfg = parse_train(["--algo", "share-grpo", "--dynamic-sampling", "true", "--seed", "3"])
    assert cfg.algo == "share_grpo" and cfg.dynamic_sampling and cfg.rng_seed == 3


def test_invalid_m_exits_2(tmp_path, capsys):
    assert cli.main(["train", "--m", "0", "--out", str(tmp_path / "r")]) == cli.EXIT_CONFIG
    assert "m must be >= 1" in capsys.readouterr().err


def test_unknown_flag_exits_5(tmp_path):
    assert cli.main(["train", "--bogus", "1", "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_list_transforms(capsys):
    assert cli.main(["list-transforms"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [l.split("\t")[0] for l in lines] == ["row_rotate", "row_reverse", "transpose"]
    assert lines[0].split("\t")[2] == "2,0,1"


def test_train_then_compare(tmp_path, capsys):
    a, b = tmp_path / "share", tmp_path / "grpo"
    common = ["--steps", "3", "--batch-seed-questions", "4", "--eval-size", "20"]
    assert cli.main(["train", "--out", str(a), *common]) == 0
    assert cli.main(["train", "--algo", "grpo", "--n", "12", "--p", "0", "--out", str(b), *common]) == 0
    capsys.readouterr()
    assert cli.main(["compare", "--runs", str(a), str(b)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary) == {"share", "grpo"}
    assert summary["grpo"]["algo"] == "grpo" and summary["share"]["steps"] == 3


def test_compare_duplicate_names_exit_6(tmp_path):
    for parent in ("x", "y"):
        (tmp_path / parent / "run").mkdir(parents=True)
    code = cli.main(["compare", "--runs", str(tmp_path / "x" / "run"), str(tmp_path / "y" / "run")])
    assert code == cli.EXIT_RUN_NAMES


def test_compare_missing_run_exits_2(tmp_path):
    assert cli.main(["compare", "--runs", str(tmp_path / "nothing")]) == cli.EXIT_CONFIG


def test_experiment_runs_every_job(tmp_path):
    spec = {
        "output_root": str(tmp_path / "out"),
        "eval_size": 10,
        "runs": [{"name": n, "config": {"steps": 2, "batch_seed_questions": 2, "m": m}} for n, m in (("m1", 1), ("m2", 2))],
    }
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    assert cli.main(["experiment", "--spec", str(path)]) == 0
    assert (tmp_path / "out" / "m2" / "metrics.csv").exists()
