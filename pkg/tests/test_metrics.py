from types import SimpleNamespace

import numpy as np
import pytest

from share_grpo.env import generate_question
from share_grpo.metrics import (
    CSV_COLUMNS,
    StepMetrics,
    eval_accuracy,
    metrics_csv,
    read_metrics_csv,
    reward_density,
    valid_advantage_ratio,
)
from share_grpo.policy import SEQ_LEN, VOCAB, PolicyParams, feature_dim
from share_grpo.reward import RewardTensor


def fake_round(*tables):
    seeds = []
    for values, acc in tables:
        r = RewardTensor(np.asarray(values, float), np.asarray(acc), np.ones_like(np.asarray(acc)))
        seeds.append(SimpleNamespace(rewards=r))
    return SimpleNamespace(seeds=seeds)


def test_density_counts_correct_trajectories():
    rnd = fake_round(([[1.5, 0.5], [0.5, 0.5]], [[1, 0], [0, 0]]), ([[1.5, 1.5], [1.5, 0]], [[1, 1], [1, 0]]))
    assert reward_density(rnd) == pytest.approx(4 / 8)


def test_valid_ratio_pooled_vs_local():
    rnd = fake_round(([[1, 1], [0, 0]], [[1, 1], [0, 0]]), ([[0, 0], [0, 0]], [[0, 0], [0, 0]]))
    assert valid_advantage_ratio(rnd, "pooled") == 0.5
    assert valid_advantage_ratio(rnd, "per_variant") == 0.0
    assert valid_advantage_ratio(rnd, "local") == 0.0


def test_valid_ratio_rejects_unknown_grouping():
    with pytest.raises(ValueError):
        valid_advantage_ratio(fake_round(([[1]], [[1]])), "both")


def test_empty_round_raises():
    with pytest.raises(ValueError):
        reward_density(SimpleNamespace(seeds=[]))


def test_uniform_policy_eval_accuracy_is_zero():
    # greedy decoding of an all-zero policy emits token 0 everywhere, which is never well formed
    params = PolicyParams.zeros(feature_dim(3))
    assert eval_accuracy(params, [generate_question(2 * i + 1) for i in range(20)]) == 0.0


def test_step_metrics_validation():
    ok = dict(step=0, mean_reward=0.1, reward_density=0.1, valid_adv_ratio_pooled=0.5,
              valid_adv_ratio_local=0.4, eval_accuracy=0.2, mean_kl=0.0, clip_fraction=0.0, dropped_seeds=0)
    StepMetrics(**ok)
    with pytest.raises(ValueError):
        StepMetrics(**{**ok, "reward_density": 1.5})
    with pytest.raises(ValueError):
        StepMetrics(**{**ok, "mean_kl": -1e-3})


def test_csv_round_trip_and_column_order():
    rows = [StepMetrics(s, 0.1 * s, 0.1, 0.5, 0.25, 1 / 3, 1e-17, 0.0, s) for s in range(3)]
    text = metrics_csv(rows)
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    back = read_metrics_csv(text)
    assert [r["eval_accuracy"] for r in back] == [1 / 3] * 3
    assert back[2]["mean_reward"] == 0.1 * 2


def test_csv_reader_rejects_wrong_header():
    with pytest.raises(ValueError):
        read_metrics_csv("a,b\n1,2\n")
