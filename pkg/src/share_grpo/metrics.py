"""Per-step diagnostics: reward density, valid-advantage ratio, greedy accuracy."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from share_grpo.env import Question
from share_grpo.policy import PolicyParams, featurize, greedy_tokens
from share_grpo.reward import score_tokens

CSV_COLUMNS = (
    "step",
    "mean_reward",
    "reward_density",
    "valid_adv_ratio_pooled",
    "valid_adv_ratio_local",
    "eval_accuracy",
    "mean_kl",
    "clip_fraction",
    "dropped_seeds",
)


@dataclass(frozen=True)
class StepMetrics:
    step: int
    mean_reward: float
    reward_density: float
    valid_adv_ratio_pooled: float
    valid_adv_ratio_local: float
    eval_accuracy: float
    mean_kl: float
    clip_fraction: float
    dropped_seeds: int

    def __post_init__(self):
        for name in ("reward_density", "valid_adv_ratio_pooled", "valid_adv_ratio_local",
                     "eval_accuracy", "clip_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if not self.mean_kl >= 0.0:
            raise ValueError(f"mean_kl={self.mean_kl} is negative")


assert tuple(f.name for f in fields(StepMetrics)) == CSV_COLUMNS


def _reward_grids(round_) -> list:
    return [s.rewards for s in round_.seeds]


def reward_density(round_) -> float:
    """Fraction of trajectories whose answer was correct."""
    grids = _reward_grids(round_)
    if not grids:
        raise ValueError("empty round")
    total = sum(r.accuracy.size for r in grids)
    return float(sum(int(r.accuracy.sum()) for r in grids) / total)


def _mixed(values: np.ndarray) -> bool:
    return not np.all(values == values.flat[0])


def valid_advantage_ratio(round_, grouping: str = "pooled") -> float:
    """Fraction of groups whose rewards are not all identical.

    ``pooled`` groups all m*n rewards of a seed question; ``per_variant``
    (alias ``local``) treats each variant's n rewards as a group.
    """
    grids = _reward_grids(round_)
    if not grids:
        raise ValueError("empty round")
    if grouping == "pooled":
        flags = [_mixed(r.values) for r in grids]
    elif grouping in ("per_variant", "local"):
        flags = [_mixed(row) for r in grids for row in r.values]
    else:
        raise ValueError(f"unknown grouping {grouping!r}")
    return float(np.mean(flags))


def greedy_accuracy(params: PolicyParams, X: np.ndarray, answers: Sequence[int]) -> float:
    tokens = greedy_tokens(params, X)
    return float(score_tokens(tokens, np.asarray(answers), 0.0)[1].mean())


def eval_accuracy(params: PolicyParams, eval_set: Sequence[Question]) -> float:
    """Greedy-decoding accuracy on untransformed questions."""
    if not eval_set:
        raise ValueError("empty eval set")
    X = np.stack([featurize(q) for q in eval_set])
    return greedy_accuracy(params, X, [q.answer for q in eval_set])


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def metrics_csv(rows: Iterable[StepMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(v) for v in astuple(r)])
    return buf.getvalue()


def read_metrics_csv(text: str) -> list[dict[str, float]]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected metrics columns {reader.fieldnames}")
    return [{k: float(v) for k, v in row.items()} for row in reader]
