"""Rule-based outcome rewards: a format check and a format-gated accuracy check."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from share_grpo.env import VariantSet
from share_grpo.policy import ANSWER, END, N_DIGITS, PAD, THINK


@dataclass(frozen=True)
class RewardTensor:
    values: np.ndarray  # (m, n), entry (j, i) is the reward of sample i on variant j
    accuracy: np.ndarray
    format: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def from_values(cls, values) -> "RewardTensor":
        """Wrap raw rewards with no component breakdown (zeros), e.g. for advantage tests."""
        v = np.atleast_2d(np.asarray(values, dtype=np.float64))
        z = np.zeros(v.shape, dtype=np.int64)
        return cls(v, z, z.copy())


def format_reward(tokens: Sequence[int]) -> int:
    """1 iff tokens read ``THINK{1..L-3} ANSWER <digit> END PAD*``."""
    t = list(tokens)
    L = len(t)
    k = 0
    while k < L and t[k] == THINK:
        k += 1
    if not 1 <= k <= L - 3:
        return 0
    if t[k] != ANSWER or not 0 <= t[k + 1] < N_DIGITS or t[k + 2] != END:
        return 0
    return int(all(tok == PAD for tok in t[k + 3:]))


def answer_digit(tokens: Sequence[int]) -> int | None:
    """The digit after ANSWER in a well-formed sequence, else None."""
    if not format_reward(tokens):
        return None
    t = list(tokens)
    return t[t.index(ANSWER) + 1]


def accuracy_reward(tokens: Sequence[int], answer: int) -> int:
    if not 0 <= answer <= 9:
        raise ValueError(f"answer must be a digit, got {answer}")
    return int(answer_digit(tokens) == answer)


def score_tokens(tokens: np.ndarray, answer, fmt_weight: float):
    """Vectorised scoring of a (..., L) token array; returns (values, accuracy, format).

    ``answer`` is a digit or an array broadcastable to ``tokens.shape[:-1]``.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    L = tokens.shape[-1]
    pos = np.arange(L)
    lead = np.cumprod(tokens == THINK, axis=-1).sum(axis=-1)  # leading THINK count
    k = np.clip(lead, 0, max(L - 3, 0))[..., None]
    at = lambda off: np.take_along_axis(tokens, np.minimum(k + off, L - 1), axis=-1)[..., 0]
    digit = at(1)
    fmt = (
        (lead >= 1) & (lead <= L - 3)
        & (at(0) == ANSWER) & (digit >= 0) & (digit < N_DIGITS) & (at(2) == END)
        & np.all((pos <= k + 2) | (tokens == PAD), axis=-1)
    )
    acc = fmt & (digit == np.asarray(answer))
    fmt, acc = fmt.astype(np.int64), acc.astype(np.int64)
    return acc + fmt_weight * fmt, acc, fmt


def score_batch(trajectories, vs: VariantSet, fmt_weight: float = 0.5) -> RewardTensor:
    """Score an m x n grid of trajectories (objects with ``.tokens``, or a raw (m, n, L) array)."""
    if fmt_weight < 0:
        raise ValueError(f"format weight must be non-negative, got {fmt_weight}")
    if isinstance(trajectories, np.ndarray):
        tokens = trajectories
    else:
        rows = [[tr.tokens for tr in row] for row in trajectories]
        if len({len(r) for r in rows}) > 1:
            raise ValueError("ragged trajectory grid")
        tokens = np.asarray(rows)
    if tokens.ndim != 3 or tokens.shape[0] != vs.m:
        raise ValueError(f"trajectory grid of shape {tokens.shape[:2]} does not match m={vs.m}")
    values, acc, fmt = score_tokens(tokens, vs.answer, fmt_weight)
    return RewardTensor(values.astype(np.float64), acc, fmt)
