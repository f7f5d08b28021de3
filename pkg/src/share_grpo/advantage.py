"""Group-relative advantages: plain GRPO, global (pooled), local (per variant), hierarchical.

All estimators standardise with the population std. A group whose rewards are
all identical carries no ranking information and gets zero advantage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from share_grpo.reward import RewardTensor

EPS_STD = 1e-6


def _standardize_rows(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Standardise each row of a 2-D array; returns (advantages, per-row degeneracy flags).

    Every estimator goes through here so that equal groups give bit-identical
    advantages whichever estimator computed them.
    """
    n = v.shape[1]
    degenerate = (v == v[:, :1]).all(axis=1)
    dev = v - v.sum(axis=1, keepdims=True) / n
    std = np.sqrt((dev * dev).sum(axis=1, keepdims=True) / n)
    out = dev / np.maximum(std, EPS_STD)
    out[degenerate] = 0.0
    return out, degenerate


def grpo_advantage(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64).ravel()
    if r.size == 0:
        raise ValueError("empty reward group")
    return _standardize_rows(r[None, :])[0][0]


def _values(rewards) -> np.ndarray:
    v = rewards.values if isinstance(rewards, RewardTensor) else np.asarray(rewards, dtype=np.float64)
    v = np.atleast_2d(v)
    if v.size == 0:
        raise ValueError("empty reward tensor")
    return v


def global_advantage(rewards) -> np.ndarray:
    v = _values(rewards)
    return _standardize_rows(v.reshape(1, -1))[0].reshape(v.shape)


def local_advantage(rewards) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise standardisation; returns (advantages, per-row degeneracy flags)."""
    return _standardize_rows(_values(rewards))


@dataclass(frozen=True)
class AdvantageTensor:
    hier: np.ndarray  # (m, n, m), entry (j, i, k)
    global_: np.ndarray  # (m, n)
    local: np.ndarray  # (m, n); zero on degenerate rows
    local_degenerate: np.ndarray  # (m,)
    pooled_degenerate: bool


def hierarchical_advantage(rewards) -> AdvantageTensor:
    """Combine pooled and per-variant advantages.

    ``hier[j, i, k]`` is the advantage used when sample ``i`` of variant ``j``
    is scored under variant ``k``: global + local on the diagonal, global
    alone off it.
    """
    v = _values(rewards)
    m, n = v.shape
    g = global_advantage(v)
    loc, flags = local_advantage(v)
    hier = np.repeat(g[:, :, None], m, axis=2)
    idx = np.arange(m)
    hier[idx, :, idx] += loc
    return AdvantageTensor(hier, g, loc, flags, bool(np.all(v == v.flat[0])))
