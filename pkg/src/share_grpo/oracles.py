"""Brute-force reference computations in plain Python.

Nothing here calls into the numpy implementations it is used to check: sums
use ``math.fsum``, softmaxes are written out term by term, and finite
differences perturb one weight at a time.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


def standardize(values: Sequence[float]) -> list[float]:
    """(r - mean) / population std, zeros when every value is the same."""
    vals = [float(v) for v in values]
    if all(v == vals[0] for v in vals):
        return [0.0] * len(vals)
    mean = math.fsum(vals) / len(vals)
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))
    return [(v - mean) / max(std, 1e-6) for v in vals]


def global_adv(table: Sequence[Sequence[float]]) -> list[list[float]]:
    n = len(table[0])
    flat = standardize([v for row in table for v in row])
    return [flat[j * n:(j + 1) * n] for j in range(len(table))]


def local_adv(table: Sequence[Sequence[float]]) -> list[list[float]]:
    return [standardize(row) for row in table]


def hierarchy(table: Sequence[Sequence[float]]):
    """(global, local, hier) where hier[j][i][k] is global + local when j == k, global otherwise."""
    g, loc = global_adv(table), local_adv(table)
    m, n = len(table), len(table[0])
    hier = [[[g[j][i] + loc[j][i] if j == k else g[j][i] for k in range(m)] for i in range(n)] for j in range(m)]
    return g, loc, hier


def hier_adv(table: Sequence[Sequence[float]]) -> list[list[list[float]]]:
    return hierarchy(table)[2]


def softmax(logits: Sequence[float]) -> list[float]:
    top = max(logits)
    e = [math.exp(z - top) for z in logits]
    s = math.fsum(e)
    return [v / s for v in e]


def sequence_prob(weights: np.ndarray, x: Sequence[float], tokens: Sequence[int], temperature: float) -> float:
    """Product over positions of softmax(W[l] x / T)[token_l], one dot product at a time."""
    prob = 1.0
    for l, tok in enumerate(tokens):
        logits = [math.fsum(w * xi for w, xi in zip(weights[l, v], x)) / temperature
                  for v in range(weights.shape[1])]
        prob *= softmax(logits)[tok]
    return prob


def kl_sum(weights_a: np.ndarray, weights_b: np.ndarray, x: Sequence[float], temperature: float) -> float:
    total = []
    for l in range(weights_a.shape[0]):
        za = [math.fsum(w * xi for w, xi in zip(weights_a[l, v], x)) / temperature for v in range(weights_a.shape[1])]
        zb = [math.fsum(w * xi for w, xi in zip(weights_b[l, v], x)) / temperature for v in range(weights_b.shape[1])]
        p, q = softmax(za), softmax(zb)
        total.extend(pv * math.log(pv / qv) for pv, qv in zip(p, q) if pv > 0)
    return math.fsum(total)


def central_difference(f: Callable[[np.ndarray], float], w: np.ndarray, coords, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` at ``w`` along the flat indices ``coords``."""
    flat = np.array(w, dtype=np.float64).ravel()
    out = np.empty(len(coords))
    for c, idx in enumerate(coords):
        orig = flat[idx]
        flat[idx] = orig + step
        up = f(flat.reshape(w.shape))
        flat[idx] = orig - step
        down = f(flat.reshape(w.shape))
        flat[idx] = orig
        out[c] = (up - down) / (2 * step)
    return out


def directional_difference(f: Callable[[np.ndarray], float], w: np.ndarray, direction: np.ndarray,
                           step: float = 1e-5) -> float:
    return (f(w + step * direction) - f(w - step * direction)) / (2 * step)


def clipped_term(ratio: float, adv: float, eps: float) -> float:
    return min(ratio * adv, min(max(ratio, 1 - eps), 1 + eps) * adv)
