"""Per-position softmax policy over a 16-token vocabulary.

Position ``l`` emits a token from ``softmax(W[l] @ x / temperature)`` where
``x = featurize(q)``. Positions are conditionally independent given the
question, so log-probabilities, gradients and KL are all exact and cheap.

The per-question functions (``logprob``, ``grad_logprob``, ``sample``,
``kl_exact``) are the reference surface; the trainer uses the batched helpers
that take feature arrays directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from share_grpo.env import REGISTRY_TAGS, Question, paraphrase_bank, read_answer

N_DIGITS = 10
THINK, ANSWER, END, PAD = 10, 11, 12, 13
DISTRACTORS = (14, 15)
VOCAB = 16
SEQ_LEN = 5
TOKEN_NAMES = tuple(str(d) for d in range(10)) + ("THINK", "ANSWER", "END", "PAD", "X1", "X2")


def feature_dim(grid_dim: int = 3) -> int:
    return len(paraphrase_bank()) + grid_dim + grid_dim * grid_dim * 10 + len(REGISTRY_TAGS) + 10 + 1


def featurize(q: Question) -> np.ndarray:
    """Feature vector of a question.

    Blocks, in order: one-hot template id, one-hot target row, one-hot digit
    per grid cell (row-major), multi-hot transform tags, one-hot readout of the
    designated row's digit-sum mod 10, constant 1.
    """
    d = q.grid_dim
    n_tpl = len(paraphrase_bank())
    x = np.zeros(feature_dim(d))
    x[q.template_id] = 1.0
    off = n_tpl
    x[off + q.target_row] = 1.0
    off += d
    cells = np.asarray(q.grid, dtype=np.int64).ravel()
    x[off + np.arange(d * d) * 10 + cells] = 1.0
    off += d * d * 10
    for tag in q.tau_tags:
        x[off + REGISTRY_TAGS.index(tag)] = 1.0
    off += len(REGISTRY_TAGS)
    x[off + read_answer(q)] = 1.0
    x[-1] = 1.0
    return x


@dataclass(frozen=True)
class PolicyParams:
    weights: np.ndarray  # (L, V, F)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 3:
            raise ValueError(f"weights must be (L, V, F), got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def L(self) -> int:
        return self.weights.shape[0]

    @property
    def V(self) -> int:
        return self.weights.shape[1]

    @property
    def F(self) -> int:
        return self.weights.shape[2]

    def __eq__(self, other):
        return isinstance(other, PolicyParams) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())

    @classmethod
    def zeros(cls, F: int, L: int = SEQ_LEN, V: int = VOCAB) -> "PolicyParams":
        return cls(np.zeros((L, V, F)))


def init_params(rng_seed: int, grid_dim: int = 3, format_logit: float = 4.0, noise: float = 0.01) -> PolicyParams:
    """Starting policy: a format prior on the bias feature plus small Gaussian noise.

    Stands in for an instruction-tuned model that already writes
    ``THINK THINK ANSWER <digit> END`` most of the time but guesses the digit.
    """
    F = feature_dim(grid_dim)
    rng = np.random.default_rng(rng_seed)
    w = noise * rng.standard_normal((SEQ_LEN, VOCAB, F))
    bias = F - 1
    w[0, THINK, bias] += format_logit
    w[1, THINK, bias] += format_logit
    w[2, ANSWER, bias] += format_logit
    w[3, :N_DIGITS, bias] += format_logit
    w[4, END, bias] += format_logit
    return PolicyParams(w)


@dataclass(frozen=True)
class Trajectory:
    question_ref: int
    tokens: tuple[int, ...]
    logprob_old: float
    sample_index: int


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def log_probs(params: PolicyParams, x: np.ndarray, temperature: float) -> np.ndarray:
    """Per-position log-probabilities. ``x`` is (F,) or (..., F); result is (..., L, V)."""
    _check_temperature(temperature)
    z = np.einsum("lvf,...f->...lv", params.weights, x) / temperature
    return _log_softmax(z)


def _check_tokens(params: PolicyParams, tokens) -> np.ndarray:
    t = np.asarray(tokens, dtype=np.int64)
    if t.shape[-1] != params.L:
        raise ValueError(f"expected {params.L} tokens, got {t.shape[-1]}")
    if t.size and (t.min() < 0 or t.max() >= params.V):
        raise ValueError("token id out of vocabulary")
    return t


def logprob(params: PolicyParams, q: Question, tokens: Sequence[int], temperature: float) -> float:
    t = _check_tokens(params, tokens)
    lp = log_probs(params, featurize(q), temperature)
    return float(lp[np.arange(params.L), t].sum())


def grad_logprob(params: PolicyParams, q: Question, tokens: Sequence[int], temperature: float) -> np.ndarray:
    t = _check_tokens(params, tokens)
    x = featurize(q)
    p = np.exp(log_probs(params, x, temperature))
    delta = -p
    delta[np.arange(params.L), t] += 1.0
    return np.einsum("lv,f->lvf", delta / temperature, x)


def tokens_from_uniforms(lp: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw: ``lp`` is (..., L, V) log-probs, ``u`` is (..., n, L) uniforms.

    Returns (..., n, L) token ids.
    """
    cdf = np.cumsum(np.exp(lp), axis=-1)[..., None, :, :]  # (..., 1, L, V)
    tokens = (u[..., None] >= cdf).sum(axis=-1)
    # cdf[-1] can round to just below 1
    return np.minimum(tokens, lp.shape[-1] - 1)


def sample_tokens(params: PolicyParams, x: np.ndarray, temperature: float, n: int, rng: np.random.Generator):
    """Draw ``n`` token sequences for one feature vector; returns (tokens, logprob)."""
    lp = log_probs(params, x, temperature)
    tokens = tokens_from_uniforms(lp, rng.random((n, params.L)))
    logp = lp[np.arange(params.L), tokens].sum(axis=-1)
    return tokens, logp


def sample(params: PolicyParams, q: Question, temperature: float, rng_seed: int,
           question_ref: int = 0, sample_index: int = 1) -> Trajectory:
    _check_temperature(temperature)
    rng = np.random.default_rng(rng_seed)
    tokens, logp = sample_tokens(params, featurize(q), temperature, 1, rng)
    return Trajectory(question_ref, tuple(int(t) for t in tokens[0]), float(logp[0]), sample_index)


def kl_rows(lp_a: np.ndarray, lp_b: np.ndarray) -> np.ndarray:
    """Sum over positions of KL(a || b) from log-probabilities of shape (..., L, V)."""
    return (np.exp(lp_a) * (lp_a - lp_b)).sum(axis=(-1, -2))


def kl_exact(params_a: PolicyParams, params_b: PolicyParams, q: Question, temperature: float) -> float:
    x = featurize(q)
    kl = float(kl_rows(log_probs(params_a, x, temperature), log_probs(params_b, x, temperature)))
    return max(kl, 0.0)


def kl_grad(params_a: PolicyParams, params_b: PolicyParams, X: np.ndarray, temperature: float,
            weights: np.ndarray | None = None) -> np.ndarray:
    """Gradient wrt ``params_a`` of the weighted sum over rows of X of KL(a || b)."""
    lp_a = log_probs(params_a, X, temperature)
    lp_b = log_probs(params_b, X, temperature)
    p = np.exp(lp_a)
    diff = lp_a - lp_b
    per_pos = (p * diff).sum(axis=-1, keepdims=True)
    dz = p * (diff - per_pos) / temperature  # (N, L, V)
    if weights is not None:
        dz = dz * np.asarray(weights)[:, None, None]
    return np.einsum("nlv,nf->lvf", dz, X)


def greedy_tokens(params: PolicyParams, X: np.ndarray) -> np.ndarray:
    """Argmax per position; ``np.argmax`` breaks ties toward the lowest token id."""
    z = np.einsum("lvf,nf->nlv", params.weights, X)
    return z.argmax(axis=-1)


def save_checkpoint(params: PolicyParams, path: str | Path) -> None:
    """Write ``path`` (raw little-endian float64) and ``<stem>.meta.json`` with the shape."""
    path = Path(path)
    path.write_bytes(params.weights.astype("<f8").tobytes(order="C"))
    meta = {"L": params.L, "V": params.V, "F": params.F, "dtype": "<f8"}
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_checkpoint(path: str | Path) -> PolicyParams:
    path = Path(path)
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    flat = np.frombuffer(path.read_bytes(), dtype="<f8")
    shape = (meta["L"], meta["V"], meta["F"])
    if flat.size != shape[0] * shape[1] * shape[2]:
        raise ValueError(f"checkpoint holds {flat.size} values, header says {shape}")
    return PolicyParams(flat.reshape(shape).astype(np.float64))
