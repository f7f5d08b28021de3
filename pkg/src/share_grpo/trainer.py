"""Rollout rounds, the GRPO and Share-GRPO objectives, and the training loop.

A round freezes the sampling policy (``snapshot``) and records, for every
trajectory o_i^{Q_j} and every variant Q_k of the same seed question, the
old-policy log-probability log pi_old(o_i^{Q_j} | Q_k). Share-GRPO needs the
off-diagonal entries; plain GRPO only ever uses j == k.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from share_grpo import __version__
from share_grpo.advantage import AdvantageTensor, hierarchical_advantage
from share_grpo.config import TrainConfig
from share_grpo.env import Question, VariantSet, expand_offline, expand_online, generate_question
from share_grpo.metrics import (
    StepMetrics,
    greedy_accuracy,
    metrics_csv,
    reward_density,
    valid_advantage_ratio,
)
from share_grpo.policy import (
    PolicyParams,
    Trajectory,
    featurize,
    init_params,
    kl_grad,
    kl_rows,
    log_probs,
    tokens_from_uniforms,
    save_checkpoint,
)
from share_grpo.reward import RewardTensor, score_tokens

log = logging.getLogger(__name__)


class SnapshotMismatchError(RuntimeError):
    pass


class MissingDenominatorError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class SeedRollout:
    variant_set: VariantSet
    features: np.ndarray  # (m, F)
    tokens: np.ndarray  # (m, n, L)
    logp_old: np.ndarray  # (m, n, m): log pi_old(o_i^{Q_j} | Q_k) at [j, i, k]
    rewards: RewardTensor
    advantages: AdvantageTensor

    @property
    def m(self) -> int:
        return self.tokens.shape[0]

    @property
    def n(self) -> int:
        return self.tokens.shape[1]

    def trajectories(self) -> list[list[Trajectory]]:
        return [
            [
                Trajectory(j, tuple(int(t) for t in self.tokens[j, i]), float(self.logp_old[j, i, j]), i + 1)
                for i in range(self.n)
            ]
            for j in range(self.m)
        ]


@dataclass(frozen=True)
class RolloutRound:
    step: int
    snapshot: PolicyParams
    reference: PolicyParams
    temperature: float
    seeds: tuple[SeedRollout, ...]
    dropped_seeds: int = 0

    @property
    def variant_sets(self) -> list[VariantSet]:
        return [s.variant_set for s in self.seeds]

    @property
    def trajectories(self) -> list[list[list[Trajectory]]]:
        return [s.trajectories() for s in self.seeds]

    @property
    def rewards(self) -> list[RewardTensor]:
        return [s.rewards for s in self.seeds]

    @property
    def advantages(self) -> list[AdvantageTensor]:
        return [s.advantages for s in self.seeds]

    def stacked(self):
        """(X, tokens, logp_old) stacked over seeds: (S,m,F), (S,m,n,L), (S,m,n,m)."""
        return (
            np.stack([s.features for s in self.seeds]),
            np.stack([s.tokens for s in self.seeds]),
            np.stack([s.logp_old for s in self.seeds]),
        )


def _cross_logprobs(lp: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """lp: (..., m_k, L, V) log-probs per variant; tokens: (..., m_j, n, L).

    Returns (..., m_j, n, m_k) with entry [j, i, k] = sum_l lp[k, l, tokens[j, i, l]].
    """
    # (..., 1, 1, m_k, L, V) gathered at (..., m_j, n, 1, L, 1)
    g = np.take_along_axis(lp[..., None, None, :, :, :], tokens[..., :, :, None, :, None], axis=-1)
    return g[..., 0].sum(axis=-1)


@dataclass(frozen=True)
class _SeedDraw:
    variant_set: VariantSet
    features: np.ndarray  # (m, F)
    uniforms: np.ndarray  # (m, n, L)


def _expand_seed(cfg: TrainConfig, L: int, q: Question, seed_id: int, seq: np.random.SeedSequence) -> _SeedDraw:
    online_seq, sample_seq = seq.spawn(2)
    vs = expand_offline(q, cfg.effective_m, seed_id=seed_id)
    vs = expand_online(vs, cfg.p, int(online_seq.generate_state(1)[0]))
    X = np.stack([featurize(v) for v in vs.variants])
    u = np.random.default_rng(sample_seq).random((len(X), cfg.n, L))
    return _SeedDraw(vs, X, u)


def worker_count() -> int:
    raw = os.environ.get("SHARE_GRPO_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def rollout_round(params: PolicyParams, cfg: TrainConfig, batch: Sequence[Question], step: int = 0,
                  reference: Optional[PolicyParams] = None, seed_ids: Optional[Sequence[int]] = None,
                  ) -> RolloutRound:
    """Expand, sample, score and compute advantages for every seed question in ``batch``.

    Each seed question owns an RNG stream derived from (rng_seed, step, index),
    so the result does not depend on how many workers expand the batch.
    """
    if not batch:
        raise ValueError("empty seed batch")
    seed_ids = list(seed_ids) if seed_ids is not None else list(range(len(batch)))
    seqs = np.random.SeedSequence([cfg.rng_seed, step, 0x5EED]).spawn(len(batch))
    jobs = list(zip(batch, seed_ids, seqs))
    workers = min(worker_count(), len(jobs))

    def run(job):
        return _expand_seed(cfg, params.L, *job)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            draws = list(pool.map(run, jobs))  # map preserves input order
    else:
        draws = list(map(run, jobs))

    X = np.stack([d.features for d in draws])  # (S, m, F)
    lp = log_probs(params, X, cfg.temperature)  # (S, m, L, V)
    tokens = tokens_from_uniforms(lp, np.stack([d.uniforms for d in draws]))  # (S, m, n, L)
    logp_old = _cross_logprobs(lp, tokens)
    answers = np.array([d.variant_set.answer for d in draws])[:, None, None]
    values, acc, fmt = score_tokens(tokens, answers, cfg.fmt_weight)
    seeds = []
    for s, d in enumerate(draws):
        rewards = RewardTensor(values[s].astype(np.float64), acc[s], fmt[s])
        seeds.append(SeedRollout(d.variant_set, X[s], tokens[s], logp_old[s], rewards,
                                 hierarchical_advantage(rewards)))
    return RolloutRound(step, params, reference if reference is not None else params,
                        cfg.temperature, tuple(seeds))


def check_snapshot(round_: RolloutRound, atol: float = 1e-12) -> None:
    """Raise unless every cached old log-prob was produced by ``round_.snapshot``."""
    for s in round_.seeds:
        if s.logp_old.shape != (s.m, s.n, s.m):
            raise MissingDenominatorError(
                f"seed {s.variant_set.seed_id}: need old log-probs for all {s.m}x{s.m} variant pairs, "
                f"got shape {s.logp_old.shape}")
    if not round_.seeds:
        return
    X, tokens, logp_old = round_.stacked()
    fresh = _cross_logprobs(log_probs(round_.snapshot, X, round_.temperature), tokens)
    bad = np.flatnonzero(np.abs(fresh - logp_old).reshape(len(X), -1).max(axis=1) > atol)
    if bad.size:
        raise SnapshotMismatchError(
            f"seed {round_.seeds[bad[0]].variant_set.seed_id}: cached old log-probs "
            "do not come from the round's snapshot")


@dataclass
class ObjectiveInfo:
    ratios: np.ndarray
    clip_fraction: float
    mean_kl: float = 0.0
    terms: np.ndarray = field(default=None, repr=False)


def clipped_surrogate(params: PolicyParams, round_: RolloutRound, adv: np.ndarray, clip_eps: float):
    """Mean over seeds of the per-seed mean over (j, i, k) of the clipped surrogate.

    ``adv`` has shape (S, m, n, m) aligned with the cached old log-probs.
    Returns (objective, gradient, ObjectiveInfo).
    """
    T = round_.temperature
    X, tokens, logp_old = round_.stacked()
    S, m, n, L = tokens.shape
    lp = log_probs(params, X, T)  # (S, m_k, L, V)
    new = _cross_logprobs(lp, tokens)  # (S, m_j, n, m_k)
    ratio = np.exp(new - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    take_clip = clipped < unclipped
    terms = np.where(take_clip, clipped, unclipped)
    w = 1.0 / (S * n * m * m)
    objective = float(terms.sum() * w)

    coef = np.where(take_clip, 0.0, adv * ratio) * w  # d objective / d new-logprob
    V = params.V
    onehot = np.eye(V)[tokens]  # (S, m_j, n, L, V)
    pos = np.einsum("sjik,sjilv->sklv", coef, onehot)
    neg = coef.sum(axis=(1, 2))[:, :, None, None] * np.exp(lp)
    grad = np.einsum("sklv,skf->lvf", pos - neg, X) / T
    info = ObjectiveInfo(ratio, float(take_clip.mean()), terms=terms)
    return objective, grad, info


def _kl_penalty(params: PolicyParams, round_: RolloutRound, beta: float, info: ObjectiveInfo):
    X = np.concatenate([s.features for s in round_.seeds])
    per_row = kl_rows(log_probs(params, X, round_.temperature), log_probs(round_.reference, X, round_.temperature))
    info.mean_kl = float(max(per_row.mean(), 0.0))
    if beta == 0:
        return 0.0, 0.0
    value = beta * float(per_row.mean())
    grad = beta * kl_grad(params, round_.reference, X, round_.temperature) / len(X)
    return value, grad


def grpo_objective(params: PolicyParams, round_: RolloutRound, cfg: TrainConfig,
                   advantages: Optional[np.ndarray] = None):
    """Clipped GRPO surrogate minus beta * KL(pi_theta || pi_ref), with its gradient.

    ``advantages`` (S, n) overrides the round's per-group standardised rewards.
    """
    check_snapshot(round_)
    if any(s.m != 1 for s in round_.seeds):
        raise ValueError("grpo_objective needs a round built with m=1")
    if advantages is None:
        adv = np.stack([s.advantages.local for s in round_.seeds])  # (S, 1, n)
    else:
        adv = np.asarray(advantages, dtype=np.float64).reshape(len(round_.seeds), 1, -1)
    obj, grad, info = clipped_surrogate(params, round_, adv[..., None], cfg.clip_eps)
    kl_val, kl_g = _kl_penalty(params, round_, cfg.kl_beta, info)
    return obj - kl_val, grad - kl_g, info


def share_grpo_objective(params: PolicyParams, round_: RolloutRound, cfg: TrainConfig):
    """Shared clipped surrogate over all (i, j, k) with hierarchical advantages.

    The KL penalty is added only when ``cfg.kl_beta > 0``.
    """
    check_snapshot(round_)
    adv = np.stack([s.advantages.hier for s in round_.seeds])  # (S, m, n, m)
    obj, grad, info = clipped_surrogate(params, round_, adv, cfg.clip_eps)
    kl_val, kl_g = _kl_penalty(params, round_, cfg.kl_beta, info)
    return obj - kl_val, grad - kl_g, info


def dynamic_sampling_filter(round_: RolloutRound) -> RolloutRound:
    """Drop seed questions whose pooled rewards are all identical."""
    keep = tuple(s for s in round_.seeds if not np.all(s.rewards.values == s.rewards.values.flat[0]))
    dropped = len(round_.seeds) - len(keep)
    if not keep:
        log.warning("step %d: dynamic sampling removed every seed question; skipping update", round_.step)
    return replace(round_, seeds=keep, dropped_seeds=round_.dropped_seeds + dropped)


def train_question_seed(run_seed: int, step: int, index: int) -> int:
    """Training questions use even seeds, evaluation questions odd ones."""
    return 2 * int(np.random.SeedSequence([run_seed, step, index]).generate_state(1, np.uint64)[0])


def eval_question_seed(eval_seed: int, index: int) -> int:
    return 2 * (eval_seed * 10_000_019 + index) + 1


def eval_set(cfg: TrainConfig) -> list[Question]:
    return [generate_question(eval_question_seed(cfg.eval_seed, i), cfg.grid_dim) for i in range(cfg.eval_size)]


@dataclass
class TrainResult:
    params: PolicyParams
    initial: PolicyParams
    metrics: list[StepMetrics]

    @property
    def final_eval_accuracy(self) -> float:
        return self.metrics[-1].eval_accuracy if self.metrics else float("nan")


def objective_for(cfg: TrainConfig) -> Callable:
    return share_grpo_objective if cfg.algo == "share_grpo" else grpo_objective


def train(cfg: TrainConfig, out_dir: Optional[str | Path] = None,
          params: Optional[PolicyParams] = None) -> TrainResult:
    """Run ``cfg.steps`` rollout/update rounds; write the run directory if ``out_dir`` is set."""
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    initial = params if params is not None else init_params(cfg.rng_seed, cfg.grid_dim)
    reference = initial
    params = initial
    objective = objective_for(cfg)
    questions = eval_set(cfg)
    X_eval = np.stack([featurize(q) for q in questions])
    answers = [q.answer for q in questions]
    eval_acc = greedy_accuracy(params, X_eval, answers)
    rows: list[StepMetrics] = []

    try:
        for step in range(cfg.steps):
            batch = [generate_question(train_question_seed(cfg.rng_seed, step, b), cfg.grid_dim)
                     for b in range(cfg.batch_seed_questions)]
            seed_ids = [train_question_seed(cfg.rng_seed, step, b) for b in range(cfg.batch_seed_questions)]
            rnd = rollout_round(params, cfg, batch, step, reference=reference, seed_ids=seed_ids)
            X_all = np.concatenate([s.features for s in rnd.seeds])
            mean_kl = float(max(kl_rows(log_probs(params, X_all, cfg.temperature),
                                        log_probs(reference, X_all, cfg.temperature)).mean(), 0.0))
            upd = dynamic_sampling_filter(rnd) if cfg.dynamic_sampling else rnd
            clip_fracs = []
            if upd.seeds:
                for epoch in range(cfg.ppo_epochs):
                    value, grad, info = objective(params, upd, cfg)
                    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
                        raise DivergenceError(
                            f"non-finite objective at step {step}, epoch {epoch}",
                            {"step": step, "epoch": epoch, "objective": repr(value),
                             "max_abs_weight": float(np.abs(params.weights).max())})
                    clip_fracs.append(info.clip_fraction)
                    params = PolicyParams(params.weights + cfg.learning_rate * grad)
            if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
                eval_acc = greedy_accuracy(params, X_eval, answers)
            rows.append(StepMetrics(
                step=step,
                mean_reward=float(np.mean([s.rewards.values.mean() for s in rnd.seeds])),
                reward_density=reward_density(rnd),
                valid_adv_ratio_pooled=valid_advantage_ratio(rnd, "pooled"),
                valid_adv_ratio_local=valid_advantage_ratio(rnd, "per_variant"),
                eval_accuracy=eval_acc,
                mean_kl=mean_kl,
                clip_fraction=float(np.mean(clip_fracs)) if clip_fracs else 0.0,
                dropped_seeds=upd.dropped_seeds,
            ))
    except DivergenceError as e:
        if out_dir is not None:
            (out_dir / "metrics.csv").write_text(metrics_csv(rows))
            (out_dir / "diagnostic.json").write_text(json.dumps(e.diagnostic, indent=2) + "\n")
        raise

    result = TrainResult(params, initial, rows)
    if out_dir is not None:
        write_run(out_dir, cfg, result, started)
    return result


def write_run(out_dir: Path, cfg: TrainConfig, result: TrainResult, started: str) -> None:
    (out_dir / "metrics.csv").write_text(metrics_csv(result.metrics))
    save_checkpoint(result.params, out_dir / "checkpoint.bin")
    manifest = {
        "artifact": "share_grpo",
        "version": __version__,
        "rng_seed": cfg.rng_seed,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "files": ["config.json", "metrics.csv", "checkpoint.bin", "checkpoint.meta.json"],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
