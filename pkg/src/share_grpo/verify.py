"""Property suite behind ``share-grpo verify``.

Each check returns a :class:`CheckResult`; ``run_all`` runs them in order.
The same helpers back the acceptance tests.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from share_grpo import oracles
from share_grpo.advantage import grpo_advantage, hierarchical_advantage, local_advantage
from share_grpo.config import TrainConfig
from share_grpo.env import apply_transform, generate_question, read_answer, transform_registry
from share_grpo.policy import PolicyParams, featurize, grad_logprob, init_params, logprob
from share_grpo.trainer import (
    RolloutRound,
    grpo_objective,
    rollout_round,
    share_grpo_objective,
    train,
)

REWARD_LEVELS = (0.0, 0.5, 1.5)
FD_STEP = 1e-5
FD_RTOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def reward_grid(max_m: int = 3, max_n: int = 3, levels=REWARD_LEVELS) -> Iterator[np.ndarray]:
    """Every m x n reward table with m, n <= the bounds and entries from ``levels``."""
    for m in range(1, max_m + 1):
        for n in range(1, max_n + 1):
            for cells in itertools.product(levels, repeat=m * n):
                yield np.array(cells, dtype=np.float64).reshape(m, n)


def check_advantage_exactness() -> CheckResult:
    worst = 0.0
    count = 0
    for table in reward_grid():
        rows = table.tolist()
        at = hierarchical_advantage(table)
        g, loc, hier = oracles.hierarchy(rows)
        worst = max(worst,
                    float(np.max(np.abs(at.global_ - g))),
                    float(np.max(np.abs(at.local - loc))),
                    float(np.max(np.abs(at.hier - hier))))
        if len(rows) == 1:  # m=1 tables already enumerate every possible group
            worst = max(worst, float(np.max(np.abs(grpo_advantage(rows[0]) - np.array(oracles.standardize(rows[0]))))))
        count += 1
    worked = hierarchical_advantage(np.array([[1.0, 1.0], [0.0, 1.0]]))
    g = np.round(worked.global_, 6)
    worked_ok = (
        g[0, 0] == 0.57735 and g[1, 0] == -1.732051
        and round(float(worked.hier[1, 1, 1]), 6) == 1.57735
        and round(float(worked.hier[1, 1, 0]), 6) == 0.57735
    )
    ok = worst < 1e-12 and worked_ok
    return CheckResult("advantage exactness", ok,
                       f"{count} tables, max abs error {worst:.2e}, worked example {'ok' if worked_ok else 'WRONG'}")


def check_hier_structure() -> CheckResult:
    bad = 0
    for table in reward_grid():
        at = hierarchical_advantage(table)
        m = table.shape[0]
        for j in range(m):
            for k in range(m):
                expect = at.global_[j] + at.local[j] if j == k else at.global_[j]
                if not np.array_equal(at.hier[j, :, k], expect):
                    bad += 1
            off = [at.hier[j, :, k] for k in range(m) if k != j]
            if any(not np.array_equal(off[0], o) for o in off[1:]):
                bad += 1
        if m == 1 and not np.array_equal(at.hier[0, :, 0], 2 * grpo_advantage(table[0])):
            bad += 1
    return CheckResult("hierarchical structure", bad == 0, f"{bad} violations")


def _rel_err(a, b) -> float:
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def gradient_check(f: Callable[[np.ndarray], float], grad: np.ndarray, w: np.ndarray, active: np.ndarray,
                   rng: np.random.Generator, n_dirs: int = 3, n_coords: int = 40) -> float:
    """Worst relative error between ``grad`` and central differences of ``f``.

    Probes ``n_dirs`` random directions supported on the active features and
    ``n_coords`` single weights: half the largest-gradient ones, half random,
    all on active features (weights on inactive features get exactly zero
    gradient and are compared separately by the caller if needed).
    """
    L, V, F = w.shape
    mask = np.zeros(w.shape, dtype=bool)
    mask[:, :, active] = True
    worst = 0.0
    for _ in range(n_dirs):
        d = rng.standard_normal(w.shape) * mask
        d /= np.linalg.norm(d)
        fd = oracles.directional_difference(f, w, d, FD_STEP)
        worst = max(worst, _rel_err(fd, float((grad * d).sum())))
    flat_active = np.flatnonzero(mask.ravel())
    g = grad.ravel()[flat_active]
    top = flat_active[np.argsort(-np.abs(g))[: n_coords // 2]]
    rand = rng.choice(flat_active, size=min(n_coords - len(top), len(flat_active)), replace=False)
    coords = np.unique(np.concatenate([top, rand]))
    fd = oracles.central_difference(f, w, coords, FD_STEP)
    worst = max(worst, _rel_err(fd, grad.ravel()[coords]))
    return worst


def random_logprob_instance(seed: int):
    rng = np.random.default_rng(seed)
    q = generate_question(seed, 3)
    w = rng.normal(0, 1.0, size=init_params(0).weights.shape)
    tokens = rng.integers(0, w.shape[1], size=w.shape[0])
    return PolicyParams(w), q, tokens, float(rng.uniform(0.5, 1.5))


def check_logprob_gradient(instances: int = 100) -> CheckResult:
    worst = 0.0
    for seed in range(instances):
        params, q, tokens, T = random_logprob_instance(seed)
        grad = grad_logprob(params, q, tokens, T)
        active = np.flatnonzero(featurize(q))
        f = lambda w: logprob(PolicyParams(w), q, tokens, T)
        worst = max(worst, gradient_check(f, grad, params.weights, active, np.random.default_rng(seed)))
    return CheckResult("logprob gradient", worst <= FD_RTOL, f"{instances} instances, worst rel err {worst:.2e}")


def random_objective_instance(seed: int, algo: str, kl_beta: float | None = None,
                              margin: float = 1e-3) -> tuple[PolicyParams, RolloutRound, TrainConfig]:
    """A small round plus current params displaced from the round's snapshot.

    Displacement makes ratios differ from 1 so clipping is exercised; draws
    whose ratios sit within ``margin`` of a clip edge are rejected, because
    the objective has a kink there.
    """
    rng = np.random.default_rng(10_000 + seed)
    m = 1 if algo == "grpo" else int(rng.integers(1, 4))
    cfg = TrainConfig(algo=algo, m=m, n=int(rng.integers(2, 5)), p=0.5, batch_seed_questions=2,
                      kl_beta=kl_beta, clip_eps=0.2, temperature=float(rng.uniform(0.5, 1.2)))
    old = PolicyParams(init_params(seed).weights + rng.normal(0, 0.3, size=init_params(0).weights.shape))
    batch = [generate_question(2 * (seed * 7 + b), 3) for b in range(cfg.batch_seed_questions)]
    rnd = rollout_round(old, cfg, batch, step=seed, reference=init_params(seed + 1))
    objective = share_grpo_objective if algo == "share_grpo" else grpo_objective
    for _ in range(100):
        params = PolicyParams(old.weights + rng.normal(0, 0.08, size=old.weights.shape))
        _, _, info = objective(params, rnd, cfg)
        r = info.ratios
        lo, hi = 1 - cfg.clip_eps, 1 + cfg.clip_eps
        if np.all(np.abs(r - lo) > margin) and np.all(np.abs(r - hi) > margin):
            return params, rnd, cfg
    raise RuntimeError("could not draw an instance away from the clip edges")


def check_objective_gradient(algo: str, instances: int = 100) -> CheckResult:
    objective = share_grpo_objective if algo == "share_grpo" else grpo_objective
    worst = 0.0
    clipped_seen = 0
    for seed in range(instances):
        beta = 0.05 if (algo == "grpo" or seed % 2) else 0.0
        params, rnd, cfg = random_objective_instance(seed, algo, kl_beta=beta)
        _, grad, info = objective(params, rnd, cfg)
        clipped_seen += info.clip_fraction > 0
        active = np.flatnonzero(np.concatenate([s.features for s in rnd.seeds]).any(axis=0))
        f = lambda w: objective(PolicyParams(w), rnd, cfg)[0]
        worst = max(worst, gradient_check(f, grad, params.weights, active, np.random.default_rng(seed)))
    return CheckResult(f"{algo} objective gradient", worst <= FD_RTOL,
                       f"{instances} instances ({clipped_seen} with active clipping), worst rel err {worst:.2e}")


def check_ratio_one(rounds: int = 5) -> CheckResult:
    worst = 0.0
    clip = 0.0
    for seed in range(rounds):
        for algo in ("grpo", "share_grpo"):
            cfg = TrainConfig(algo=algo, m=3, n=4, batch_seed_questions=8, rng_seed=seed)
            params = init_params(seed)
            batch = [generate_question(2 * (100 * seed + b), 3) for b in range(8)]
            rnd = rollout_round(params, cfg, batch, step=0)
            objective = share_grpo_objective if algo == "share_grpo" else grpo_objective
            _, _, info = objective(params, rnd, cfg)
            worst = max(worst, float(np.max(np.abs(info.ratios - 1.0))))
            clip = max(clip, info.clip_fraction)
    ok = worst <= 1e-12 and clip == 0.0
    return CheckResult("ratio-one identity", ok, f"max |ratio-1| {worst:.1e}, max clip fraction {clip}")


def check_sct_safety(cases: int = 1000) -> CheckResult:
    failures = 0
    errors = 0
    for seed in range(cases):
        q = generate_question(seed, 3)
        for spec in transform_registry(3):
            try:
                t = apply_transform(spec, q)
            except Exception:
                errors += 1
                continue
            failures += read_answer(t) != read_answer(q) or t.answer != q.answer
    return CheckResult("transform answer preservation", failures == 0 and errors == 0,
                       f"{cases} questions x {len(transform_registry(3))} transforms, "
                       f"{failures} mismatches, {errors} exceptions")


def check_degeneracy_dominance(live_rounds: int = 50) -> CheckResult:
    bad = 0
    for table in reward_grid():
        flat_same = bool(np.all(table == table.flat[0]))
        _, row_flags = local_advantage(table)
        rows_share_value = bool(np.all(table[:, 0] == table[0, 0]))
        if flat_same != (bool(row_flags.all()) and rows_share_value):
            bad += 1
    result = train(TrainConfig(steps=live_rounds, batch_seed_questions=16, eval_size=50))
    live_bad = sum(r.valid_adv_ratio_pooled < r.valid_adv_ratio_local for r in result.metrics)
    return CheckResult("degeneracy dominance", bad == 0 and live_bad == 0,
                       f"{bad} brute-force violations, {live_bad}/{live_rounds} live rounds with pooled < per-variant")


def all_checks() -> list[Callable[[], CheckResult]]:
    return [
        check_advantage_exactness,
        check_hier_structure,
        check_logprob_gradient,
        lambda: check_objective_gradient("grpo"),
        lambda: check_objective_gradient("share_grpo"),
        check_ratio_one,
        check_sct_safety,
        check_degeneracy_dominance,
    ]


def run_all(echo: Callable[[str], None] = print) -> bool:
    ok = True
    for check in all_checks():
        t0 = time.perf_counter()
        res = check()
        res = CheckResult(res.name, res.passed, res.detail, time.perf_counter() - t0)
        echo(res.line())
        ok &= res.passed
    return ok

