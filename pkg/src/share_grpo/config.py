from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

ALGOS = ("grpo", "share_grpo")


class ConfigError(ValueError):
    pass


class DuplicateRunNameError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    algo: str = "share_grpo"
    m: int = 2
    n: int = 6
    p: float = 0.3
    temperature: float = 0.7
    clip_eps: float = 0.2
    kl_beta: Optional[float] = None  # None -> 0.01 for grpo, 0 for share_grpo
    fmt_weight: float = 0.5
    learning_rate: float = 0.05
    ppo_epochs: int = 1
    batch_seed_questions: int = 32
    steps: int = 300
    dynamic_sampling: bool = False
    rng_seed: int = 0
    grid_dim: int = 3
    eval_seed: int = 0
    eval_size: int = 500
    eval_every: int = 1

    def __post_init__(self):
        algo = self.algo.replace("-", "_")
        object.__setattr__(self, "algo", algo)
        if self.kl_beta is None:
            object.__setattr__(self, "kl_beta", 0.01 if algo == "grpo" else 0.0)
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.algo not in ALGOS:
            problems.append(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.m < 1:
            problems.append(f"m must be >= 1, got {self.m}")
        if self.n < 1:
            problems.append(f"n must be >= 1, got {self.n}")
        if not 0.0 <= self.p <= 1.0:
            problems.append(f"p must lie in [0, 1], got {self.p}")
        if not self.temperature > 0:
            problems.append(f"temperature must be > 0, got {self.temperature}")
        if not self.clip_eps > 0:
            problems.append(f"clip_eps must be > 0, got {self.clip_eps}")
        if not self.kl_beta >= 0:
            problems.append(f"kl_beta must be >= 0, got {self.kl_beta}")
        if not self.fmt_weight >= 0:
            problems.append(f"fmt_weight must be >= 0, got {self.fmt_weight}")
        if not self.learning_rate > 0:
            problems.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.ppo_epochs < 1:
            problems.append(f"ppo_epochs must be >= 1, got {self.ppo_epochs}")
        if self.batch_seed_questions < 1:
            problems.append(f"batch_seed_questions must be >= 1, got {self.batch_seed_questions}")
        if self.steps < 0:
            problems.append(f"steps must be >= 0, got {self.steps}")
        if self.grid_dim < 2:
            problems.append(f"grid_dim must be >= 2, got {self.grid_dim}")
        if self.eval_size < 1:
            problems.append(f"eval_size must be >= 1, got {self.eval_size}")
        if self.eval_every < 1:
            problems.append(f"eval_every must be >= 1, got {self.eval_every}")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def effective_m(self) -> int:
        """Variants actually sampled: plain GRPO always works on the seed question alone."""
        return 1 if self.algo == "grpo" else self.m

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_dict()
        if "algo" in changes and "kl_beta" not in changes and self.kl_beta == _default_beta(self.algo):
            d["kl_beta"] = None
        d.update(changes)
        return TrainConfig.from_dict(d)


def _default_beta(algo: str) -> float:
    return 0.01 if algo == "grpo" else 0.0


def load_config_file(path: str | Path) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


@dataclass(frozen=True)
class ExperimentSpec:
    runs: tuple[tuple[str, TrainConfig], ...]
    output_root: str
    eval_seed: int = 0
    eval_size: int = 500

    def __post_init__(self):
        names = [name for name, _ in self.runs]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise DuplicateRunNameError(f"run names must be unique, repeated: {dupes}")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentSpec":
        eval_seed = int(d.get("eval_seed", 0))
        eval_size = int(d.get("eval_size", 500))
        runs = []
        for entry in d.get("runs", []):
            cfg = dict(entry.get("config", {}))
            cfg.setdefault("eval_seed", eval_seed)
            cfg.setdefault("eval_size", eval_size)
            runs.append((str(entry["name"]), TrainConfig.from_dict(cfg)))
        return cls(tuple(runs), str(d.get("output_root", "runs")), eval_seed, eval_size)

