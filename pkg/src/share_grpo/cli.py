"""Command-line entry point: ``share-grpo {train,compare,list-transforms,verify,experiment}``.

Exit codes: 0 success, 2 configuration error, 3 non-finite objective,
4 verification failure, 5 usage error (e.g. unknown flag), 6 conflicting
run names.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from share_grpo.config import ConfigError, DuplicateRunNameError, ExperimentSpec, TrainConfig, load_config_file
from share_grpo.env import transform_registry
from share_grpo.metrics import read_metrics_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_VERIFY = 4
EXIT_USAGE = 5
EXIT_RUN_NAMES = 6

# CLI flag -> TrainConfig field
TRAIN_FLAGS = {
    "algo": "algo",
    "m": "m",
    "n": "n",
    "p": "p",
    "temperature": "temperature",
    "steps": "steps",
    "seed": "rng_seed",
    "dynamic_sampling": "dynamic_sampling",
    "learning_rate": "learning_rate",
    "batch_seed_questions": "batch_seed_questions",
    "ppo_epochs": "ppo_epochs",
    "clip_eps": "clip_eps",
    "kl_beta": "kl_beta",
    "fmt_weight": "fmt_weight",
    "eval_size": "eval_size",
    "eval_seed": "eval_seed",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="share-grpo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run one training job and write its run directory",
                       argument_default=argparse.SUPPRESS)
    t.add_argument("--algo", choices=["grpo", "share-grpo", "share_grpo"])
    t.add_argument("--m", type=int)
    t.add_argument("--n", type=int)
    t.add_argument("--p", type=float)
    t.add_argument("--temperature", type=float)
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--dynamic-sampling", type=parse_bool, metavar="BOOL")
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--batch-seed-questions", type=int)
    t.add_argument("--ppo-epochs", type=int)
    t.add_argument("--clip-eps", type=float)
    t.add_argument("--kl-beta", type=float)
    t.add_argument("--fmt-weight", type=float)
    t.add_argument("--eval-size", type=int)
    t.add_argument("--eval-seed", type=int)
    t.add_argument("--config", metavar="FILE", help="JSON file with TrainConfig keys")
    t.add_argument("--out", metavar="DIR", required=True)

    c = sub.add_parser("compare", help="summarise finished runs side by side as JSON")
    c.add_argument("--runs", nargs="+", metavar="DIR", required=True)

    lt = sub.add_parser("list-transforms", help="print the transform registry")
    lt.add_argument("--grid-dim", type=int, default=3)

    sub.add_parser("verify", help="run the property suite")

    e = sub.add_parser("experiment", help="run every job in an experiment spec file")
    e.add_argument("--spec", metavar="FILE", required=True)
    return parser


def resolve_train_config(args: argparse.Namespace) -> TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for flag, key in TRAIN_FLAGS.items():
        if hasattr(args, flag):
            values[key] = getattr(args, flag)
    return TrainConfig.from_dict(values)


def _run_train(cfg: TrainConfig, out: str) -> int:
    from share_grpo.trainer import DivergenceError, train

    try:
        result = train(cfg, out)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    last = result.metrics[-1] if result.metrics else None
    acc = last.eval_accuracy if last else float("nan")
    print(f"{out}: {cfg.steps} steps, final eval_accuracy {acc:.3f}")
    return EXIT_OK


def summarize_run(run_dir: Path) -> dict:
    rows = read_metrics_csv((run_dir / "metrics.csv").read_text())
    if not rows:
        return {"steps": 0}
    col = lambda k: [r[k] for r in rows]
    return {
        "steps": len(rows),
        "final_eval_accuracy": rows[-1]["eval_accuracy"],
        "mean_reward_density": float(np.mean(col("reward_density"))),
        "mean_valid_adv_ratio_pooled": float(np.mean(col("valid_adv_ratio_pooled"))),
        "mean_valid_adv_ratio_local": float(np.mean(col("valid_adv_ratio_local"))),
        "total_dropped_seeds": int(sum(col("dropped_seeds"))),
    }


def compare_runs(dirs: Sequence[str]) -> dict:
    names = [Path(d).name for d in dirs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise DuplicateRunNameError(f"run names must be unique, repeated: {dupes}")
    out = {}
    for name, d in zip(names, dirs):
        path = Path(d)
        cfg_path = path / "config.json"
        summary = summarize_run(path)
        if cfg_path.exists():
            cfg = json.loads(cfg_path.read_text())
            summary["algo"], summary["m"], summary["n"] = cfg.get("algo"), cfg.get("m"), cfg.get("n")
        out[name] = summary
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "train":
            return _run_train(resolve_train_config(args), args.out)
        if args.command == "compare":
            try:
                summary = compare_runs(args.runs)
            except (OSError, ValueError) as e:
                if isinstance(e, DuplicateRunNameError):
                    raise
                raise ConfigError(f"cannot read run: {e}") from e
            print(json.dumps(summary, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "list-transforms":
            for spec in transform_registry(args.grid_dim):
                params = "-" if spec.parameters is None else ",".join(map(str, spec.parameters))
                print(f"{spec.tag}\t{spec.kind}\t{params}")
            return EXIT_OK
        if args.command == "verify":
            from share_grpo.verify import run_all

            return EXIT_OK if run_all() else EXIT_VERIFY
        if args.command == "experiment":
            spec = ExperimentSpec.from_dict(load_config_file(args.spec))
            status = EXIT_OK
            for name, cfg in spec.runs:
                status = max(status, _run_train(cfg, str(Path(spec.output_root) / name)))
            return status
    except DuplicateRunNameError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUN_NAMES
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    parser.print_usage(sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
