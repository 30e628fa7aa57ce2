"""Command-line entry point.

Subcommands: train, train-multitask, eval-mismatch, ablate-alpha,
timeseries, route, validate-bundle. Options resolve in three layers:
built-in defaults, then an optional JSON config file (--config), then
explicit flags. The resolved configuration is digested into every
checkpoint and report.

Exit codes: 0 success; 2 usage (unknown flag, missing required option);
3 missing file; 4 format or validation failure; 5 invalid combination or
unavailable optional dependency. Failures print one machine-parseable
line: "error: <category>: <message>".
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evalharness, grounding
from .checkpoint import CheckpointError
from .config import config_digest
from .grounding import BundleError, RoutingError
from .nets import load_netset
from .ppo import PpoConfig, Trainer, TrainSettings
from .simcore import DR_PRESETS, UnknownConditionError
from .tasks import COMMANDS

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FILE = 3
EXIT_FORMAT = 4
EXIT_COMBO = 5

_PPO_OVERRIDE_KEYS = (
    "gamma",
    "gae_lambda",
    "clip",
    "lr0",
    "entropy_coef",
    "value_coef",
    "epochs",
    "minibatches",
    "max_grad_norm",
)

_DEFAULTS: dict[str, dict] = {
    "train": dict(
        task=0,
        dr="off",
        iterations=250,
        steps_per_iter=4096,
        envs=32,
        seed=0,
        alpha=0.1,
        out="runs/train",
        fixed_distance=None,
        checkpoint_every=50,
        deterministic_single_thread=False,
    ),
    "train-multitask": dict(
        dr="off",
        iterations=250,
        steps_per_iter=4096,
        envs=40,
        seed=0,
        alpha=0.1,
        out="runs/multitask",
        fixed_distance=None,
        checkpoint_every=50,
        deterministic_single_thread=False,
    ),
    "eval-mismatch": dict(
        checkpoint=None, episodes=60, alpha=0.1, seed=0, task=0, out="mismatch_suite.csv"
    ),
    "ablate-alpha": dict(checkpoint=None, episodes=30, seed=0, task=0, out="alpha_ablation.csv"),
    "timeseries": dict(
        checkpoint=None,
        conditions="nominal,mass+40,wind-strong,combined-ood",
        seeds=10,
        alpha=0.1,
        seed=0,
        task=0,
        out="timeseries.csv",
    ),
    "route": dict(bundle=None, text=None, fixture=None, min_score=None),
    "validate-bundle": dict(bundle=None),
}


def _err(category: str, message) -> None:
    print(f"error: {category}: {message}", file=sys.stderr)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file; explicit flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadtta",
        description="Language-routed quadrotor control: training, evaluation, routing.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="single-task PPO training")
    _add_common(p)
    p.add_argument("--task", type=int, help="task id 0..4 (default: 0)")
    p.add_argument("--dr", choices=sorted(DR_PRESETS), help="randomization preset (default: off)")
    p.add_argument("--iterations", type=int, help="training iterations (default: 250)")
    p.add_argument("--steps-per-iter", type=int, help="env steps per iteration across all envs (default: 4096)")
    p.add_argument("--envs", type=int, help="parallel env instances (default: 32)")
    p.add_argument("--seed", type=int, help="master seed (default: 0)")
    p.add_argument("--alpha", type=float, help="latent adaptation step size (default: 0.1)")
    p.add_argument("--out", help="output directory (default: runs/train)")
    p.add_argument("--fixed-distance", type=float, help="pin the goal radius, disabling the curriculum (default: off)")
    p.add_argument("--checkpoint-every", type=int, help="checkpoint interval in iterations (default: 50)")
    p.add_argument(
        "--deterministic-single-thread",
        action="store_const",
        const=True,
        help="record the single-threaded deterministic mode in the config digest (default: off)",
    )

    p = sub.add_parser("train-multitask", help="all five tasks, envs split round-robin")
    _add_common(p)
    p.add_argument("--dr", choices=sorted(DR_PRESETS), help="randomization preset (default: off)")
    p.add_argument("--iterations", type=int, help="training iterations (default: 250)")
    p.add_argument("--steps-per-iter", type=int, help="env steps per iteration across all envs (default: 4096)")
    p.add_argument("--envs", type=int, help="parallel env instances (default: 40, 8 per task)")
    p.add_argument("--seed", type=int, help="master seed (default: 0)")
    p.add_argument("--alpha", type=float, help="latent adaptation step size (default: 0.1)")
    p.add_argument("--out", help="output directory (default: runs/multitask)")
    p.add_argument("--fixed-distance", type=float, help="pin the goal radius, disabling the curriculum (default: off)")
    p.add_argument("--checkpoint-every", type=int, help="checkpoint interval in iterations (default: 50)")
    p.add_argument(
        "--deterministic-single-thread",
        action="store_const",
        const=True,
        help="record the single-threaded deterministic mode in the config digest (default: off)",
    )

    p = sub.add_parser("eval-mismatch", help="13-condition mismatch suite")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint file (required)")
    p.add_argument("--episodes", type=int, help="episodes per condition (default: 60)")
    p.add_argument("--alpha", type=float, help="latent adaptation step size (default: 0.1)")
    p.add_argument("--seed", type=int, help="evaluation seed (default: 0)")
    p.add_argument("--task", type=int, help="task id (default: 0)")
    p.add_argument("--out", help="report CSV path (default: mismatch_suite.csv)")

    p = sub.add_parser("ablate-alpha", help="step-size ablation grid on one checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint file (required)")
    p.add_argument("--episodes", type=int, help="episodes per cell (default: 30)")
    p.add_argument("--seed", type=int, help="evaluation seed (default: 0)")
    p.add_argument("--task", type=int, help="task id (default: 0)")
    p.add_argument("--out", help="report CSV path (default: alpha_ablation.csv)")

    p = sub.add_parser("timeseries", help="per-step distance and latent-norm traces")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint file (required)")
    p.add_argument("--conditions", help="comma-separated condition names (default: nominal,mass+40,wind-strong,combined-ood)")
    p.add_argument("--seeds", type=int, help="episodes per condition (default: 10)")
    p.add_argument("--alpha", type=float, help="latent adaptation step size (default: 0.1)")
    p.add_argument("--seed", type=int, help="evaluation seed (default: 0)")
    p.add_argument("--task", type=int, help="task id (default: 0)")
    p.add_argument("--out", help="time-series CSV path (default: timeseries.csv)")

    p = sub.add_parser("route", help="route a free-form command to a task id")
    _add_common(p)
    p.add_argument("--bundle", help="paraphrase bundle file (default: packaged bundle)")
    p.add_argument("--text", help="free-form command to route (needs the embedding tool installed)")
    p.add_argument("--fixture", help="route every query in a labeled fixture file instead of --text")
    p.add_argument("--min-score", type=float, help="report (not reject) routes scoring below this (default: off)")

    p = sub.add_parser("validate-bundle", help="validate a paraphrase bundle file")
    _add_common(p)
    p.add_argument("--bundle", help="paraphrase bundle file (default: packaged bundle)")

    return parser


def _resolve(args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit flags."""
    opts = dict(_DEFAULTS[args.command])
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            from_file = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise BundleError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(from_file, dict):
            raise BundleError(f"config file {path} must hold a JSON object")
        for key, value in from_file.items():
            key = key.replace("-", "_")
            if key in opts or key in _PPO_OVERRIDE_KEYS:
                opts[key] = value
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        opts[key] = value
    opts["command"] = args.command
    return opts


def _ppo_config(opts: dict) -> PpoConfig:
    cfg = PpoConfig(
        n_envs=int(opts["envs"]),
        rollout_steps_total=int(opts["steps_per_iter"]),
        total_iterations=int(opts["iterations"]),
    )
    for key in _PPO_OVERRIDE_KEYS:
        if key in opts:
            setattr(cfg, key, type(getattr(cfg, key))(opts[key]))
    cfg.validate()
    return cfg


def _run_train(opts: dict) -> int:
    multitask = opts["command"] == "train-multitask"
    task_ids = tuple(range(5)) if multitask else (int(opts["task"]),)
    if not multitask and opts["task"] not in range(5):
        raise ValueError(f"task must be 0..4, got {opts['task']}")
    cfg = _ppo_config(opts)
    digest = config_digest(opts)
    settings = TrainSettings(
        task_ids=task_ids,
        dr=DR_PRESETS[opts["dr"]],
        alpha=float(opts["alpha"]),
        seed=int(opts["seed"]),
        out_dir=opts["out"],
        fixed_distance=opts["fixed_distance"],
        checkpoint_every=int(opts["checkpoint_every"]),
        config_digest=digest,
        deterministic_single_thread=bool(opts["deterministic_single_thread"]),
    )
    trainer = Trainer(cfg, settings)
    final = trainer.run()
    print(f"config_digest={digest}")
    print(f"final_checkpoint={final}")
    return EXIT_OK


def _load_checkpoint_arg(opts: dict):
    if not opts.get("checkpoint"):
        raise RuntimeError("--checkpoint is required for this command")
    return load_netset(opts["checkpoint"])


def _run_eval_mismatch(opts: dict) -> int:
    nets, _ = _load_checkpoint_arg(opts)
    digest = config_digest(opts)
    results = evalharness.run_mismatch_suite(
        nets,
        n_episodes=int(opts["episodes"]),
        alpha=float(opts["alpha"]),
        seed=int(opts["seed"]),
        out_path=opts["out"],
        task_id=int(opts["task"]),
        config_digest=digest,
    )
    for name, res in results.items():
        print(f"{name}: sr={res.sr_pct:.1f}% ({res.successes}/{res.episodes})")
    print(f"report={opts['out']}")
    return EXIT_OK


def _run_ablate_alpha(opts: dict) -> int:
    nets, _ = _load_checkpoint_arg(opts)
    digest = config_digest(opts)
    results = evalharness.run_alpha_ablation(
        nets,
        seed=int(opts["seed"]),
        out_path=opts["out"],
        n_episodes=int(opts["episodes"]),
        task_id=int(opts["task"]),
        config_digest=digest,
    )
    for (alpha, cond), res in results.items():
        print(f"alpha={alpha:g} {cond}: sr={res.sr_pct:.1f}%")
    print(f"report={opts['out']}")
    return EXIT_OK


def _run_timeseries(opts: dict) -> int:
    nets, _ = _load_checkpoint_arg(opts)
    digest = config_digest(opts)
    conditions = [c.strip() for c in str(opts["conditions"]).split(",") if c.strip()]
    if not conditions:
        raise ValueError("no conditions given")
    evalharness.emit_timeseries(
        nets,
        conditions,
        n_seeds=int(opts["seeds"]),
        alpha=float(opts["alpha"]),
        seed=int(opts["seed"]),
        out_path=opts["out"],
        task_id=int(opts["task"]),
        config_digest=digest,
    )
    print(f"report={opts['out']}")
    return EXIT_OK


def _bundle_path(opts: dict) -> Path:
    return Path(opts["bundle"]) if opts.get("bundle") else grounding.default_bundle_path()


def _run_route(opts: dict) -> int:
    bundle = grounding.load_bundle(_bundle_path(opts))
    has_text = bool(opts.get("text"))
    has_fixture = bool(opts.get("fixture"))
    if has_text == has_fixture:
        raise RuntimeError("route needs exactly one of --text or --fixture")

    if has_fixture:
        queries = grounding.load_fixture(opts["fixture"])
        correct = 0
        for q in queries:
            res = grounding.route(q.vec, bundle)
            ok = res.task_id == q.label
            correct += ok
            print(
                f"[{'ok' if ok else 'MISS'}] label={q.label} routed={res.task_id} "
                f"score={res.score:.4f} text={q.text!r}"
            )
        print(f"accuracy={correct}/{len(queries)}")
        return EXIT_OK

    try:
        from embed_tool.encoder import encode_texts
    except ImportError as exc:
        raise RuntimeError(
            "routing free-form text needs the embedding tool installed "
            "(pip install ./embed_tool); use --fixture for precomputed embeddings"
        ) from exc
    vec = encode_texts([opts["text"]])[0]
    res = grounding.route(vec, bundle)
    print(f"task={res.task_id} score={res.score:.4f} command={COMMANDS[res.task_id]!r}")
    print("scores: " + " ".join(f"{k}={res.scores[k]:.4f}" for k in range(len(res.scores))))
    if opts.get("min_score") is not None and res.score < float(opts["min_score"]):
        print(f"low-confidence: best score {res.score:.4f} < {float(opts['min_score']):.4f}")
    return EXIT_OK


def _run_validate_bundle(opts: dict) -> int:
    path = _bundle_path(opts)
    bundle = grounding.load_bundle(path)
    counts = {k: len(v) for k, v in bundle.texts.items()}
    print(
        f"bundle={path} encoder={bundle.encoder} dim={bundle.dim} "
        f"version={bundle.version} paraphrases={counts}"
    )
    return EXIT_OK


_RUNNERS = {
    "train": _run_train,
    "train-multitask": _run_train,
    "eval-mismatch": _run_eval_mismatch,
    "ablate-alpha": _run_ablate_alpha,
    "timeseries": _run_timeseries,
    "route": _run_route,
    "validate-bundle": _run_validate_bundle,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_USAGE
    try:
        opts = _resolve(args)
        return _RUNNERS[args.command](opts)
    except FileNotFoundError as exc:
        _err("missing-file", exc)
        return EXIT_FILE
    except (BundleError, RoutingError, CheckpointError, UnknownConditionError) as exc:
        _err("format", exc)
        return EXIT_FORMAT
    except ValueError as exc:
        _err("invalid-value", exc)
        return EXIT_FORMAT
    except RuntimeError as exc:
        _err("invalid-combination", exc)
        return EXIT_COMBO


if __name__ == "__main__":
    sys.exit(main())
