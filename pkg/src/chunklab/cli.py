"""Command-line entry point.

Subcommands cover the full pipeline: ``gen-data`` records expert
demonstrations, ``train`` fits a policy, ``eval`` rolls out a scheduling
strategy, ``sweep`` runs preset grids from a JSON config, and ``analytics``
prints the closed-form latency tables. Every run writes a manifest JSON
(config hash, package version, seeds) next to its outputs, and all
randomness descends from the --seed flags, so rerunning a command sequence
reproduces its outputs byte for byte.

Exit codes: 0 success, 2 invalid configuration, 3 missing input file,
1 any other failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__, bench, data, envs, policy as policy_mod, runtime
from .nn import Schedule
from .nn.checkpoint import config_hash


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


def _load_task(name_or_path: str) -> envs.TaskSpec:
    p = Path(name_or_path)
    if p.suffix == ".json":
        if not p.exists():
            raise FileNotFoundError(f"task config not found: {p}")
        return envs.TaskSpec.load_json(p)
    try:
        return envs.make_task(name_or_path)
    except envs.TaskConfigError as exc:
        raise ConfigError(str(exc)) from exc


def _write_manifest(out_path: Path, command: str, config: dict) -> None:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "version": __version__,
    }
    target = out_path / "run_manifest.json" if out_path.is_dir() else out_path.with_suffix(
        out_path.suffix + ".manifest.json"
    )
    with open(target, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_gen_data(args) -> int:
    task = _load_task(args.task)
    ds = data.generate_dataset(task, args.episodes, args.seed)
    if args.quantize > 1:
        ds = data.quantize_dataset(ds, args.quantize)
    out = Path(args.out)
    data.save_dataset(ds, out)
    _write_manifest(
        out,
        "gen-data",
        {
            "task": args.task,
            "episodes": args.episodes,
            "seed": args.seed,
            "quantize": args.quantize,
        },
    )
    print(f"wrote {len(ds.trajectories)} trajectories to {out}")
    return 0


def _cmd_train(args) -> int:
    if not Path(args.data).exists():
        raise FileNotFoundError(f"dataset not found: {args.data}")
    ds = data.load_dataset(args.data)
    if len(ds) == 0:
        raise ConfigError(f"dataset {args.data} is empty")
    config = policy_mod.PolicyConfig(
        backbone=args.backbone,
        horizon=args.horizon,
        flow_steps=args.flow_steps,
        width=args.width,
        depth=args.depth,
        delta_max=args.delta_max,
    )
    decay_steps = args.decay_steps if args.decay_steps is not None else args.steps
    try:
        schedule = Schedule(
            lr_peak=args.lr_peak,
            lr_min=args.lr_min,
            warmup_steps=min(args.warmup, decay_steps),
            decay_steps=decay_steps,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        pol = policy_mod.train(
            ds,
            config,
            args.mode,
            steps=args.steps,
            batch_size=args.batch_size,
            seed=args.seed,
            schedule=schedule,
        )
    except policy_mod.PolicyConfigError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    policy_mod.save_policy(out, pol)
    _write_manifest(
        out,
        "train",
        {
            "data": str(args.data),
            "mode": args.mode,
            "seed": args.seed,
            "steps": args.steps,
            "batch_size": args.batch_size,
            "policy": asdict(config),
            "schedule": asdict(schedule),
        },
    )
    final = sum(pol.history[-50:]) / max(len(pol.history[-50:]), 1)
    print(f"trained {args.mode} policy for {args.steps} steps (final loss ~{final:.4f}) -> {out}")
    return 0


def _episode_dict(r: runtime.EpisodeResult, seed: int) -> dict:
    return {
        "seed": seed,
        "success": bool(r.success),
        "steps": r.steps,
        "wall_model_ms": r.wall_model_ms,
        "idle_ticks": r.idle_ticks,
        "switch_discontinuity": r.switch_discontinuity,
        "reaction_latency_ticks": r.reaction_latency_ticks,
        "n_chunks": r.n_chunks,
    }


def _cmd_eval(args) -> int:
    if not Path(args.ckpt).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.ckpt}")
    pol = policy_mod.load_policy(args.ckpt)
    task = _load_task(args.task)
    strategy = runtime.Strategy.parse(args.strategy)
    seeds = bench.episode_seeds(args.seed, args.episodes)
    try:
        if args.quantize > 1:
            results = runtime.run_with_quantization(
                task, pol, strategy, args.quantize, args.delta, args.exec_horizon, seeds
            )
        else:
            results = runtime.run_episodes(
                task, pol, strategy, args.delta, args.exec_horizon, seeds
            )
    except (runtime.InfeasibleScheduleError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    agg = bench._aggregate(
        task.name, strategy.value, args.delta, args.exec_horizon, args.quantize, results
    )
    payload = {
        "config": {
            "ckpt": str(args.ckpt),
            "task": args.task,
            "strategy": strategy.value,
            "delta": args.delta,
            "exec_horizon": args.exec_horizon,
            "quantize": args.quantize,
            "episodes": args.episodes,
            "seed": args.seed,
        },
        "episodes": [_episode_dict(r, s) for r, s in zip(results, seeds)],
        "aggregate": asdict(agg),
    }
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "eval", payload["config"])
    print(
        f"{task.name}/{strategy.value} delta={args.delta} K={args.exec_horizon}: "
        f"success {agg.success_rate:.3f}, steps {agg.mean_steps:.1f} -> {out}"
    )
    return 0


_SWEEP_KEYS = {
    "tasks",
    "strategies",
    "episodes_per_point",
    "eval_seed",
    "q",
    "points",
    "checkpoints",
}


def _cmd_sweep(args) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        raise FileNotFoundError(f"sweep config not found: {cfg_path}")
    with open(cfg_path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    unknown = set(raw) - _SWEEP_KEYS
    if unknown:
        raise ConfigError(f"unknown sweep config keys: {sorted(unknown)}")
    if "checkpoints" not in raw:
        raise ConfigError("sweep config must map 'checkpoints': {task: [paths...]}")
    spec = bench.SweepSpec(
        preset=args.preset,
        tasks=tuple(raw.get("tasks", list(raw["checkpoints"].keys()))),
        strategies=tuple(raw.get("strategies", ["sync", "naive", "rtc", "vlash"])),
        episodes_per_point=int(raw.get("episodes_per_point", 64)),
        eval_seed=int(raw.get("eval_seed", 0)),
        q=int(raw.get("q", 1)),
        points=tuple(bench.SweepPoint(int(d), int(k)) for d, k in raw.get("points", [])),
    )
    tasks = {name: _load_task(name) for name in spec.tasks}
    policies = {}
    for name in spec.tasks:
        paths = raw["checkpoints"].get(name, [])
        if not paths:
            raise bench.MissingCheckpointError(f"no checkpoints listed for task {name!r}")
        for p in paths:
            if not Path(p).exists():
                raise FileNotFoundError(f"checkpoint not found: {p}")
        policies[name] = [policy_mod.load_policy(p) for p in paths]
    workers = int(os.environ.get("CHUNKLAB_WORKERS", "1"))
    if workers > 1:
        print(f"note: CHUNKLAB_WORKERS={workers}; points are run serially in-process")
    table = bench.run_sweep(spec, tasks, policies)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bench.emit(table, "csv", out_dir / "results.csv")
    bench.emit(table, "json", out_dir / "results.json")
    _write_manifest(out_dir, "sweep", {"preset": args.preset, "config": raw})
    print(f"wrote {len(table.rows)} rows to {out_dir}/results.csv")
    return 0


def _cmd_analytics(args) -> int:
    report = bench.analytic_tables()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            if args.format == "json":
                json.dump(report.to_dicts(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            else:
                fh.write(report.to_text() + "\n")
        _write_manifest(Path(args.out), "analytics", {"format": args.format})
    print(report.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunklab",
        description="Asynchronous chunked-control laboratory: data, training, "
        "scheduling evaluation, sweeps, and latency analytics.",
    )
    parser.add_argument("--version", action="version", version=f"chunklab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="record successful expert demonstrations")
    g.add_argument("--task", required=True, help="preset name (reach|chase|catch) or task JSON")
    g.add_argument("--episodes", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output JSONL path")
    g.add_argument("--quantize", type=int, default=1, help="macro-action factor q")
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="train a flow policy on a dataset")
    t.add_argument("--data", required=True, help="dataset JSONL from gen-data")
    t.add_argument("--mode", choices=list(policy_mod.TRAIN_MODES), default="offset")
    t.add_argument("--task", default=None, help="informational task name")
    t.add_argument("--delta-max", dest="delta_max", type=int, default=4)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=96)
    t.add_argument("--backbone", choices=list(policy_mod.BACKBONES), default="mixer")
    t.add_argument("--horizon", type=int, default=8)
    t.add_argument("--flow-steps", dest="flow_steps", type=int, default=10)
    t.add_argument("--width", type=int, default=64)
    t.add_argument("--depth", type=int, default=4)
    t.add_argument("--lr-peak", dest="lr_peak", type=float, default=2e-3)
    t.add_argument("--lr-min", dest="lr_min", type=float, default=1e-4)
    t.add_argument("--warmup", type=int, default=100)
    t.add_argument("--decay-steps", dest="decay_steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="roll out a strategy and write results JSON")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--task", required=True)
    e.add_argument("--strategy", required=True, choices=[s.value for s in runtime.Strategy])
    e.add_argument("--delta", type=int, required=True)
    e.add_argument("--exec-horizon", dest="exec_horizon", type=int, required=True)
    e.add_argument("--quantize", type=int, default=1)
    e.add_argument("--episodes", type=int, default=64)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=_cmd_eval)

    s = sub.add_parser("sweep", help="run a preset sweep from a JSON config")
    s.add_argument("--preset", choices=["horizon", "delay", "custom"], required=True)
    s.add_argument("--config", required=True, help="sweep config JSON")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(fn=_cmd_sweep)

    a = sub.add_parser("analytics", help="print closed-form latency tables")
    a.add_argument("--out", default=None)
    a.add_argument("--format", choices=["text", "json"], default="text")
    a.set_defaults(fn=_cmd_analytics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (
        bench.MissingCheckpointError,
        data.DatasetParseError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
