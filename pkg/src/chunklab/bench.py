"""Experiment orchestration: preset sweeps with deterministic seeding,
metric aggregation, closed-form analytic tables, and CSV/JSON emission."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .envs import TaskSpec
from .policy import Policy
from .runtime import (
    Strategy,
    max_reaction_latency,
    run_episodes,
    run_with_quantization,
    time_per_chunk,
)

CSV_HEADER = (
    "task,strategy,delta,K,q,success_rate,mean_steps,mean_discontinuity,"
    "mean_reaction_ticks,analytic_time_ms"
)


class MissingCheckpointError(FileNotFoundError):
    """A sweep point referenced a policy checkpoint that is not available."""


@dataclass(frozen=True)
class SweepPoint:
    delta: int
    exec_horizon: int


def preset_points(preset: str) -> tuple[SweepPoint, ...]:
    """Two standard grids: fixed delay with growing execution horizon, and a
    delay ramp with K = max(delta, 1)."""
    if preset == "horizon":
        return tuple(SweepPoint(1, k) for k in range(1, 9))
    if preset == "delay":
        return tuple(SweepPoint(d, max(d, 1)) for d in range(5))
    raise ValueError(f"unknown preset {preset!r}; expected 'horizon' or 'delay'")


@dataclass(frozen=True)
class SweepSpec:
    preset: str = "delay"
    tasks: tuple[str, ...] = ("chase",)
    strategies: tuple[str, ...] = ("sync", "naive", "rtc", "vlash")
    episodes_per_point: int = 64
    eval_seed: int = 0
    q: int = 1
    points: tuple[SweepPoint, ...] = ()

    def __post_init__(self):
        if self.episodes_per_point < 1:
            raise ValueError("episodes_per_point must be >= 1")
        for s in self.strategies:
            Strategy.parse(s)

    def resolve_points(self) -> tuple[SweepPoint, ...]:
        if self.preset == "custom":
            if not self.points:
                raise ValueError("custom preset needs explicit points")
            return self.points
        return preset_points(self.preset)


@dataclass
class ResultRow:
    task: str
    strategy: str
    delta: int
    K: int
    q: int
    success_rate: float
    mean_steps: float
    mean_discontinuity: float | None
    mean_reaction_ticks: float | None
    analytic_time_ms: float


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def to_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.rows]


def episode_seeds(eval_seed: int, count: int) -> list[int]:
    """Episode seeds shared across strategies at a sweep point, so strategy
    comparisons are paired."""
    return [eval_seed * 1_000_003 + i for i in range(count)]


def _aggregate(task_name, strategy, delta, k, q, results) -> ResultRow:
    succ = np.array([r.success for r in results], dtype=float)
    steps = np.array([r.steps for r in results], dtype=float)
    disc = [r.switch_discontinuity for r in results if r.switch_discontinuity is not None]
    reac = [r.reaction_latency_ticks for r in results if r.reaction_latency_ticks is not None]
    times = np.array([r.wall_model_ms for r in results], dtype=float)
    return ResultRow(
        task=task_name,
        strategy=strategy,
        delta=delta,
        K=k,
        q=q,
        success_rate=float(succ.mean()),
        mean_steps=float(steps.mean()),
        mean_discontinuity=float(np.mean(disc)) if disc else None,
        mean_reaction_ticks=float(np.mean(reac)) if reac else None,
        analytic_time_ms=float(times.mean()),
    )


def run_sweep(
    spec: SweepSpec,
    tasks: Mapping[str, TaskSpec],
    policies: Mapping[str, Sequence[Policy]],
) -> ResultTable:
    """Evaluate every (task, point, strategy) cell.

    ``policies`` maps task name to one or more trained policies (one per
    training seed); metrics aggregate over training seeds x episodes. The
    synchronous baseline always runs with zero inference delay but matches
    the point's execution horizon. Deterministic given the spec seeds.
    """
    table = ResultTable()
    points = spec.resolve_points()
    for task_name in spec.tasks:
        if task_name not in tasks:
            raise MissingCheckpointError(f"no task spec provided for {task_name!r}")
        if task_name not in policies or not policies[task_name]:
            raise MissingCheckpointError(f"no policy checkpoint provided for task {task_name!r}")
        task = tasks[task_name]
        for point in points:
            seeds = episode_seeds(spec.eval_seed, spec.episodes_per_point)
            for strat in spec.strategies:
                strategy = Strategy.parse(strat)
                delta = 0 if strategy is Strategy.SYNC else point.delta
                collected = []
                for pol in policies[task_name]:
                    if spec.q == 1:
                        collected.extend(
                            run_episodes(task, pol, strategy, delta, point.exec_horizon, seeds)
                        )
                    else:
                        collected.extend(
                            run_with_quantization(
                                task, pol, strategy, spec.q, delta, point.exec_horizon, seeds
                            )
                        )
                table.rows.append(
                    _aggregate(
                        task_name,
                        strategy.value,
                        delta,
                        point.exec_horizon,
                        spec.q,
                        collected,
                    )
                )
    return table


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def emit(table: ResultTable, fmt: str, path) -> None:
    """Write a table as CSV (fixed header, plain decimal numbers) or JSON."""
    if not table.rows:
        raise ValueError("refusing to emit an empty table")
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER.split(","))
            for r in table.rows:
                writer.writerow(
                    [
                        r.task,
                        r.strategy,
                        r.delta,
                        r.K,
                        r.q,
                        _fmt(r.success_rate),
                        _fmt(r.mean_steps),
                        _fmt(r.mean_discontinuity),
                        _fmt(r.mean_reaction_ticks),
                        _fmt(r.analytic_time_ms),
                    ]
                )
    elif fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"rows": table.to_dicts()}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown emit format {fmt!r}")


def table_from_json(payload: Mapping) -> ResultTable:
    return ResultTable(rows=[ResultRow(**row) for row in payload["rows"]])


# -- closed-form tables -------------------------------------------------------------


@dataclass(frozen=True)
class ReactionRow:
    label: str
    exec_ms: float
    inf_ms: float
    sync_ms: float
    async_ms: float
    speedup: float


@dataclass(frozen=True)
class ChunkTimeRow:
    exec_ms: float
    inf_ms: float
    K: int
    delay: int
    sync_ms: float
    async_ms: float


# Measured single-image inference latencies on three GPU tiers, against a
# 500 ms chunk execution (K=25 at 50 Hz).
DEFAULT_REACTION_CONFIGS = (
    ("gpu-a", 500.0, 30.4),
    ("gpu-b", 500.0, 36.1),
    ("gpu-c", 500.0, 64.1),
)

# Laptop-GPU latency against K=5 at 30 Hz (166 ms execution per chunk).
DEFAULT_CHUNK_CONFIGS = tuple((166.0, 103.0, 5, d) for d in range(5))


@dataclass
class AnalyticReport:
    reaction_rows: list
    chunk_rows: list

    def to_text(self) -> str:
        lines = ["reaction latency (ms): label exec inf sync async speedup"]
        for r in self.reaction_rows:
            lines.append(
                f"  {r.label:8s} {r.exec_ms:7.1f} {r.inf_ms:6.1f} "
                f"{r.sync_ms:7.1f} {r.async_ms:6.1f} {r.speedup:5.1f}x"
            )
        lines.append("time per chunk (ms): exec inf K delay sync async")
        for r in self.chunk_rows:
            lines.append(
                f"  {r.exec_ms:7.1f} {r.inf_ms:6.1f} {r.K:2d} {r.delay:2d} "
                f"{r.sync_ms:7.1f} {r.async_ms:7.1f}"
            )
        return "\n".join(lines)

    def to_dicts(self) -> dict:
        return {
            "reaction": [asdict(r) for r in self.reaction_rows],
            "time_per_chunk": [asdict(r) for r in self.chunk_rows],
        }


def analytic_tables(
    reaction_configs: Sequence[tuple] | None = None,
    chunk_configs: Sequence[tuple] | None = None,
) -> AnalyticReport:
    """Pure-formula report: worst-case reaction latency per device config and
    time-per-chunk across delays."""
    reaction_rows = []
    for label, exec_ms, inf_ms in reaction_configs or DEFAULT_REACTION_CONFIGS:
        sync_ms = max_reaction_latency(exec_ms, inf_ms, "sync")
        async_ms = max_reaction_latency(exec_ms, inf_ms, "async")
        reaction_rows.append(
            ReactionRow(
                label=label,
                exec_ms=exec_ms,
                inf_ms=inf_ms,
                sync_ms=sync_ms,
                async_ms=async_ms,
                speedup=sync_ms / async_ms,
            )
        )
    chunk_rows = []
    for exec_ms, inf_ms, k, delay in chunk_configs or DEFAULT_CHUNK_CONFIGS:
        chunk_rows.append(
            ChunkTimeRow(
                exec_ms=exec_ms,
                inf_ms=inf_ms,
                K=k,
                delay=delay,
                sync_ms=time_per_chunk(exec_ms, inf_ms, k, delay, "sync"),
                async_ms=time_per_chunk(exec_ms, inf_ms, k, delay, "async"),
            )
        )
    return AnalyticReport(reaction_rows=reaction_rows, chunk_rows=chunk_rows)
