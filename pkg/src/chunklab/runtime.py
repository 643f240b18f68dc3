"""Asynchronous control executor: tick loop, inference scheduling, chunk
handoff under four strategies, state rollforward, and latency analytics.

Inference is modeled on the logical clock: a job launched at tick t with
planned delay ``delta`` hands off at tick ``t + delta``, and its inputs are
snapshotted at launch. Computing the chunk at launch or during the window is
therefore equivalent, which is what makes the loop deterministic; an optional
threaded engine really does compute chunks on a worker thread and produces
identical episodes.

Strategies (``delta`` ticks of planned inference delay, execution horizon K,
prediction horizon H):

* ``sync``   - capture inputs, stall ``delta`` ticks (zero actions), then
               execute K actions. The robot never moves on a stale chunk but
               pays the delay in idle ticks every cycle.
* ``naive``  - launch inference when ``delta`` actions remain in the current
               window; at handoff switch to the new chunk at index 0. The new
               chunk was conditioned on the launch-time state, which is
               ``delta`` ticks stale by the time it executes.
* ``rtc``    - like ``naive`` but the new chunk's first ``delta`` actions are
               pinned to the old-chunk actions that execute during inference
               (freeze-and-inpaint); at handoff execution starts at index
               ``delta``, so the pinned prefix and the actions actually
               executed coincide.
* ``vlash``  - like ``naive`` but conditions on the rollforward state: the
               launch-time state advanced by the pending actions that will
               execute during inference. Under these deterministic kinematics
               that state equals the true handoff-time state exactly.

The first chunk of an episode blocks ``delta`` ticks for every strategy.
With ``delta`` = 0 all four strategies follow identical tick schedules,
consume identical noise draws, and produce bit-identical episodes.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import (
    Action,
    InvalidDelayError,
    InvalidHorizonError,
    LatencyModel,
    RobotState,
    Tick,
)
from .envs import (
    TaskSpec,
    clip_action,
    observe,
    quantize_task,
    reset,
    step,
    success_tick_from_distances,
)
from .policy import Policy, integrate_flow

_NOISE_SALT = 0x5EED
_LATENCY_SALT = 0x1A7


class InfeasibleScheduleError(ValueError):
    """Raised when a (strategy, delta, K, H) combination cannot be scheduled."""


class UndefinedMetricError(ValueError):
    """Raised when a metric's precondition (e.g. an event) is absent."""


class Strategy(str, Enum):
    SYNC = "sync"
    NAIVE_ASYNC = "naive"
    RTC_STYLE = "rtc"
    VLASH = "vlash"

    @staticmethod
    def parse(name) -> "Strategy":
        if isinstance(name, Strategy):
            return name
        try:
            return Strategy(str(name).lower())
        except ValueError:
            raise ValueError(
                f"unknown strategy {name!r}; expected one of "
                f"{[s.value for s in Strategy]}"
            ) from None


ASYNC_STRATEGIES = (Strategy.NAIVE_ASYNC, Strategy.RTC_STYLE, Strategy.VLASH)


def rollforward(state: RobotState, pending: Sequence[Action] | np.ndarray) -> RobotState:
    """Advance a state by the actions that will execute during inference.

    ``pending`` must be the applied (bound-respecting) deltas in execution
    order; the additions run in the same order the environment applies them,
    so the result matches the simulator exactly under delta kinematics.
    """
    coords = state.coords
    for a in pending:
        delta = a.delta if isinstance(a, Action) else np.asarray(a, dtype=np.float64)
        coords = coords + delta
    return RobotState(coords)


@dataclass(frozen=True)
class ChunkRecord:
    """Provenance of one executed chunk, for reaction measurement."""

    captured_at: Tick
    handoff_tick: Tick
    first_exec_tick: Tick


@dataclass
class _Window:
    """A chunk being executed: raw commanded actions plus its index window."""

    actions: np.ndarray  # (B, H, action_dim)
    start: int
    end: int
    next_idx: int
    captured_at: int
    fresh: bool = True


@dataclass
class _PendingJob:
    handoff_tick: int
    token: object
    captured_at: int
    start: int
    end: int
    cond_states: np.ndarray  # (B, state_dim) conditioning states, for tracing


@dataclass
class ControllerState:
    """Executor bookkeeping. At most one inference job is ever in flight; in
    async strategies the idle counter stops growing after the first chunk."""

    current: _Window | None = None
    pending: _PendingJob | None = None
    executed_actions: int = 0
    idle_ticks: int = 0
    records: list = field(default_factory=list)


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    wall_model_ms: float
    idle_ticks: int
    switch_discontinuity: float | None
    reaction_latency_ticks: int | None
    n_chunks: int


@dataclass
class EpisodeTrace:
    """Debug/verification view of one batched run."""

    records: list
    applied: np.ndarray  # (T, B, action_dim)
    robots: np.ndarray  # (T+1, B, state_dim)
    targets: np.ndarray  # (T+1, B, state_dim)
    vlash_checks: list  # (handoff_tick, cond_states (B, D)) pairs
    idle_ticks: int
    waited_ticks: int


class _InlineEngine:
    """Computes a chunk immediately at submit time."""

    def submit(self, fn):
        return fn()

    def result(self, token):
        return token

    def close(self):
        pass


class _ThreadedEngine:
    """Single worker thread; submit returns a one-slot queue the worker fills.

    Demonstrates the concurrency contract: the control loop keeps ticking
    while the chunk is computed elsewhere, and the handoff still happens at
    the pre-planned tick with the pre-planned inputs.
    """

    def __init__(self):
        self._jobs: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        while True:
            item = self._jobs.get()
            if item is None:
                return
            fn, out = item
            out.put(fn())

    def submit(self, fn):
        out: queue.Queue = queue.Queue(maxsize=1)
        self._jobs.put((fn, out))
        return out

    def result(self, token):
        return token.get()

    def close(self):
        self._jobs.put(None)
        self._thread.join()


def _validate_schedule(strategy: Strategy, delta: int, k: int, h: int) -> int:
    """Returns the steady-state executed window length for the strategy."""
    if not 1 <= k <= h:
        raise InvalidHorizonError(f"need 1 <= K <= H, got K={k} H={h}")
    if delta < 0:
        raise InvalidDelayError(f"inference delay must be >= 0, got {delta}")
    if strategy in ASYNC_STRATEGIES and delta > k:
        raise InfeasibleScheduleError(
            f"async scheduling needs delta <= K, got delta={delta} K={k}"
        )
    if strategy is Strategy.RTC_STYLE:
        window = min(k, h - delta)
        if window < max(delta, 1):
            raise InfeasibleScheduleError(
                f"freeze-and-inpaint needs min(K, H - delta) >= delta, got "
                f"K={k} H={h} delta={delta}"
            )
        return window
    return k


def run_episodes(
    task: TaskSpec,
    policy: Policy,
    strategy,
    delta: int,
    exec_horizon: int,
    seeds: Sequence[int],
    *,
    latency: LatencyModel | None = None,
    concurrent: bool = False,
    record_trace: bool = False,
):
    """Run one episode per seed in lockstep under a shared tick schedule.

    The schedule (launch/handoff ticks, window indices) depends only on
    (strategy, delta, K, H, episode length), so a batch shares it while every
    episode keeps its own environment and noise stream. Returns a list of
    EpisodeResult, plus an EpisodeTrace when ``record_trace`` is set.
    """
    strategy = Strategy.parse(strategy)
    lat = latency or LatencyModel("fixed", delta_ticks=delta)
    if lat.delta_ticks != delta:
        raise InvalidDelayError(
            f"latency model plans {lat.delta_ticks} ticks but delta={delta}"
        )
    K = exec_horizon
    H = policy.config.horizon
    rtc_window = _validate_schedule(strategy, delta, K, H)
    T = task.episode_len
    B = len(seeds)
    Da = policy.action_dim
    D = task.state_dim

    env_states = []
    for s in seeds:
        st, _, _ = reset(task, s)
        env_states.append(st)
    noise_rngs = [
        np.random.default_rng(np.random.SeedSequence([int(s), _NOISE_SALT])) for s in seeds
    ]
    lat_rng = np.random.default_rng(
        np.random.SeedSequence([int(seeds[0]) if B else 0, _LATENCY_SALT])
    )

    ctrl = ControllerState()
    engine = _ThreadedEngine() if concurrent else _InlineEngine()
    applied_log = np.zeros((T, B, Da))
    robots = np.zeros((T + 1, B, D))
    targets = np.zeros((T + 1, B, D))
    robots[0] = np.stack([s.robot.coords for s in env_states])
    targets[0] = np.stack([s.target for s in env_states])
    disc: list[np.ndarray] = []  # one (B,) array per handoff
    last_chunk_applied: np.ndarray | None = None
    vlash_checks: list = []
    waited = 0
    next_launch = 0

    def launch(t: int):
        nonlocal waited
        obs_feats = np.stack([observe(s).features for s in env_states])
        states = np.stack([s.robot.coords for s in env_states])
        first = ctrl.current is None
        if first:
            # Stall actions fill the first inference window for every strategy.
            pend = np.zeros((B, delta, Da))
        elif delta == 0:
            pend = np.zeros((B, 0, Da))
        else:
            rows = ctrl.current.actions[:, ctrl.current.next_idx : ctrl.current.next_idx + delta]
            if rows.shape[1] != delta:
                raise InfeasibleScheduleError("launch found fewer pending actions than delta")
            pend = np.stack(
                [
                    np.stack([clip_action(rows[b, j], task.action_bound) for j in range(delta)])
                    for b in range(B)
                ]
            )
        if strategy is Strategy.VLASH and pend.shape[1] > 0:
            cond = np.stack(
                [rollforward(RobotState(states[b]), pend[b]).coords for b in range(B)]
            )
        else:
            cond = states
        frozen = None
        if strategy is Strategy.RTC_STYLE and not first and delta > 0:
            frozen = pend
        waited += lat.planned_delay() - lat.sample_delay(lat_rng)
        noise = np.stack([rng.standard_normal((H, Da)) for rng in noise_rngs])
        token = engine.submit(
            lambda: integrate_flow(policy, obs_feats, cond, noise, frozen_prefix=frozen)
        )
        start = delta if (strategy is Strategy.RTC_STYLE and not first) else 0
        window = rtc_window if (strategy is Strategy.RTC_STYLE and not first) else K
        ctrl.pending = _PendingJob(
            handoff_tick=t + delta,
            token=token,
            captured_at=t,
            start=start,
            end=start + window,
            cond_states=cond,
        )
        return window

    def switch(t: int):
        nonlocal last_chunk_applied
        job = ctrl.pending
        actions = engine.result(job.token)
        ctrl.current = _Window(
            actions=actions,
            start=job.start,
            end=job.end,
            next_idx=job.start,
            captured_at=job.captured_at,
        )
        ctrl.pending = None
        if strategy is Strategy.VLASH:
            vlash_checks.append((t, job.cond_states))
        ctrl.records.append(
            ChunkRecord(captured_at=job.captured_at, handoff_tick=t, first_exec_tick=t)
        )

    try:
        for t in range(T):
            if ctrl.pending is not None and ctrl.pending.handoff_tick == t:
                switch(t)
            if t == next_launch:
                window = launch(t)
                if strategy is Strategy.SYNC:
                    next_launch = t + delta + K
                else:
                    next_launch = t + window
                if ctrl.pending.handoff_tick == t:
                    switch(t)
            cur = ctrl.current
            if cur is not None and cur.next_idx < cur.end:
                cmd = cur.actions[:, cur.next_idx]
                applied = np.stack([clip_action(cmd[b], task.action_bound) for b in range(B)])
                if cur.fresh:
                    if last_chunk_applied is not None:
                        disc.append(
                            np.linalg.norm(applied - last_chunk_applied, axis=1)
                        )
                    cur.fresh = False
                cur.next_idx += 1
                last_chunk_applied = applied
                ctrl.executed_actions += 1
            else:
                cmd = np.zeros((B, Da))
                applied = cmd
                ctrl.idle_ticks += 1
            for b in range(B):
                env_states[b] = step(env_states[b], cmd[b])
            applied_log[t] = applied
            robots[t + 1] = np.stack([s.robot.coords for s in env_states])
            targets[t + 1] = np.stack([s.target for s in env_states])
    finally:
        engine.close()

    dists = np.linalg.norm(robots - targets, axis=2)  # (T+1, B)
    event_tick = min((e for e, _ in task.event_schedule), default=None)
    reaction = None
    if event_tick is not None:
        try:
            reaction = measure_reaction(ctrl.records, event_tick)
        except UndefinedMetricError:
            reaction = None
    disc_arr = np.stack(disc) if disc else None  # (n_handoffs, B)
    results = []
    for b in range(B):
        done = success_tick_from_distances(task, dists[:, b])
        steps_to_done = done if done is not None else T
        results.append(
            EpisodeResult(
                success=done is not None,
                steps=int(steps_to_done),
                wall_model_ms=float(steps_to_done * task.tick_ms),
                idle_ticks=int(ctrl.idle_ticks),
                switch_discontinuity=(
                    float(disc_arr[:, b].mean()) if disc_arr is not None else None
                ),
                reaction_latency_ticks=reaction,
                n_chunks=len(ctrl.records),
            )
        )
    if record_trace:
        trace = EpisodeTrace(
            records=list(ctrl.records),
            applied=applied_log,
            robots=robots,
            targets=targets,
            vlash_checks=vlash_checks,
            idle_ticks=ctrl.idle_ticks,
            waited_ticks=waited,
        )
        return results, trace
    return results


def run_episode(
    task: TaskSpec,
    policy: Policy,
    strategy,
    delta: int,
    exec_horizon: int,
    seed: int,
    *,
    latency: LatencyModel | None = None,
    concurrent: bool = False,
) -> EpisodeResult:
    """Single-episode convenience wrapper around run_episodes."""
    return run_episodes(
        task,
        policy,
        strategy,
        delta,
        exec_horizon,
        [seed],
        latency=latency,
        concurrent=concurrent,
    )[0]


def run_with_quantization(
    task: TaskSpec,
    policy_q: Policy,
    strategy,
    q: int,
    delta: int,
    exec_horizon: int,
    seeds: Sequence[int],
    **kwargs,
):
    """Run a macro-action controller: one controller tick applies one macro
    action covering q original periods, so completion takes roughly q times
    fewer steps. ``policy_q`` must have been trained on data quantized with
    the same factor. q=1 is exactly run_episodes."""
    return run_episodes(
        quantize_task(task, q), policy_q, strategy, delta, exec_horizon, seeds, **kwargs
    )


# -- closed-form latency analytics ------------------------------------------------


def time_per_chunk(exec_ms: float, inf_ms: float, k: int, delay: int, mode: str) -> float:
    """Wall time consumed per chunk of K executed actions.

    Synchronous inference serializes execution and inference. Asynchronous
    inference hides up to ``delay`` action periods of the inference time
    behind execution; the remainder, if any, still stalls the robot.
    """
    if exec_ms <= 0 or inf_ms <= 0:
        raise ValueError("durations must be positive")
    if mode == "sync":
        return exec_ms + inf_ms
    if mode == "async":
        return exec_ms + max(0.0, inf_ms - (exec_ms / k) * delay)
    raise ValueError(f"unknown mode {mode!r}")


def max_reaction_latency(exec_ms: float, inf_ms: float, mode: str) -> float:
    """Worst-case wall time from an environment change to acting on it:
    a full chunk execution plus inference when synchronous, inference alone
    when asynchronous."""
    if exec_ms <= 0 or inf_ms <= 0:
        raise ValueError("durations must be positive")
    if mode == "sync":
        return exec_ms + inf_ms
    if mode == "async":
        return inf_ms
    raise ValueError(f"unknown mode {mode!r}")


def measure_reaction(chunk_records: Sequence[ChunkRecord], event_tick: Tick | None) -> int:
    """Ticks from an event until the first executed action of a chunk whose
    conditioning observation postdates the event."""
    if event_tick is None:
        raise UndefinedMetricError("no event scheduled; reaction latency undefined")
    for rec in chunk_records:
        if rec.captured_at >= event_tick:
            return int(rec.first_exec_tick - event_tick)
    raise UndefinedMetricError("no executed chunk observed the event")
