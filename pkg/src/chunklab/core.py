"""Shared domain types and tick arithmetic for chunked control.

Everything on the control side is measured on a logical clock: one tick is
one controller period, and wall time enters only in the analytics layer.
Intervals are half-open in integer ticks so scheduling math stays exact.
All types here are immutable value types and safe to copy across execution
contexts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

Tick = int


class InvalidHorizonError(ValueError):
    """Raised for a non-positive or inconsistent horizon."""


class InvalidDelayError(ValueError):
    """Raised for a negative inference delay."""


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} must be finite")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RobotState:
    """Proprioceptive pose in task space."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _as_vector(self.coords, "coords"))

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    def shifted(self, delta) -> "RobotState":
        return RobotState(self.coords + np.asarray(delta, dtype=np.float64))

    def __eq__(self, other) -> bool:
        return isinstance(other, RobotState) and np.array_equal(self.coords, other.coords)


@dataclass(frozen=True, eq=False)
class Observation:
    """Environment features plus the tick they were sampled at.

    ``captured_at`` makes staleness an explicit, measurable quantity: a chunk
    conditioned on this observation reacts to the world as of that tick, not
    as of the tick its actions execute.
    """

    features: np.ndarray
    captured_at: Tick

    def __post_init__(self):
        object.__setattr__(self, "features", _as_vector(self.features, "features"))
        if self.captured_at < 0:
            raise ValueError("captured_at must be a non-negative tick")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Observation)
            and self.captured_at == other.captured_at
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True, eq=False)
class Action:
    """Delta command in task-space length per tick. Unconstrained here;
    the environment clips to its action bound on application."""

    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", _as_vector(self.delta, "delta"))

    @property
    def dim(self) -> int:
        return self.delta.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, Action) and np.array_equal(self.delta, other.delta)


@dataclass(frozen=True)
class ActionChunk:
    """A block of ``horizon`` consecutive actions from one inference call.

    ``issued_at`` is the tick inference started (the tick of the conditioning
    inputs), ``exec_horizon`` how many actions are meant to execute before the
    next handoff, and ``cursor`` the index of the next unexecuted action.
    """

    actions: np.ndarray  # (horizon, action_dim)
    issued_at: Tick
    horizon: int
    exec_horizon: int
    cursor: int = 0

    def __post_init__(self):
        acts = np.asarray(self.actions, dtype=np.float64)
        if acts.ndim != 2:
            raise ValueError(f"actions must be (horizon, dim), got shape {acts.shape}")
        if not np.all(np.isfinite(acts)):
            raise ValueError("chunk actions must be finite")
        acts = acts.copy()
        acts.setflags(write=False)
        object.__setattr__(self, "actions", acts)
        if self.horizon != acts.shape[0]:
            raise InvalidHorizonError(
                f"horizon {self.horizon} does not match {acts.shape[0]} actions"
            )
        if not 1 <= self.exec_horizon <= self.horizon:
            raise InvalidHorizonError(
                f"exec_horizon must satisfy 1 <= K <= H, got K={self.exec_horizon} H={self.horizon}"
            )
        if not 0 <= self.cursor <= self.horizon:
            raise ValueError(f"cursor out of range: {self.cursor}")

    def action_at(self, i: int) -> Action:
        return Action(self.actions[i])

    def remaining(self) -> np.ndarray:
        """Unexecuted suffix; always has ``horizon - cursor`` rows."""
        return self.actions[self.cursor :]

    def advanced(self, by: int = 1) -> "ActionChunk":
        return replace(self, cursor=self.cursor + by)


@dataclass(frozen=True)
class Interval:
    """Half-open tick interval [start, end)."""

    start: Tick
    end: Tick

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"interval start {self.start} exceeds end {self.end}")

    @property
    def width(self) -> int:
        return self.end - self.start

    def contains(self, t: Tick) -> bool:
        return self.start <= t < self.end

    def shifted(self, by: int) -> "Interval":
        return Interval(self.start + by, self.end + by)


@dataclass(frozen=True)
class LatencyModel:
    """Inference delay in ticks.

    ``fixed`` mode always takes ``delta_ticks``. ``jitter`` mode samples the
    actual delay uniformly from [delta_ticks - jitter_max, delta_ticks] but
    the handoff is always planned at ``delta_ticks`` (pessimistic bound), so
    an early finish waits and the schedule stays deterministic.
    """

    mode: str = "fixed"
    delta_ticks: int = 0
    jitter_max: int = 0

    def __post_init__(self):
        if self.mode not in ("fixed", "jitter"):
            raise ValueError(f"unknown latency mode {self.mode!r}")
        if self.delta_ticks < 0:
            raise InvalidDelayError(f"delta_ticks must be >= 0, got {self.delta_ticks}")
        if self.jitter_max < 0:
            raise ValueError("jitter_max must be >= 0")

    def planned_delay(self) -> int:
        return self.delta_ticks

    def sample_delay(self, rng: np.random.Generator) -> int:
        if self.mode == "fixed":
            return self.delta_ticks
        actual = self.delta_ticks - int(rng.integers(0, self.jitter_max + 1))
        return max(actual, 0)


def prediction_interval(t: Tick, k: int) -> Interval:
    """Ticks [t, t+K) a chunk issued at t is planned for."""
    if k < 1:
        raise InvalidHorizonError(f"execution horizon must be >= 1, got {k}")
    return Interval(t, t + k)


def execution_interval(t: Tick, k: int, delta: int) -> Interval:
    """Ticks [t+delta, t+delta+K) the same chunk actually executes in."""
    if k < 1:
        raise InvalidHorizonError(f"execution horizon must be >= 1, got {k}")
    if delta < 0:
        raise InvalidDelayError(f"inference delay must be >= 0, got {delta}")
    return Interval(t + delta, t + delta + k)
