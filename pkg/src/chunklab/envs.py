"""Deterministic point-mass tasks with delta-action kinematics.

Three presets with increasing dynamism:

* ``reach``  - static target, no-regression control task
* ``chase``  - target on a circular path, must be held in a radius
* ``catch``  - ballistic target that must be intercepted at a terminal tick

The robot integrates clipped delta actions exactly (``robot' = robot +
clip(a)``), which makes summing commanded deltas an exact predictor of the
future pose. Observations deliberately carry target information only; the
robot pose travels separately as proprioceptive state, so observation
staleness and state staleness can be probed independently by a scheduler.
Mid-episode events reparameterize the target path and are visible in
observations from their scheduled tick onward, never earlier.

Environment state is an immutable value type. Episodes are a pure function
of (task, seed, action sequence); independent episodes can run in parallel
with no shared mutable state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .core import Action, Observation, RobotState, Tick

TASK_NAMES = ("reach", "chase", "catch")
EXPERT_GAIN = 0.5


class EpisodeOverError(RuntimeError):
    """Raised when stepping an episode past its configured length."""


class TaskConfigError(ValueError):
    """Raised for malformed task specifications or event payloads."""


@dataclass(frozen=True)
class TaskSpec:
    """Static description of a task; all randomness comes from the reset seed."""

    name: str
    state_dim: int
    obs_dim: int
    action_bound: float
    episode_len: int
    success_radius: float
    hold_ticks: int
    target_motion: Mapping[str, Any]
    event_schedule: tuple = ()
    terminal_tick: int | None = None
    start_region: float = 0.1
    control_rate_hz: float = 30.0

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise TaskConfigError(f"unknown task name {self.name!r}")
        if self.action_bound <= 0:
            raise TaskConfigError("action_bound must be > 0")
        if self.success_radius <= 0:
            raise TaskConfigError("success_radius must be > 0")
        if self.episode_len < 1:
            raise TaskConfigError("episode_len must be >= 1")
        if self.hold_ticks < 1:
            raise TaskConfigError("hold_ticks must be >= 1")
        if self.name == "catch" and self.terminal_tick is None:
            raise TaskConfigError("catch tasks need a terminal_tick")
        if self.terminal_tick is not None and not 0 < self.terminal_tick <= self.episode_len:
            raise TaskConfigError("terminal_tick must lie within the episode")
        events = tuple((int(t), dict(u)) for t, u in self.event_schedule)
        for t, _ in events:
            if not 0 < t < self.episode_len:
                raise TaskConfigError(f"event tick {t} outside episode (0, {self.episode_len})")
        object.__setattr__(self, "event_schedule", events)

    @property
    def tick_ms(self) -> float:
        return 1000.0 / self.control_rate_hz

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "dims": {"state": self.state_dim, "obs": self.obs_dim},
            "bounds": {"action": self.action_bound, "success_radius": self.success_radius},
            "episode_len": self.episode_len,
            "hold_ticks": self.hold_ticks,
            "target_motion": dict(self.target_motion),
            "event_schedule": [[t, u] for t, u in self.event_schedule],
            "terminal_tick": self.terminal_tick,
            "start_region": self.start_region,
            "control_rate_hz": self.control_rate_hz,
        }

    @staticmethod
    def from_json_dict(d: Mapping[str, Any]) -> "TaskSpec":
        try:
            return TaskSpec(
                name=d["name"],
                state_dim=int(d["dims"]["state"]),
                obs_dim=int(d["dims"]["obs"]),
                action_bound=float(d["bounds"]["action"]),
                episode_len=int(d["episode_len"]),
                success_radius=float(d["bounds"]["success_radius"]),
                hold_ticks=int(d["hold_ticks"]),
                target_motion=dict(d["target_motion"]),
                event_schedule=tuple((int(t), dict(u)) for t, u in d.get("event_schedule", [])),
                terminal_tick=None if d.get("terminal_tick") is None else int(d["terminal_tick"]),
                start_region=float(d.get("start_region", 0.1)),
                control_rate_hz=float(d.get("control_rate_hz", 30.0)),
            )
        except KeyError as exc:
            raise TaskConfigError(f"task config missing key: {exc}") from exc

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load_json(path) -> "TaskSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return TaskSpec.from_json_dict(json.load(fh))


_PRESETS: dict[str, dict] = {
    "reach": dict(
        state_dim=2,
        obs_dim=2,
        action_bound=0.08,
        episode_len=60,
        success_radius=0.06,
        hold_ticks=10,
        start_region=0.2,
        target_motion={"kind": "static", "distance": [0.4, 0.95]},
    ),
    "chase": dict(
        state_dim=2,
        obs_dim=4,
        action_bound=0.08,
        episode_len=56,
        success_radius=0.06,
        hold_ticks=8,
        target_motion={
            "kind": "circle",
            "center_box": 0.15,
            "radius": [0.35, 0.55],
            "speed": [0.006, 0.014],
        },
    ),
    "catch": dict(
        state_dim=2,
        obs_dim=4,
        action_bound=0.08,
        episode_len=60,
        success_radius=0.07,
        hold_ticks=1,
        terminal_tick=45,
        target_motion={
            "kind": "linear",
            "start_ring": [0.9, 1.1],
            "speed": [0.018, 0.03],
            "aim_box": 0.25,
        },
    ),
}


def make_task(name: str, **overrides) -> TaskSpec:
    """Build a preset task, optionally overriding any TaskSpec field."""
    if name not in _PRESETS:
        raise TaskConfigError(f"no preset task named {name!r}")
    kwargs = dict(_PRESETS[name])
    kwargs.update(overrides)
    return TaskSpec(name=name, **kwargs)


@dataclass(frozen=True)
class PathState:
    """Current parameters of the target's motion. Advanced once per tick."""

    kind: str  # static | circle | linear
    pos: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float = 0.0
    omega: float = 0.0
    phase: float = 0.0
    velocity: np.ndarray | None = None

    def position(self) -> np.ndarray:
        if self.kind == "circle":
            return self.center + self.radius * np.array(
                [np.cos(self.phase), np.sin(self.phase)]
            )
        return self.pos

    def advance(self) -> "PathState":
        if self.kind == "static":
            return self
        if self.kind == "circle":
            return replace(self, phase=self.phase + self.omega)
        return replace(self, pos=self.pos + self.velocity)

    def step_displacement(self) -> np.ndarray:
        """Target displacement over the next tick (what an observer can use to lead)."""
        return self.advance().position() - self.position()


def _apply_event(path: PathState, updates: Mapping[str, Any]) -> PathState:
    allowed = {
        "static": {"pos"},
        "circle": {"reverse", "phase_jump", "center", "omega"},
        "linear": {"pos", "velocity"},
    }[path.kind]
    unknown = set(updates) - allowed
    if unknown:
        raise TaskConfigError(f"event keys {sorted(unknown)} not valid for {path.kind} path")
    out = path
    if "pos" in updates:
        out = replace(out, pos=np.asarray(updates["pos"], dtype=np.float64))
    if "center" in updates:
        out = replace(out, center=np.asarray(updates["center"], dtype=np.float64))
    if "velocity" in updates:
        out = replace(out, velocity=np.asarray(updates["velocity"], dtype=np.float64))
    if "omega" in updates:
        out = replace(out, omega=float(updates["omega"]))
    if updates.get("reverse"):
        out = replace(out, omega=-out.omega)
    if "phase_jump" in updates:
        out = replace(out, phase=out.phase + float(updates["phase_jump"]))
    return out


@dataclass(frozen=True)
class EnvState:
    """Full environment state at one tick; a value type, never mutated."""

    task: TaskSpec
    robot: RobotState
    path: PathState
    tick: Tick
    rng_seed: int

    @property
    def target(self) -> np.ndarray:
        return self.path.position()


def clip_action(delta, bound: float) -> np.ndarray:
    """L2-norm clip. Deterministic, state independent, and idempotent, so a
    controller can predict the applied delta of any commanded action exactly
    and re-clipping an applied action never changes it."""
    d = np.asarray(delta, dtype=np.float64)
    norm = math.sqrt(float(d @ d))
    if norm <= bound:
        return d
    out = d * (bound / norm)
    # Rescaling can land one ulp above the bound; nudge toward zero until the
    # result is inside, which makes clip(clip(x)) == clip(x) exactly.
    while math.sqrt(float(out @ out)) > bound:
        out = np.nextafter(out, 0.0)
    return out


def _sample_path(task: TaskSpec, rng: np.random.Generator) -> PathState:
    motion = task.target_motion
    kind = motion["kind"]
    if kind == "static":
        lo, hi = motion["distance"]
        ang = rng.uniform(0.0, 2.0 * np.pi)
        dist = rng.uniform(lo, hi)
        return PathState(kind="static", pos=dist * np.array([np.cos(ang), np.sin(ang)]))
    if kind == "circle":
        box = motion["center_box"]
        center = rng.uniform(-box, box, size=2)
        radius = rng.uniform(*motion["radius"])
        speed = rng.uniform(*motion["speed"])
        direction = 1.0 if rng.uniform() < 0.5 else -1.0
        phase = rng.uniform(0.0, 2.0 * np.pi)
        return PathState(
            kind="circle",
            center=center,
            radius=radius,
            omega=direction * speed / radius,
            phase=phase,
        )
    if kind == "linear":
        lo, hi = motion["start_ring"]
        ang = rng.uniform(0.0, 2.0 * np.pi)
        start = rng.uniform(lo, hi) * np.array([np.cos(ang), np.sin(ang)])
        aim = rng.uniform(-motion["aim_box"], motion["aim_box"], size=2)
        speed = rng.uniform(*motion["speed"])
        heading = aim - start
        heading = heading / np.linalg.norm(heading)
        return PathState(kind="linear", pos=start, velocity=speed * heading)
    raise TaskConfigError(f"unknown target motion kind {kind!r}")


def reset(task: TaskSpec, seed: int) -> tuple[EnvState, Observation, RobotState]:
    """Start an episode. Identical (task, seed) gives an identical EnvState."""
    rng = np.random.default_rng(seed)
    ang = rng.uniform(0.0, 2.0 * np.pi)
    r = task.start_region * np.sqrt(rng.uniform())
    robot = RobotState(r * np.array([np.cos(ang), np.sin(ang)]))
    path = _sample_path(task, rng)
    state = EnvState(task=task, robot=robot, path=path, tick=0, rng_seed=seed)
    return state, observe(state), robot


def observe(state: EnvState) -> Observation:
    """Target features only (position, plus per-tick displacement for moving
    targets). The robot pose is deliberately excluded."""
    if state.task.name == "reach":
        feats = state.path.position()
    else:
        feats = np.concatenate([state.path.position(), state.path.step_displacement()])
    return Observation(features=feats, captured_at=state.tick)


def step(state: EnvState, action: Action | np.ndarray) -> EnvState:
    """Apply one clipped delta action and advance the world one tick.

    Events scheduled at the new tick apply before any observation taken at
    that tick.
    """
    task = state.task
    if state.tick >= task.episode_len:
        raise EpisodeOverError(f"episode of length {task.episode_len} is over")
    delta = action.delta if isinstance(action, Action) else np.asarray(action, dtype=np.float64)
    robot = RobotState(state.robot.coords + clip_action(delta, task.action_bound))
    path = state.path.advance()
    tick = state.tick + 1
    for etick, updates in task.event_schedule:
        if etick == tick:
            path = _apply_event(path, updates)
    return replace(state, robot=robot, path=path, tick=tick)


def expert_action(task: TaskSpec, state: EnvState) -> Action:
    """Deterministic scripted demonstrator: proportional control toward the
    target extrapolated one tick ahead, clipped to the action bound."""
    aim = state.path.position() + state.path.step_displacement()
    raw = EXPERT_GAIN * (aim - state.robot.coords)
    return Action(clip_action(raw, task.action_bound))


def _distances(states: Sequence[EnvState]) -> np.ndarray:
    return np.array([float(np.linalg.norm(s.robot.coords - s.target)) for s in states])


def _hold_success_tick(dists: np.ndarray, radius: float, hold: int) -> int | None:
    """First index at which the robot has been within radius for ``hold``
    consecutive samples, or None."""
    inside = dists <= radius
    run = 0
    for i, ok in enumerate(inside):
        run = run + 1 if ok else 0
        if run >= hold:
            return i
    return None


def is_success(task: TaskSpec, trajectory_states: Sequence[EnvState]) -> bool:
    """Success over a full episode's state sequence (initial state included).

    reach/chase: within ``success_radius`` of the target for at least
    ``hold_ticks`` consecutive ticks. catch: within radius at the target's
    terminal tick.
    """
    return success_tick(task, trajectory_states) is not None


def success_tick(task: TaskSpec, trajectory_states: Sequence[EnvState]) -> int | None:
    """Tick at which the success condition is first met, or None."""
    dists = _distances(trajectory_states)
    return success_tick_from_distances(task, dists)


def success_tick_from_distances(task: TaskSpec, dists: np.ndarray) -> int | None:
    """Same success rule on a precomputed robot-to-target distance series."""
    if task.terminal_tick is not None:
        if task.terminal_tick < len(dists) and dists[task.terminal_tick] <= task.success_radius:
            return task.terminal_tick
        return None
    return _hold_success_tick(dists, task.success_radius, task.hold_ticks)


def _scale_range(value, factor: float):
    if isinstance(value, (list, tuple)):
        return [v * factor for v in value]
    return value * factor


def quantize_task(task: TaskSpec, q: int) -> TaskSpec:
    """Task as seen by a macro-action controller: one tick covers q original
    controller periods, so bounds and target speeds scale by q and tick
    counts divide by q. The control rate is unchanged (a macro action still
    takes one controller period to execute), which is where the execution
    speedup comes from.
    """
    if q < 1:
        raise TaskConfigError(f"quantization factor must be >= 1, got {q}")
    if q == 1:
        return task
    motion = dict(task.target_motion)
    if "speed" in motion:
        motion["speed"] = _scale_range(motion["speed"], float(q))
    events = tuple((max(1, -(-t // q)), u) for t, u in task.event_schedule)
    return replace(
        task,
        action_bound=task.action_bound * q,
        episode_len=task.episode_len // q,
        hold_ticks=max(1, -(-task.hold_ticks // q)),
        target_motion=motion,
        event_schedule=events,
        terminal_tick=None if task.terminal_tick is None else task.terminal_tick // q,
    )
