"""Demonstration recording, temporal-offset sampling, action quantization,
and JSONL persistence.

A trajectory stores per-tick (observation, state, action) triples with exact
delta consistency: ``s[t+1] == s[t] + a[t]``. The temporal-offset sampler
pairs the observation at ``t`` with the state and action chunk at ``t +
delta``, which is the training-side mirror of executing a chunk ``delta``
ticks after its inputs were captured. Quantization folds ``q`` consecutive
delta actions into one macro action by summation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .core import Action, Observation, RobotState
from .envs import TaskSpec, expert_action, is_success, observe, reset, step


class DemoRejectedError(RuntimeError):
    """The scripted expert failed this (task, seed); caller should resample."""


class DatasetParseError(ValueError):
    """Malformed dataset file; carries the offending 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyDatasetError(ValueError):
    """Raised when sampling from a dataset with no trajectories."""


@dataclass(frozen=True)
class QuantSpec:
    """Action quantization factor; q consecutive micro actions become one macro action."""

    q: int

    def __post_init__(self):
        if self.q < 1:
            raise ValueError(f"quantization factor must be >= 1, got {self.q}")


@dataclass
class Trajectory:
    """One recorded episode. Arrays are row-per-tick; ``states[t]`` is the
    robot pose the action ``actions[t]`` was applied from."""

    task: str
    seed: int
    obs: np.ndarray  # (T, obs_dim)
    obs_ticks: np.ndarray  # (T,)
    states: np.ndarray  # (T, state_dim)
    actions: np.ndarray  # (T, action_dim)

    def __len__(self) -> int:
        return self.states.shape[0]

    def state_at(self, t: int) -> np.ndarray:
        """State at tick t for 0 <= t <= len; index len is the final pose."""
        if t < len(self):
            return self.states[t]
        if t == len(self):
            return self.states[-1] + self.actions[-1]
        raise IndexError(f"tick {t} beyond trajectory of length {len(self)}")

    def steps(self) -> Iterator[tuple[Observation, RobotState, Action]]:
        for t in range(len(self)):
            yield (
                Observation(self.obs[t], int(self.obs_ticks[t])),
                RobotState(self.states[t]),
                Action(self.actions[t]),
            )

    def validate(self) -> None:
        T = len(self)
        shapes_ok = (
            self.obs.shape[0] == T
            and self.obs_ticks.shape == (T,)
            and self.actions.shape == self.states.shape
        )
        if not shapes_ok:
            raise ValueError("trajectory arrays have inconsistent lengths")
        for arr in (self.obs, self.states, self.actions):
            if not np.all(np.isfinite(arr)):
                raise ValueError("trajectory contains non-finite values")
        # Delta consistency must hold exactly, not approximately.
        if T > 1 and not np.array_equal(self.states[1:], self.states[:-1] + self.actions[:-1]):
            raise ValueError("delta consistency violated: s[t+1] != s[t] + a[t]")


class Dataset:
    """Immutable-after-construction collection of trajectories with a flat
    (trajectory, tick) index for uniform sampling."""

    def __init__(self, trajectories: Sequence[Trajectory]):
        self.trajectories = list(trajectories)
        pairs = [(i, t) for i, traj in enumerate(self.trajectories) for t in range(len(traj))]
        self._pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def num_steps(self) -> int:
        return self._pairs.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.trajectories[0].obs.shape[1]

    @property
    def state_dim(self) -> int:
        return self.trajectories[0].states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.trajectories[0].actions.shape[1]


def record_trajectory(task: TaskSpec, seed: int) -> Trajectory:
    """Roll out the scripted expert for one episode.

    Raises DemoRejectedError if the expert does not succeed, so datasets only
    ever contain successful demonstrations.
    """
    state, _, _ = reset(task, seed)
    obs_rows, tick_rows, state_rows, action_rows = [], [], [], []
    states_seq = [state]
    for _ in range(task.episode_len):
        ob = observe(state)
        act = expert_action(task, state)
        obs_rows.append(ob.features)
        tick_rows.append(ob.captured_at)
        state_rows.append(state.robot.coords)
        action_rows.append(act.delta)
        state = step(state, act)
        states_seq.append(state)
    if not is_success(task, states_seq):
        raise DemoRejectedError(f"expert failed on task={task.name!r} seed={seed}")
    traj = Trajectory(
        task=task.name,
        seed=seed,
        obs=np.array(obs_rows),
        obs_ticks=np.array(tick_rows, dtype=np.int64),
        states=np.array(state_rows),
        actions=np.array(action_rows),
    )
    traj.validate()
    return traj


def generate_dataset(task: TaskSpec, episodes: int, seed: int) -> Dataset:
    """Record ``episodes`` successful demonstrations, resampling seeds on
    expert failure. Deterministic given (task, episodes, seed)."""
    trajectories = []
    attempt = seed
    limit = seed + max(50 * episodes, 1000)
    while len(trajectories) < episodes:
        if attempt >= limit:
            raise RuntimeError(
                f"expert failed too often on {task.name!r}; got "
                f"{len(trajectories)}/{episodes} demos"
            )
        try:
            trajectories.append(record_trajectory(task, attempt))
        except DemoRejectedError:
            pass
        attempt += 1
    return Dataset(trajectories)


@dataclass(frozen=True)
class OffsetSample:
    """Training record pairing a (possibly stale) observation with state and
    action targets ``delta`` ticks later on the same trajectory."""

    obs: Observation
    state: RobotState
    target_chunk: np.ndarray  # (horizon, action_dim)
    delta: int


def make_offset_sample(traj: Trajectory, t: int, delta: int, horizon: int) -> OffsetSample:
    """Build (o_t, s_{t+delta}, a_{t+delta ... t+delta+H-1}).

    Targets past the end of the trajectory are padded with zero actions (the
    robot holds position), which keeps delta consistency and success
    semantics intact.
    """
    if delta < 0:
        raise ValueError(f"offset must be >= 0, got {delta}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    T = len(traj)
    if not 0 <= t < T:
        raise IndexError(f"tick {t} outside trajectory of length {T}")
    j = min(t + delta, T)
    chunk = np.zeros((horizon, traj.actions.shape[1]))
    avail = traj.actions[t + delta : t + delta + horizon]
    chunk[: avail.shape[0]] = avail
    return OffsetSample(
        obs=Observation(traj.obs[t], int(traj.obs_ticks[t])),
        state=RobotState(traj.state_at(j)),
        target_chunk=chunk,
        delta=delta,
    )


def sample_batch(
    dataset: Dataset,
    batch_size: int,
    delta_max: int,
    horizon: int,
    rng: np.random.Generator,
    delta_weights: Sequence[float] | None = None,
) -> list[OffsetSample]:
    """Draw offset samples with (trajectory, tick) uniform over all recorded
    steps and delta uniform over {0..delta_max} (or ``delta_weights`` when a
    non-uniform offset emphasis is wanted)."""
    if len(dataset) == 0 or dataset.num_steps == 0:
        raise EmptyDatasetError("cannot sample from an empty dataset")
    if delta_max < 0:
        raise ValueError("delta_max must be >= 0")
    pair_idx = rng.integers(0, dataset.num_steps, size=batch_size)
    if delta_weights is None:
        deltas = rng.integers(0, delta_max + 1, size=batch_size)
    else:
        w = np.asarray(delta_weights, dtype=np.float64)
        if w.shape != (delta_max + 1,) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("delta_weights must be delta_max+1 non-negative weights")
        deltas = rng.choice(delta_max + 1, size=batch_size, p=w / w.sum())
    out = []
    for k, d in zip(pair_idx, deltas):
        i, t = dataset._pairs[k]
        out.append(make_offset_sample(dataset.trajectories[i], int(t), int(d), horizon))
    return out


def quantize_trajectory(traj: Trajectory, q: int) -> Trajectory:
    """Fold q consecutive delta actions into one macro action per block.

    Macro action i is the sum of micro actions [i*q, (i+1)*q); observations
    are subsampled at block starts; a trailing partial block is dropped.
    q=1 is the identity.

    States are re-accumulated from the block sums (s'[i+1] = s'[i] + macro[i])
    rather than copied from the block-start states: the two agree in exact
    arithmetic, but only re-accumulation keeps the delta-consistency invariant
    bitwise under floating-point reassociation.
    """
    QuantSpec(q)
    if q == 1:
        return traj
    n = len(traj) // q
    dim = traj.actions.shape[1]
    macro = traj.actions[: n * q].reshape(n, q, dim).sum(axis=1)
    states = np.empty((n, traj.states.shape[1]))
    if n > 0:
        states[0] = traj.states[0]
        for i in range(1, n):
            states[i] = states[i - 1] + macro[i - 1]
    return Trajectory(
        task=traj.task,
        seed=traj.seed,
        obs=traj.obs[::q][:n].copy(),
        obs_ticks=np.arange(n, dtype=np.int64),
        states=states,
        actions=macro,
    )


def quantize_dataset(dataset: Dataset, q: int) -> Dataset:
    return Dataset([quantize_trajectory(t, q) for t in dataset.trajectories])


def save_dataset(dataset: Dataset, path) -> None:
    """One trajectory per JSON line; numeric fidelity survives a round trip."""
    with open(path, "w", encoding="utf-8") as fh:
        for traj in dataset.trajectories:
            rec = {
                "task": traj.task,
                "seed": traj.seed,
                "steps": [
                    {
                        "o": traj.obs[t].tolist(),
                        "o_tick": int(traj.obs_ticks[t]),
                        "s": traj.states[t].tolist(),
                        "a": traj.actions[t].tolist(),
                    }
                    for t in range(len(traj))
                ],
            }
            fh.write(json.dumps(rec))
            fh.write("\n")


def load_dataset(path) -> Dataset:
    """Parse a JSONL dataset, failing with the line number on any malformed
    or delta-inconsistent record. An empty file is an empty dataset."""
    trajectories = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(line_no, f"invalid JSON ({exc.msg})") from exc
            try:
                steps = rec["steps"]
                traj = Trajectory(
                    task=rec["task"],
                    seed=int(rec["seed"]),
                    obs=np.array([s["o"] for s in steps], dtype=np.float64).reshape(
                        len(steps), -1
                    ),
                    obs_ticks=np.array([s["o_tick"] for s in steps], dtype=np.int64),
                    states=np.array([s["s"] for s in steps], dtype=np.float64).reshape(
                        len(steps), -1
                    ),
                    actions=np.array([s["a"] for s in steps], dtype=np.float64).reshape(
                        len(steps), -1
                    ),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetParseError(line_no, f"malformed trajectory record: {exc}") from exc
            try:
                traj.validate()
            except ValueError as exc:
                raise DatasetParseError(line_no, str(exc)) from exc
            trajectories.append(traj)
    return Dataset(trajectories)
