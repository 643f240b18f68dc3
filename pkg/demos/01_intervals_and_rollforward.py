"""Why asynchronous chunked control needs future-state awareness.

A chunk planned at tick t covers the prediction interval [t, t+K), but with
an inference delay of D ticks it executes over [t+D, t+D+K). During those D
ticks the robot keeps moving, so the state the chunk was computed for is
stale. Under delta-action kinematics, though, the controller already knows
the pending actions, and summing them onto the launch state reproduces the
handoff state exactly. This script shows both halves.
"""

import numpy as np

from chunklab.core import Action, RobotState, execution_interval, prediction_interval
from chunklab.envs import make_task, reset, step
from chunklab.runtime import rollforward

print("== interval arithmetic ==")
for t, k, d in [(0, 5, 2), (12, 4, 0), (30, 8, 4)]:
    pred = prediction_interval(t, k)
    ex = execution_interval(t, k, d)
    print(f"launch t={t:>2} K={k} delay={d}: planned {pred}  executed {ex}")

print("\n== exact rollforward ==")
task = make_task("chase")
state, _, _ = reset(task, seed=3)
rng = np.random.default_rng(0)

# pretend these are the remaining actions of the chunk currently executing
pending = []
for _ in range(4):
    d = rng.uniform(-1, 1, size=2)
    d = d / np.linalg.norm(d) * task.action_bound * 0.8
    pending.append(Action(d))

predicted = rollforward(state.robot, pending)

actual = state
for a in pending:
    actual = step(actual, a)

print(f"launch-time robot : {state.robot.coords}")
print(f"rollforward state : {predicted.coords}")
print(f"simulated robot   : {actual.robot.coords}")
print(f"bitwise equal     : {np.array_equal(predicted.coords, actual.robot.coords)}")
print("\nThe rolled-forward state is what the future-state-aware scheduler")
print("conditions inference on, so new chunks line up with where the robot")
print("actually is when they take over.")
