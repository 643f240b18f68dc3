"""Action quantization: trading control granularity for execution speed.

Folding q consecutive delta actions into one macro action preserves the path
endpoints (the sums telescope) while the robot covers the same ground in a
fraction of the control steps. A policy trained on quantized demonstrations
then drives the same task in roughly 1/q the steps.
"""

import numpy as np

from chunklab import policy
from chunklab.bench import episode_seeds
from chunklab.data import generate_dataset, quantize_dataset, quantize_trajectory
from chunklab.envs import make_task
from chunklab.nn import Schedule
from chunklab.runtime import run_episodes, run_with_quantization

task = make_task("reach")
ds = generate_dataset(task, episodes=240, seed=0)
traj = ds.trajectories[0]

print("== macro-action construction (q=3) ==")
qt = quantize_trajectory(traj, 3)
a = traj.actions
print(f"micro actions a0..a2: {np.round(a[0], 4)} {np.round(a[1], 4)} {np.round(a[2], 4)}")
print(f"macro action  a^0   : {np.round(qt.actions[0], 4)}  (= a0 + a1 + a2)")
print(f"lengths: {len(traj)} micro steps -> {len(qt)} macro steps")

print("\n== train matched policies at q=1 and q=2 ==")


def train(dataset, steps):
    cfg = policy.PolicyConfig(
        backbone="mixer", width=48, token_hidden=24, mlp_hidden=96, delta_max=4
    )
    sched = Schedule(lr_peak=3e-3, lr_min=1.5e-4, warmup_steps=100, decay_steps=steps)
    return policy.train(dataset, cfg, "offset", steps=steps, batch_size=80, seed=0,
                        schedule=sched)


print("training q=1 policy...")
p1 = train(ds, 1200)
print("training q=2 policy (on quantized demonstrations)...")
p2 = train(quantize_dataset(ds, 2), 1600)

seeds = episode_seeds(123, 64)
r1 = run_episodes(task, p1, "vlash", 1, 4, seeds)
r2 = run_with_quantization(task, p2, "vlash", 2, 1, 4, seeds)
for q, res in ((1, r1), (2, r2)):
    sr = np.mean([r.success for r in res])
    steps = np.mean([r.steps for r in res])
    ms = np.mean([r.wall_model_ms for r in res])
    print(f"q={q}: success {sr:.3f}, {steps:5.1f} steps to completion, {ms:7.1f} ms modelled")
ratio = np.mean([r.steps for r in r2]) / np.mean([r.steps for r in r1])
print(f"\nmacro-step ratio q2/q1: {ratio:.2f} (speedup ~{1 / ratio:.2f}x at equal control rate)")
