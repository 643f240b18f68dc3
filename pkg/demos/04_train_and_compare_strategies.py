"""End-to-end study: train an offset-augmented policy on the chase task and
compare the four scheduling strategies under growing inference delay.

Takes a few minutes on a laptop CPU. Expect the naive async success rate to
collapse as the delay grows while the rollforward strategy stays near the
synchronous ceiling, and its chunk switches to stay markedly smoother.
"""

import numpy as np

from chunklab import policy
from chunklab.bench import episode_seeds
from chunklab.data import generate_dataset
from chunklab.envs import make_task
from chunklab.nn import Schedule
from chunklab.runtime import run_episodes

STEPS, EPISODES = 1800, 64

task = make_task("chase")
print("recording demonstrations...")
ds = generate_dataset(task, episodes=200, seed=0)

cfg = policy.PolicyConfig(
    backbone="mixer", width=48, token_hidden=24, mlp_hidden=96, delta_max=4
)
print(f"training offset-augmented policy ({STEPS} steps)...")
pol = policy.train(
    ds, cfg, "offset", steps=STEPS, batch_size=80, seed=0,
    schedule=Schedule(lr_peak=3e-3, lr_min=1.5e-4, warmup_steps=100, decay_steps=STEPS),
)
print(f"final training loss ~{np.mean(pol.history[-50:]):.3f}\n")

seeds = episode_seeds(123, EPISODES)
print(f"{'delta':>5} {'K':>2} | {'sync':>6} {'naive':>6} {'rtc':>6} {'vlash':>6}   (success rate)")
for delta in range(5):
    k = max(delta, 1)
    row = []
    for strat in ("sync", "naive", "rtc", "vlash"):
        d_eval = 0 if strat == "sync" else delta
        res = run_episodes(task, pol, strat, d_eval, k, seeds)
        row.append(float(np.mean([r.success for r in res])))
    print(f"{delta:>5} {k:>2} | " + " ".join(f"{v:6.3f}" for v in row))

print("\nswitch discontinuity at delta=4, K=4 (mean action jump per handoff):")
for strat in ("naive", "rtc", "vlash"):
    res = run_episodes(task, pol, strat, 4, 4, seeds)
    disc = float(np.mean([r.switch_discontinuity for r in res]))
    print(f"  {strat:>6}: {disc:.4f}")
