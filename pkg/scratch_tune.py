"""Scratch: scan training configs for the chase separation study."""
import sys
import time

import numpy as np

from chunklab import bench, data, envs, policy, runtime
from chunklab.nn import Schedule


def evaluate(task, pol, strategy, delta, k, n=64, seed=123):
    seeds = bench.episode_seeds(seed, n)
    res = runtime.run_episodes(task, pol, strategy, delta, k, seeds)
    sr = float(np.mean([r.success for r in res]))
    disc = float(np.mean([r.switch_discontinuity or 0.0 for r in res]))
    return sr, disc


def main():
    width = int(sys.argv[1]) if len(sys.argv) > 1 else 48
    steps = int(sys.argv[2]) if len(sys.argv) > 2 else 1200
    dtype = sys.argv[3] if len(sys.argv) > 3 else "float64"
    demos = int(sys.argv[4]) if len(sys.argv) > 4 else 160
    lr = float(sys.argv[5]) if len(sys.argv) > 5 else 2e-3

    task = envs.make_task("chase")
    t0 = time.time()
    ds = data.generate_dataset(task, demos, 0)
    print(f"demos: {time.time()-t0:.1f}s")

    cfg = policy.PolicyConfig(
        backbone="mixer",
        width=width,
        token_hidden=width // 2,
        mlp_hidden=2 * width,
        delta_max=4,
        dtype=dtype,
    )
    sched = Schedule(lr_peak=lr, lr_min=lr * 0.05, warmup_steps=100, decay_steps=steps)

    t0 = time.time()
    pol = policy.train(ds, cfg, "offset", steps=steps, batch_size=80, seed=0, schedule=sched)
    ttrain = time.time() - t0
    print(f"train offset: {ttrain:.1f}s ({ttrain/steps*1000:.0f} ms/step) "
          f"loss {np.mean(pol.history[:25]):.3f} -> {np.mean(pol.history[-25:]):.3f}")

    t0 = time.time()
    rows = []
    rows.append(("sync d0 K4", *evaluate(task, pol, "sync", 0, 4)))
    rows.append(("vlash d4 K4", *evaluate(task, pol, "vlash", 4, 4)))
    rows.append(("naive d4 K4", *evaluate(task, pol, "naive", 4, 4)))
    rows.append(("rtc   d4 K4", *evaluate(task, pol, "rtc", 4, 4)))
    rows.append(("vlash d2 K4", *evaluate(task, pol, "vlash", 2, 4)))
    rows.append(("naive d2 K4", *evaluate(task, pol, "naive", 2, 4)))
    print(f"eval: {time.time()-t0:.1f}s")
    for name, sr, disc in rows:
        print(f"  {name}: SR={sr:.3f} disc={disc:.4f}")


if __name__ == "__main__":
    main()
