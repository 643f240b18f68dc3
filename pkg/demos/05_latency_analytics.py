"""Closed-form latency accounting, no simulation involved.

Two formulas drive deployment decisions. Time per chunk: synchronous control
pays execution plus inference every cycle, while asynchronous control hides
up to delay/K of the execution window's worth of inference. Worst-case
reaction: a synchronous robot can sit through a full chunk plus an inference
before acting on a change; an asynchronous one only waits out the inference.
"""

from chunklab.bench import analytic_tables
from chunklab.runtime import max_reaction_latency, time_per_chunk

print(analytic_tables().to_text())

print("\n== how the chunk-time formula behaves ==")
exec_ms, inf_ms, k = 166.0, 103.0, 5
for delay in range(6):
    t = time_per_chunk(exec_ms, inf_ms, k, delay, "async")
    hidden = min(inf_ms, exec_ms / k * delay)
    print(
        f"delay={delay}: {t:6.1f} ms per chunk "
        f"({hidden:5.1f} ms of inference hidden behind execution)"
    )
print(f"sync reference: {time_per_chunk(exec_ms, inf_ms, k, 0, 'sync'):.1f} ms per chunk")

print("\n== reaction-latency ratio vs inference speed ==")
for inf in (20.0, 50.0, 100.0, 250.0):
    ratio = max_reaction_latency(500.0, inf, "sync") / max_reaction_latency(500.0, inf, "async")
    print(f"inference {inf:5.1f} ms: sync reacts {ratio:4.1f}x slower than async")
