"""chunklab: a desk-scale laboratory for asynchronous chunked robot control.

The library trains small action-chunking flow policies on deterministic toy
tasks and compares four inference-scheduling strategies (synchronous, naive
asynchronous, freeze-and-inpaint, and future-state-aware rollforward) under
configurable inference delays, together with the supporting machinery:
temporal-offset data augmentation, shared-observation packed attention, and
action quantization.
"""

__version__ = "0.1.0"

from . import bench, core, data, envs, nn, policy, runtime

__all__ = ["bench", "core", "data", "envs", "nn", "policy", "runtime", "__version__"]
