"""AdamW with decoupled weight decay and a warmup + cosine-decay schedule.

Defaults follow the fine-tuning recipe used throughout the experiments:
peak learning rate 5e-5, betas (0.9, 0.95), weight decay 1e-10, 1000 warmup
steps, cosine decay to 2.5e-6 at 30000 steps. Toy-scale training passes its
own schedule; the defaults are the reference values.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, parameter


@dataclass(frozen=True)
class Schedule:
    lr_peak: float = 5e-5
    lr_min: float = 2.5e-6
    warmup_steps: int = 1000
    decay_steps: int = 30000

    def __post_init__(self):
        if self.warmup_steps < 0 or self.decay_steps < self.warmup_steps:
            raise ValueError("need 0 <= warmup_steps <= decay_steps")


def lr_at(step: int, schedule: Schedule) -> float:
    """Linear warmup to lr_peak, cosine decay to lr_min, constant after."""
    if step < 0:
        raise ValueError("step must be >= 0")
    s = schedule
    if s.warmup_steps > 0 and step < s.warmup_steps:
        return s.lr_peak * step / s.warmup_steps
    if step >= s.decay_steps:
        return s.lr_min
    span = max(s.decay_steps - s.warmup_steps, 1)
    progress = (step - s.warmup_steps) / span
    return s.lr_min + (s.lr_peak - s.lr_min) * 0.5 * (1.0 + np.cos(np.pi * progress))


@dataclass
class OptimState:
    """First/second moment accumulators shaped like the parameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    schedule: Schedule
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 1e-10
    eps: float = 1e-8


def init_optim(
    params: dict[str, Tensor],
    schedule: Schedule | None = None,
    betas: tuple[float, float] = (0.9, 0.95),
    weight_decay: float = 1e-10,
) -> OptimState:
    return OptimState(
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
        step=0,
        schedule=schedule or Schedule(),
        betas=betas,
        weight_decay=weight_decay,
    )


def adamw_step(
    opt: OptimState, params: dict[str, Tensor], grads: dict[str, np.ndarray]
) -> tuple[dict[str, Tensor], OptimState]:
    """One decoupled-weight-decay update; returns fresh params and state."""
    b1, b2 = opt.betas
    t = opt.step + 1
    lr = lr_at(t, opt.schedule)
    new_params: dict[str, Tensor] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * opt.m[k] + (1.0 - b1) * g
        v = b2 * opt.v[k] + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        update = mhat / (np.sqrt(vhat) + opt.eps) + opt.weight_decay * p.data
        new_params[k] = parameter(p.data - lr * update)
        new_m[k] = m
        new_v[k] = v
    return new_params, replace(opt, m=new_m, v=new_v, step=t)
