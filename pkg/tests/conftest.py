"""Shared fixtures. Trained policies are expensive, so they are built once
per session and cached; the acceptance recipes live in one place so every
criterion measures the same artifacts."""

import numpy as np
import pytest

from chunklab import data, policy
from chunklab.envs import make_task
from chunklab.nn import Schedule

# Fixed toy-scale recipe used by the trend/acceptance criteria.
NET = dict(width=48, token_hidden=24, mlp_hidden=96)
DELTA_MAX = 4
BATCH = 80
LR = 3e-3
DEMOS = {"reach": 240, "chase": 200}
STEPS = {"reach": 1200, "chase": 1800, "reach_q2": 1600}
TRAIN_SEEDS = (0, 1, 2, 3, 4)
EVAL_EPISODES = 64


def toy_schedule(steps: int) -> Schedule:
    return Schedule(lr_peak=LR, lr_min=LR * 0.05, warmup_steps=100, decay_steps=steps)


def toy_config(delta_max: int = DELTA_MAX) -> policy.PolicyConfig:
    return policy.PolicyConfig(backbone="mixer", delta_max=delta_max, **NET)


class PolicyStore:
    """Lazily trains and caches (task, mode, seed, q) policies plus the
    datasets behind them."""

    def __init__(self):
        self._datasets = {}
        self._policies = {}

    def dataset(self, task_name: str, q: int = 1) -> data.Dataset:
        key = (task_name, q)
        if key not in self._datasets:
            base = self.dataset(task_name) if q > 1 else None
            if q == 1:
                self._datasets[key] = data.generate_dataset(
                    make_task(task_name), DEMOS[task_name], 0
                )
            else:
                self._datasets[key] = data.quantize_dataset(base, q)
        return self._datasets[key]

    def get(self, task_name: str, mode: str, seed: int, q: int = 1) -> policy.Policy:
        key = (task_name, mode, seed, q)
        if key not in self._policies:
            ds = self.dataset(task_name, q)
            steps = STEPS["reach_q2"] if (task_name, q) == ("reach", 2) else STEPS[task_name]
            self._policies[key] = policy.train(
                ds,
                toy_config(),
                mode,
                steps=steps,
                batch_size=BATCH,
                seed=seed,
                schedule=toy_schedule(steps),
            )
        return self._policies[key]


@pytest.fixture(scope="session")
def policy_store():
    return PolicyStore()


@pytest.fixture(scope="session")
def tiny_reach_policy():
    """Small, quickly trained reach policy for behavioral smoke tests."""
    ds = data.generate_dataset(make_task("reach"), 60, 0)
    cfg = policy.PolicyConfig(
        backbone="mixer", width=32, depth=3, token_hidden=16, mlp_hidden=48, delta_max=0
    )
    return policy.train(
        ds,
        cfg,
        "standard",
        steps=700,
        batch_size=48,
        seed=0,
        schedule=Schedule(lr_peak=3e-3, lr_min=2e-4, warmup_steps=60, decay_steps=700),
    )


@pytest.fixture(scope="session")
def random_chase_policy():
    """Untrained mixer policy on chase dims; scheduling semantics do not
    depend on policy quality."""
    cfg = policy.PolicyConfig(
        backbone="mixer", width=32, depth=2, token_hidden=16, mlp_hidden=48
    )
    rng = np.random.default_rng(0)
    pol = policy.init_policy(cfg, 4, 2, 2, rng)
    pol.params["head.w"].data = rng.standard_normal(pol.params["head.w"].data.shape) * 0.2
    return pol
