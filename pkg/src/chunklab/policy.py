"""Flow-matching action-chunk policy.

The policy learns a velocity field v(x, tau | obs, state) whose Euler
integration from Gaussian noise produces a chunk of H actions. Training uses
the linear interpolation path x_tau = tau * A + (1 - tau) * x0 with velocity
target (A - x0) and mean-squared error.

Three training modes share one loss:

* ``standard``  - plain behavior cloning samples (offset 0).
* ``offset``    - each sample pairs an observation with state/action targets
                  a random number of ticks later; every sample is its own
                  forward pass.
* ``packed``    - transformer only: all offsets of one observation ride in a
                  single sequence behind shared observation tokens, isolated
                  by a block-sparse mask and shared branch positions. One
                  physical sequence carries delta_max + 1 effective samples.

Sampling is pure given (params, inputs, rng) and safe to run concurrently.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import Action, ActionChunk, InvalidHorizonError, Observation, RobotState
from .data import Dataset, OffsetSample, make_offset_sample, sample_batch
from .nn import (
    Schedule,
    Tensor,
    adamw_step,
    assign_positions,
    build_block_sparse_mask,
    concat,
    init_mixer,
    init_optim,
    init_transformer,
    linear,
    mixer_forward,
    no_grad,
    parameter,
    transformer_forward,
    value_and_grad,
)
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.models import dense_init

TRAIN_MODES = ("standard", "offset", "packed")
BACKBONES = ("mixer", "transformer")


class PolicyConfigError(ValueError):
    """Raised for inconsistent policy/training configuration."""


@dataclass(frozen=True)
class PolicyConfig:
    backbone: str = "mixer"
    horizon: int = 8
    flow_steps: int = 10
    width: int = 64
    depth: int = 4
    heads: int = 2
    token_hidden: int = 32
    mlp_hidden: int = 128
    obs_tokens: int = 16
    time_features: int = 16
    delta_max: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise PolicyConfigError(f"unknown backbone {self.backbone!r}")
        if self.horizon < 1:
            raise PolicyConfigError("horizon must be >= 1")
        if self.flow_steps < 1:
            raise PolicyConfigError("flow_steps must be >= 1")
        if self.delta_max < 0:
            raise PolicyConfigError("delta_max must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise PolicyConfigError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def branch_len(self) -> int:
        # one state token plus H action tokens
        return 1 + self.horizon


@dataclass
class Normalizer:
    """Feature standardization and action scaling fitted on the training set.

    The flow runs in normalized action space; raw actions cross this boundary
    on the way in (targets, frozen prefixes) and out (sampled chunks).
    """

    obs_mean: np.ndarray
    obs_std: np.ndarray
    state_mean: np.ndarray
    state_std: np.ndarray
    action_scale: np.ndarray

    @staticmethod
    def from_dataset(dataset: Dataset) -> "Normalizer":
        obs = np.concatenate([t.obs for t in dataset.trajectories])
        states = np.concatenate([t.states for t in dataset.trajectories])
        actions = np.concatenate([t.actions for t in dataset.trajectories])
        floor = 1e-6
        return Normalizer(
            obs_mean=obs.mean(axis=0),
            obs_std=np.maximum(obs.std(axis=0), floor),
            state_mean=states.mean(axis=0),
            state_std=np.maximum(states.std(axis=0), floor),
            action_scale=np.maximum(actions.std(axis=0), floor),
        )

    @staticmethod
    def identity(obs_dim: int, state_dim: int, action_dim: int) -> "Normalizer":
        return Normalizer(
            obs_mean=np.zeros(obs_dim),
            obs_std=np.ones(obs_dim),
            state_mean=np.zeros(state_dim),
            state_std=np.ones(state_dim),
            action_scale=np.ones(action_dim),
        )

    def encode_obs(self, o: np.ndarray) -> np.ndarray:
        return (o - self.obs_mean) / self.obs_std

    def encode_state(self, s: np.ndarray) -> np.ndarray:
        return (s - self.state_mean) / self.state_std

    def encode_actions(self, a: np.ndarray) -> np.ndarray:
        return a / self.action_scale

    def decode_actions(self, x: np.ndarray) -> np.ndarray:
        return x * self.action_scale

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {
            "obs_mean": self.obs_mean,
            "obs_std": self.obs_std,
            "state_mean": self.state_mean,
            "state_std": self.state_std,
            "action_scale": self.action_scale,
        }


@dataclass
class Policy:
    """Bundle of architecture config, named parameter tensors, and the data
    normalizer they were trained with."""

    config: PolicyConfig
    obs_dim: int
    state_dim: int
    action_dim: int
    params: dict[str, Tensor]
    norm: Normalizer
    history: list = field(default_factory=list, repr=False)


def init_policy(
    config: PolicyConfig,
    obs_dim: int,
    state_dim: int,
    action_dim: int,
    rng: np.random.Generator,
    norm: Normalizer | None = None,
) -> Policy:
    """Fresh parameters: truncated-normal hidden layers, zero-initialized
    output head and zero-initialized state projection."""
    dt = config.np_dtype
    if config.backbone == "mixer":
        params = init_mixer(
            rng,
            in_dim=action_dim,
            out_dim=action_dim,
            tokens=config.horizon,
            width=config.width,
            depth=config.depth,
            token_hidden=config.token_hidden,
            channel_hidden=config.mlp_hidden,
            dtype=dt,
        )
        params["cond.obs.w"] = parameter(dense_init(rng, obs_dim, config.width).astype(dt))
        params["cond.state.w"] = parameter(np.zeros((state_dim, config.width), dtype=dt))
        params["cond.b"] = parameter(np.zeros(config.width, dtype=dt))
    else:
        params = init_transformer(
            rng,
            width=config.width,
            depth=config.depth,
            heads=config.heads,
            mlp_hidden=config.mlp_hidden,
            dtype=dt,
        )
        params["obs_proj.w"] = parameter(
            dense_init(rng, obs_dim, config.obs_tokens * config.width).astype(dt)
        )
        params["obs_proj.b"] = parameter(np.zeros(config.obs_tokens * config.width, dtype=dt))
        params["state_proj.w"] = parameter(np.zeros((state_dim, config.width), dtype=dt))
        params["state_proj.b"] = parameter(np.zeros(config.width, dtype=dt))
        params["act_proj.w"] = parameter(dense_init(rng, action_dim, config.width).astype(dt))
        params["act_proj.b"] = parameter(np.zeros(config.width, dtype=dt))
        params["head.w"] = parameter(np.zeros((config.width, action_dim), dtype=dt))
        params["head.b"] = parameter(np.zeros(action_dim, dtype=dt))
    params["time.w"] = parameter(dense_init(rng, config.time_features, config.width).astype(dt))
    params["time.b"] = parameter(np.zeros(config.width, dtype=dt))
    return Policy(
        config=config,
        obs_dim=obs_dim,
        state_dim=state_dim,
        action_dim=action_dim,
        params=params,
        norm=norm or Normalizer.identity(obs_dim, state_dim, action_dim),
    )


def _time_feats(tau: np.ndarray, n_features: int, dtype) -> np.ndarray:
    tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    freqs = 2.0 ** np.arange(n_features // 2)
    ang = 2.0 * np.pi * tau[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


def _velocity_mixer(policy: Policy, params, obs_n, state_n, x, tau) -> Tensor:
    cfg = policy.config
    temb = linear(Tensor(_time_feats(tau, cfg.time_features, x.dtype)), params["time.w"], params["time.b"])
    cond = (
        linear(Tensor(obs_n), params["cond.obs.w"])
        + linear(Tensor(state_n), params["cond.state.w"])
        + temb
        + params["cond.b"]
    )
    return mixer_forward(params, Tensor(x), cond)


def _branch_tokens(policy: Policy, params, state_n, x, tau) -> Tensor:
    """Embed one offset branch: a zero-init state-projection token followed by
    the H noisy-action tokens, all carrying the flow-time embedding."""
    cfg = policy.config
    B = x.shape[0]
    temb = linear(Tensor(_time_feats(tau, cfg.time_features, x.dtype)), params["time.w"], params["time.b"])
    temb3 = temb.reshape((B, 1, cfg.width))
    s_tok = linear(Tensor(state_n), params["state_proj.w"], params["state_proj.b"])
    s_tok = s_tok.reshape((B, 1, cfg.width)) + temb3
    a_tok = linear(Tensor(x), params["act_proj.w"], params["act_proj.b"]) + temb3
    return concat([s_tok, a_tok], axis=1)


def _velocity_transformer_branches(
    policy: Policy, params, obs_n: np.ndarray, branches: list[tuple]
) -> list[Tensor]:
    """Packed forward: one observation block plus any number of isolated
    (state, noisy chunk, tau) branches. Returns per-branch velocities."""
    cfg = policy.config
    B = obs_n.shape[0]
    L_obs, C, H = cfg.obs_tokens, cfg.width, cfg.horizon
    obs_tok = linear(Tensor(obs_n), params["obs_proj.w"], params["obs_proj.b"])
    obs_tok = obs_tok.reshape((B, L_obs, C))
    toks = [obs_tok]
    for state_n, x, tau in branches:
        toks.append(_branch_tokens(policy, params, state_n, x, tau))
    tokens = concat(toks, axis=1)
    blen = cfg.branch_len
    mask = build_block_sparse_mask(L_obs, [blen] * len(branches))
    pos = assign_positions(L_obs, [blen] * len(branches))
    feats = transformer_forward(params, tokens, mask, pos, heads=cfg.heads)
    outs = []
    for i in range(len(branches)):
        start = L_obs + i * blen + 1
        outs.append(linear(feats[:, start : start + H, :], params["head.w"], params["head.b"]))
    return outs


def velocity(policy: Policy, params, obs_n, state_n, x, tau) -> Tensor:
    """Velocity field on normalized inputs; (B, H, action_dim)."""
    if policy.config.backbone == "mixer":
        return _velocity_mixer(policy, params, obs_n, state_n, x, tau)
    return _velocity_transformer_branches(policy, params, obs_n, [(state_n, x, tau)])[0]


@dataclass
class FlowBatch:
    """Model-space training batch: normalized features and targets, flow time
    tau ~ U[0,1), noise x0 ~ N(0, I)."""

    obs: np.ndarray  # (B, obs_dim), normalized
    state: np.ndarray  # (B, state_dim), normalized
    target: np.ndarray  # (B, H, action_dim), normalized
    tau: np.ndarray  # (B,)
    noise: np.ndarray  # (B, H, action_dim)


def make_flow_batch(policy: Policy, samples: Sequence[OffsetSample], rng: np.random.Generator) -> FlowBatch:
    dt = policy.config.np_dtype
    obs = np.stack([s.obs.features for s in samples]).astype(dt)
    state = np.stack([s.state.coords for s in samples]).astype(dt)
    target = np.stack([s.target_chunk for s in samples]).astype(dt)
    B, H, Da = target.shape
    return FlowBatch(
        obs=policy.norm.encode_obs(obs).astype(dt),
        state=policy.norm.encode_state(state).astype(dt),
        target=policy.norm.encode_actions(target).astype(dt),
        tau=rng.uniform(0.0, 1.0, size=B).astype(dt),
        noise=rng.standard_normal((B, H, Da)).astype(dt),
    )


def fm_loss(policy: Policy, batch: FlowBatch, params: dict[str, Tensor] | None = None) -> Tensor:
    """Mean squared error between the predicted velocity at x_tau and the
    straight-path target (A - x0)."""
    params = policy.params if params is None else params
    tau3 = batch.tau[:, None, None]
    x_tau = tau3 * batch.target + (1.0 - tau3) * batch.noise
    v = velocity(policy, params, batch.obs, batch.state, x_tau, batch.tau)
    diff = v - Tensor(batch.target - batch.noise)
    return (diff * diff).mean()


@dataclass
class PackedFlowBatch:
    """One shared observation per row plus one FlowBatch-style tuple per
    offset branch (all branches share the row's observation)."""

    obs: np.ndarray  # (B, obs_dim), normalized
    branches: list[tuple]  # (state, target, tau, noise) per offset


def sample_packed(
    dataset: Dataset,
    physical_batch: int,
    delta_max: int,
    horizon: int,
    rng: np.random.Generator,
) -> list[list[OffsetSample]]:
    """Anchor (trajectory, tick) pairs and expand every offset 0..delta_max
    for each; returns one sample list per offset, aligned by anchor."""
    if len(dataset) == 0:
        raise ValueError("cannot sample from an empty dataset")
    anchors = rng.integers(0, dataset.num_steps, size=physical_batch)
    per_delta: list[list[OffsetSample]] = []
    for d in range(delta_max + 1):
        row = []
        for k in anchors:
            i, t = dataset._pairs[k]
            row.append(make_offset_sample(dataset.trajectories[i], int(t), d, horizon))
        per_delta.append(row)
    return per_delta


def make_packed_batch(
    policy: Policy, per_delta: list[list[OffsetSample]], rng: np.random.Generator
) -> PackedFlowBatch:
    dt = policy.config.np_dtype
    first = per_delta[0]
    obs = np.stack([s.obs.features for s in first]).astype(dt)
    branches = []
    for samples in per_delta:
        state = np.stack([s.state.coords for s in samples]).astype(dt)
        target = np.stack([s.target_chunk for s in samples]).astype(dt)
        B, H, Da = target.shape
        branches.append(
            (
                policy.norm.encode_state(state).astype(dt),
                policy.norm.encode_actions(target).astype(dt),
                rng.uniform(0.0, 1.0, size=B).astype(dt),
                rng.standard_normal((B, H, Da)).astype(dt),
            )
        )
    return PackedFlowBatch(obs=policy.norm.encode_obs(obs).astype(dt), branches=branches)


def fm_loss_packed(
    policy: Policy, batch: PackedFlowBatch, params: dict[str, Tensor] | None = None
) -> Tensor:
    """Same objective as fm_loss over all branches of a packed batch; the
    observation is encoded once and shared."""
    params = policy.params if params is None else params
    inputs = []
    residuals = []
    for state, target, tau, noise in batch.branches:
        tau3 = tau[:, None, None]
        inputs.append((state, tau3 * target + (1.0 - tau3) * noise, tau))
        residuals.append(target - noise)
    vs = _velocity_transformer_branches(policy, params, batch.obs, inputs)
    total = None
    count = 0
    for v, res in zip(vs, residuals):
        diff = v - Tensor(res)
        sq = (diff * diff).sum()
        total = sq if total is None else total + sq
        count += res.size
    return total * (1.0 / count)


def effective_batch(mode: str, physical_batch: int, delta_max: int) -> int:
    """Samples per optimizer step. Packing multiplies the physical batch by
    the number of offsets carried per sequence."""
    if mode == "packed":
        return physical_batch * (delta_max + 1)
    return physical_batch


def tokens_per_effective_batch(config: PolicyConfig, mode: str, effective: int) -> int:
    """Transformer tokens processed per optimizer step at a given effective
    batch size; the packed mode re-uses each observation across offsets."""
    n = config.delta_max + 1
    if mode == "packed":
        if effective % n != 0:
            raise PolicyConfigError("effective batch must be divisible by delta_max + 1")
        return (effective // n) * (config.obs_tokens + n * config.branch_len)
    return effective * (config.obs_tokens + config.branch_len)


def train(
    dataset: Dataset,
    config: PolicyConfig,
    mode: str,
    *,
    steps: int,
    batch_size: int,
    seed: int = 0,
    schedule: Schedule | None = None,
    betas: tuple[float, float] = (0.9, 0.95),
    weight_decay: float = 1e-10,
    delta_weights: Sequence[float] | None = None,
) -> Policy:
    """Fit a policy on recorded demonstrations.

    ``batch_size`` is the physical batch: in packed mode each physical row
    carries delta_max + 1 offset branches, so the effective batch is
    ``batch_size * (delta_max + 1)``.
    """
    if mode not in TRAIN_MODES:
        raise PolicyConfigError(f"unknown training mode {mode!r}")
    if mode == "packed" and config.backbone != "transformer":
        raise PolicyConfigError("packed training requires the transformer backbone")
    ss = np.random.SeedSequence(seed)
    rng_init, rng_batch = [np.random.default_rng(s) for s in ss.spawn(2)]
    norm = Normalizer.from_dataset(dataset)
    policy = init_policy(
        config, dataset.obs_dim, dataset.state_dim, dataset.action_dim, rng_init, norm
    )
    opt = init_optim(policy.params, schedule, betas=betas, weight_decay=weight_decay)
    delta_max = 0 if mode == "standard" else config.delta_max
    H = config.horizon
    for _ in range(steps):
        if mode == "packed":
            per_delta = sample_packed(dataset, batch_size, delta_max, H, rng_batch)
            batch = make_packed_batch(policy, per_delta, rng_batch)
            loss_fn = lambda p: fm_loss_packed(policy, batch, p)  # noqa: E731
        else:
            samples = sample_batch(dataset, batch_size, delta_max, H, rng_batch, delta_weights)
            batch = make_flow_batch(policy, samples, rng_batch)
            loss_fn = lambda p: fm_loss(policy, batch, p)  # noqa: E731
        loss_value, grads = value_and_grad(loss_fn, policy.params)
        policy.params, opt = adamw_step(opt, policy.params, grads)
        policy.history.append(loss_value)
    return policy


# -- sampling ---------------------------------------------------------------------


def integrate_flow(
    policy: Policy,
    obs_feats: np.ndarray,
    states: np.ndarray,
    noise: np.ndarray,
    frozen_prefix: np.ndarray | None = None,
) -> np.ndarray:
    """Batched Euler integration of the velocity field from tau=0 to tau=1.

    ``frozen_prefix`` (B, n_frozen, action_dim), in raw action units, pins the
    first rows of the chunk to known actions: at every step those rows are
    clamped onto the straight path between their noise and the frozen values,
    and the final chunk reproduces the frozen actions exactly.

    Inputs and outputs are raw (unnormalized); returns (B, H, action_dim).
    """
    cfg = policy.config
    dt = cfg.np_dtype
    obs_n = policy.norm.encode_obs(np.asarray(obs_feats, dtype=dt))
    state_n = policy.norm.encode_state(np.asarray(states, dtype=dt))
    noise = np.asarray(noise, dtype=dt)
    x = noise.copy()
    B = x.shape[0]
    n_frozen = 0
    frozen_n = None
    if frozen_prefix is not None and frozen_prefix.shape[1] > 0:
        frozen_prefix = np.asarray(frozen_prefix, dtype=dt)
        n_frozen = frozen_prefix.shape[1]
        if n_frozen > cfg.horizon:
            raise InvalidHorizonError(
                f"frozen prefix of {n_frozen} exceeds horizon {cfg.horizon}"
            )
        frozen_n = policy.norm.encode_actions(frozen_prefix)
    dtau = 1.0 / cfg.flow_steps
    with no_grad():
        for k in range(cfg.flow_steps):
            tau = k * dtau
            if frozen_n is not None:
                x[:, :n_frozen] = tau * frozen_n + (1.0 - tau) * noise[:, :n_frozen]
            tau_vec = np.full(B, tau, dtype=dt)
            v = velocity(policy, policy.params, obs_n, state_n, x, tau_vec).data
            x = x + dtau * v
    out = policy.norm.decode_actions(x)
    if frozen_n is not None:
        # Bypass the scale round trip so the pinned rows match bit for bit.
        out[:, :n_frozen] = frozen_prefix
    return out


def sample_chunk(
    policy: Policy,
    obs: Observation,
    state: RobotState,
    rng: np.random.Generator,
    exec_horizon: int | None = None,
) -> ActionChunk:
    """Draw one action chunk; deterministic given the rng state."""
    cfg = policy.config
    noise = rng.standard_normal((1, cfg.horizon, policy.action_dim))
    actions = integrate_flow(policy, obs.features[None], state.coords[None], noise)[0]
    return ActionChunk(
        actions=actions,
        issued_at=obs.captured_at,
        horizon=cfg.horizon,
        exec_horizon=exec_horizon or cfg.horizon,
    )


def sample_chunk_inpaint(
    policy: Policy,
    obs: Observation,
    state: RobotState,
    frozen_prefix: Sequence[Action] | np.ndarray,
    rng: np.random.Generator,
    exec_horizon: int | None = None,
) -> ActionChunk:
    """Chunk whose first actions are pinned to a known prefix (the actions
    that will execute during inference); the suffix is generated consistently
    with them. An empty prefix reduces to sample_chunk."""
    cfg = policy.config
    if len(frozen_prefix) > 0 and isinstance(frozen_prefix[0], Action):
        frozen = np.stack([a.delta for a in frozen_prefix])
    else:
        frozen = np.asarray(frozen_prefix, dtype=np.float64).reshape(-1, policy.action_dim)
    if frozen.shape[0] > cfg.horizon:
        raise InvalidHorizonError(
            f"frozen prefix of {frozen.shape[0]} exceeds horizon {cfg.horizon}"
        )
    noise = rng.standard_normal((1, cfg.horizon, policy.action_dim))
    actions = integrate_flow(
        policy,
        obs.features[None],
        state.coords[None],
        noise,
        frozen_prefix=frozen[None] if frozen.shape[0] else None,
    )[0]
    return ActionChunk(
        actions=actions,
        issued_at=obs.captured_at,
        horizon=cfg.horizon,
        exec_horizon=exec_horizon or cfg.horizon,
    )


# -- persistence --------------------------------------------------------------------


def save_policy(path, policy: Policy) -> None:
    arrays = {f"param.{k}": v.data for k, v in policy.params.items()}
    for k, v in policy.norm.as_arrays().items():
        arrays[f"norm.{k}"] = v
    meta = {
        "kind": "chunklab-policy",
        "config": asdict(policy.config),
        "dims": {
            "obs": policy.obs_dim,
            "state": policy.state_dim,
            "action": policy.action_dim,
        },
    }
    save_checkpoint(path, arrays, meta)


def load_policy(path) -> Policy:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "chunklab-policy":
        raise ValueError(f"{path} is not a policy checkpoint")
    config = PolicyConfig(**meta["config"])
    dt = config.np_dtype
    params = {
        k[len("param.") :]: parameter(v.astype(dt))
        for k, v in arrays.items()
        if k.startswith("param.")
    }
    norm = Normalizer(
        obs_mean=arrays["norm.obs_mean"],
        obs_std=arrays["norm.obs_std"],
        state_mean=arrays["norm.state_mean"],
        state_std=arrays["norm.state_std"],
        action_scale=arrays["norm.action_scale"],
    )
    return Policy(
        config=config,
        obs_dim=int(meta["dims"]["obs"]),
        state_dim=int(meta["dims"]["state"]),
        action_dim=int(meta["dims"]["action"]),
        params=params,
        norm=norm,
    )
