"""Network blocks: a conditioned MLP-Mixer stack and a masked pre-norm
transformer. Parameters live in flat name->Tensor dicts so the optimizer and
checkpoint code never need to know the architecture."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, concat, gelu, masked_softmax, parameter
from .masks import sinusoidal_encoding


def trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) resampled until within 2 std; matches the usual
    truncated init without scipy's ppf machinery."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def dense_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return trunc_normal(rng, (fan_in, fan_out), std=1.0 / np.sqrt(fan_in))


def linear(x, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = as_tensor(x) @ w
    if b is not None:
        out = out + b
    return out


def layer_norm(x, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    x = as_tensor(x)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc * ((var + eps) ** -0.5) * gamma + beta


# -- MLP-Mixer ------------------------------------------------------------------


def init_mixer(
    rng: np.random.Generator,
    *,
    in_dim: int,
    out_dim: int,
    tokens: int,
    width: int,
    depth: int = 4,
    token_hidden: int = 32,
    channel_hidden: int = 128,
    dtype=np.float64,
) -> dict[str, Tensor]:
    """Mixer over a fixed-length token sequence with an additive conditioning
    vector. Hidden layers are truncated-normal; the output head is
    zero-initialized so an untrained network is the zero velocity field."""
    p: dict[str, np.ndarray] = {}
    p["in_proj.w"] = dense_init(rng, in_dim, width)
    p["in_proj.b"] = np.zeros(width)
    for i in range(depth):
        p[f"blk{i}.tok.ln.g"] = np.ones(width)
        p[f"blk{i}.tok.ln.b"] = np.zeros(width)
        p[f"blk{i}.tok.w1"] = dense_init(rng, tokens, token_hidden)
        p[f"blk{i}.tok.b1"] = np.zeros(token_hidden)
        p[f"blk{i}.tok.w2"] = dense_init(rng, token_hidden, tokens)
        p[f"blk{i}.tok.b2"] = np.zeros(tokens)
        p[f"blk{i}.ch.ln.g"] = np.ones(width)
        p[f"blk{i}.ch.ln.b"] = np.zeros(width)
        p[f"blk{i}.ch.w1"] = dense_init(rng, width, channel_hidden)
        p[f"blk{i}.ch.b1"] = np.zeros(channel_hidden)
        p[f"blk{i}.ch.w2"] = dense_init(rng, channel_hidden, width)
        p[f"blk{i}.ch.b2"] = np.zeros(width)
    p["out.ln.g"] = np.ones(width)
    p["out.ln.b"] = np.zeros(width)
    p["head.w"] = np.zeros((width, out_dim))
    p["head.b"] = np.zeros(out_dim)
    return {k: parameter(v.astype(dtype)) for k, v in p.items()}


def mixer_forward(params: dict[str, Tensor], token_seq, cond) -> Tensor:
    """Run the mixer stack.

    ``token_seq`` is (B, T, in_dim) (or (T, in_dim) for a single example) and
    ``cond`` a (B, width) conditioning vector added to every token after the
    input projection. Returns per-token outputs (B, T, out_dim).
    """
    x = as_tensor(token_seq)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    cond = as_tensor(cond)
    if cond.ndim == 1:
        cond = cond.reshape((1,) + cond.shape)
    depth = sum(1 for k in params if k.endswith(".tok.w1"))
    h = linear(x, params["in_proj.w"], params["in_proj.b"])
    h = h + cond.reshape((cond.shape[0], 1, cond.shape[1]))
    for i in range(depth):
        t = layer_norm(h, params[f"blk{i}.tok.ln.g"], params[f"blk{i}.tok.ln.b"])
        t = t.swapaxes(-1, -2)
        t = gelu(linear(t, params[f"blk{i}.tok.w1"], params[f"blk{i}.tok.b1"]))
        t = linear(t, params[f"blk{i}.tok.w2"], params[f"blk{i}.tok.b2"])
        h = h + t.swapaxes(-1, -2)
        c = layer_norm(h, params[f"blk{i}.ch.ln.g"], params[f"blk{i}.ch.ln.b"])
        c = gelu(linear(c, params[f"blk{i}.ch.w1"], params[f"blk{i}.ch.b1"]))
        h = h + linear(c, params[f"blk{i}.ch.w2"], params[f"blk{i}.ch.b2"])
    h = layer_norm(h, params["out.ln.g"], params["out.ln.b"])
    out = linear(h, params["head.w"], params["head.b"])
    if squeeze:
        out = out.reshape(out.shape[1:])
    return out


# -- masked transformer -----------------------------------------------------------


def init_transformer(
    rng: np.random.Generator,
    *,
    width: int,
    depth: int = 4,
    heads: int = 2,
    mlp_hidden: int = 128,
    dtype=np.float64,
) -> dict[str, Tensor]:
    if width % heads != 0:
        raise ValueError(f"width {width} not divisible by heads {heads}")
    p: dict[str, np.ndarray] = {}
    for i in range(depth):
        p[f"blk{i}.attn.ln.g"] = np.ones(width)
        p[f"blk{i}.attn.ln.b"] = np.zeros(width)
        for proj in ("q", "k", "v", "o"):
            p[f"blk{i}.attn.w{proj}"] = dense_init(rng, width, width)
            p[f"blk{i}.attn.b{proj}"] = np.zeros(width)
        p[f"blk{i}.mlp.ln.g"] = np.ones(width)
        p[f"blk{i}.mlp.ln.b"] = np.zeros(width)
        p[f"blk{i}.mlp.w1"] = dense_init(rng, width, mlp_hidden)
        p[f"blk{i}.mlp.b1"] = np.zeros(mlp_hidden)
        p[f"blk{i}.mlp.w2"] = dense_init(rng, mlp_hidden, width)
        p[f"blk{i}.mlp.b2"] = np.zeros(width)
    p["out.ln.g"] = np.ones(width)
    p["out.ln.b"] = np.zeros(width)
    return {k: parameter(v.astype(dtype)) for k, v in p.items()}


def _attention(params: dict[str, Tensor], prefix: str, x: Tensor, mask: np.ndarray, heads: int) -> Tensor:
    B, L, C = x.shape
    dh = C // heads
    h = layer_norm(x, params[f"{prefix}.ln.g"], params[f"{prefix}.ln.b"])
    q = linear(h, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = linear(h, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v = linear(h, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
    q = q.reshape((B, L, heads, dh)).swapaxes(1, 2)
    k = k.reshape((B, L, heads, dh)).swapaxes(1, 2)
    v = v.reshape((B, L, heads, dh)).swapaxes(1, 2)
    logits = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    attn = masked_softmax(logits, mask)
    out = (attn @ v).swapaxes(1, 2).reshape((B, L, C))
    return linear(out, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def transformer_forward(
    params: dict[str, Tensor],
    tokens,
    mask: np.ndarray,
    position_ids: np.ndarray,
    heads: int = 2,
) -> Tensor:
    """Pre-norm attention + MLP stack over already-embedded tokens.

    ``mask`` is a boolean (L, L) allow-matrix; disallowed attention logits are
    forced to -inf. ``position_ids`` select fixed sinusoidal encodings, so two
    branches holding the same ids are positionally indistinguishable. Returns
    per-token features (B, L, width).
    """
    x = as_tensor(tokens)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    B, L, C = x.shape
    if mask.shape != (L, L):
        raise ValueError(f"mask shape {mask.shape} does not match {L} tokens")
    if len(position_ids) != L:
        raise ValueError(f"{len(position_ids)} position ids for {L} tokens")
    pe = sinusoidal_encoding(position_ids, C).astype(x.dtype)
    x = x + Tensor(pe)
    depth = sum(1 for k in params if k.endswith(".attn.wq"))
    for i in range(depth):
        x = x + _attention(params, f"blk{i}.attn", x, mask, heads)
        h = layer_norm(x, params[f"blk{i}.mlp.ln.g"], params[f"blk{i}.mlp.ln.b"])
        h = gelu(linear(h, params[f"blk{i}.mlp.w1"], params[f"blk{i}.mlp.b1"]))
        x = x + linear(h, params[f"blk{i}.mlp.w2"], params[f"blk{i}.mlp.b2"])
    x = layer_norm(x, params["out.ln.g"], params["out.ln.b"])
    if squeeze:
        x = x.reshape(x.shape[1:])
    return x
