"""Neural substrate: numpy reverse-mode autodiff, mixer and masked
transformer blocks, block-sparse packing masks, and the AdamW optimizer."""

from .autodiff import (
    NonFiniteLossError,
    Tensor,
    as_tensor,
    concat,
    gelu,
    grad,
    masked_softmax,
    no_grad,
    parameter,
    tanh,
    value_and_grad,
)
from .checkpoint import config_hash, load_checkpoint, save_checkpoint
from .masks import (
    assign_positions,
    build_block_sparse_mask,
    packed_sequence_length,
    separate_sequence_tokens,
    sinusoidal_encoding,
)
from .models import (
    dense_init,
    init_mixer,
    init_transformer,
    layer_norm,
    linear,
    mixer_forward,
    transformer_forward,
    trunc_normal,
)
from .optim import OptimState, Schedule, adamw_step, init_optim, lr_at

__all__ = [
    "NonFiniteLossError",
    "OptimState",
    "Schedule",
    "Tensor",
    "adamw_step",
    "as_tensor",
    "assign_positions",
    "build_block_sparse_mask",
    "concat",
    "config_hash",
    "dense_init",
    "gelu",
    "grad",
    "init_mixer",
    "init_optim",
    "init_transformer",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "lr_at",
    "masked_softmax",
    "mixer_forward",
    "no_grad",
    "packed_sequence_length",
    "parameter",
    "save_checkpoint",
    "separate_sequence_tokens",
    "sinusoidal_encoding",
    "tanh",
    "transformer_forward",
    "trunc_normal",
    "value_and_grad",
]
