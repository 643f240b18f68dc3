"""Block-sparse attention masks and shared-position assignment for packing
several offset branches behind one observation in a single sequence."""

from __future__ import annotations

import numpy as np


def build_block_sparse_mask(l_obs: int, branch_lens: list[int]) -> np.ndarray:
    """Boolean (L, L) mask, True where attention is allowed.

    Layout: ``l_obs`` observation tokens followed by the branches in order.
    Observation tokens attend only to each other, never into any branch, so
    the observation encoding is identical no matter how many branches ride
    along. Branch tokens attend to the observation block and to their own
    branch, and are blind to every other branch.
    """
    if l_obs < 1:
        raise ValueError(f"need at least one observation token, got {l_obs}")
    if any(b < 1 for b in branch_lens):
        raise ValueError(f"branch lengths must be >= 1, got {branch_lens}")
    L = l_obs + int(sum(branch_lens))
    mask = np.zeros((L, L), dtype=bool)
    mask[:l_obs, :l_obs] = True
    off = l_obs
    for blen in branch_lens:
        mask[off : off + blen, :l_obs] = True
        mask[off : off + blen, off : off + blen] = True
        off += blen
    return mask


def assign_positions(l_obs: int, branch_lens: list[int]) -> np.ndarray:
    """Position ids for a packed sequence.

    Observation tokens take 0..l_obs-1. Every branch restarts at ``l_obs``,
    so all branches share one identical position range and each looks, to the
    model, like the sole continuation of the observation.
    """
    if l_obs < 1:
        raise ValueError(f"need at least one observation token, got {l_obs}")
    if any(b < 1 for b in branch_lens):
        raise ValueError(f"branch lengths must be >= 1, got {branch_lens}")
    parts = [np.arange(l_obs)]
    for blen in branch_lens:
        parts.append(l_obs + np.arange(blen))
    return np.concatenate(parts).astype(np.int64)


def sinusoidal_encoding(position_ids: np.ndarray, dim: int) -> np.ndarray:
    """Classic fixed sin/cos embedding for integer position ids."""
    if dim % 2 != 0:
        raise ValueError("encoding dim must be even")
    pos = np.asarray(position_ids, dtype=np.float64)[:, None]
    freqs = np.exp(-np.log(10000.0) * np.arange(0, dim, 2) / dim)[None, :]
    ang = pos * freqs
    out = np.empty((pos.shape[0], dim))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def packed_sequence_length(l_obs: int, branch_len: int, n_branches: int) -> int:
    """Tokens in one packed sequence carrying ``n_branches`` offset branches."""
    return l_obs + n_branches * branch_len


def separate_sequence_tokens(l_obs: int, branch_len: int, n_branches: int) -> int:
    """Tokens processed if each branch is run as its own sequence instead."""
    return n_branches * (l_obs + branch_len)
