from __future__ import annotations

import math

import numpy as np
import torch

from ..errors import ContractError, RangeError


def frequencies(dim: int) -> np.ndarray:
    """Geometric frequencies from 1 down to 1e-4, one per sin/cos pair."""
    half = dim // 2
    if half == 1:
        return np.ones(1)
    return np.exp(-math.log(1e4) * np.arange(half) / (half - 1))


def time_embed(t: int, dim: int, T: int) -> np.ndarray:
    """Sinusoidal embedding of a single timestep: ``[sin(t f), cos(t f)]``."""
    if dim % 2:
        raise ContractError(f"embedding dim must be even, got {dim}")
    if not 1 <= t <= T:
        raise RangeError(f"timestep {t} outside [1, {T}]")
    arg = t * frequencies(dim)
    return np.concatenate([np.sin(arg), np.cos(arg)])


def time_embed_batch(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Batched form used inside the networks; ``t`` is a 1-D tensor."""
    freqs = torch.as_tensor(frequencies(dim), dtype=torch.float64)
    arg = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=1)


def pos_embed_2d(dim: int, gh: int, gw: int) -> np.ndarray:
    """Fixed 2-D sin/cos positional table of shape (gh*gw, dim), row-major tokens.

    Half the width encodes the row index, half the column index.
    """
    if dim % 4:
        raise ContractError(f"positional dim must be divisible by 4, got {dim}")
    quarter = dim // 4
    omega = 1.0 / 10000 ** (np.arange(quarter) / quarter)
    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")

    def enc(pos):
        out = pos.reshape(-1)[:, None] * omega[None, :]
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    return np.concatenate([enc(rows), enc(cols)], axis=1)
