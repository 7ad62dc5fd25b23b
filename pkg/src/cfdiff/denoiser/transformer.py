"""Pixel-space patch transformer with adaLN-Zero conditioning."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DenoiserConfig
from .embed import pos_embed_2d


def patchify(x: torch.Tensor, p: int) -> torch.Tensor:
    """(N, C, H, W) -> (N, H/p * W/p, p*p*C); tokens row-major, features (py, px, c)."""
    n, c, h, w = x.shape
    x = x.reshape(n, c, h // p, p, w // p, p)
    x = x.permute(0, 2, 4, 3, 5, 1)
    return x.reshape(n, (h // p) * (w // p), p * p * c)


def unpatchify(tokens: torch.Tensor, p: int, c: int, h: int, w: int) -> torch.Tensor:
    n = tokens.shape[0]
    x = tokens.reshape(n, h // p, w // p, p, p, c)
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(n, c, h, w)


def modulate(x, shift, scale):
    return x * (1 + scale[:, None, :]) + shift[:, None, :]


class Attention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        n, L, d = x.shape
        hd = d // self.n_heads
        qkv = self.qkv(x).reshape(n, L, 3, self.n_heads, hd).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = torch.softmax(q @ k.transpose(-2, -1) * hd**-0.5, dim=-1)
        out = (att @ v).transpose(1, 2).reshape(n, L, d)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, n_heads: int, embed_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.attn = Attention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.fc1 = nn.Linear(dim, 4 * dim)
        self.fc2 = nn.Linear(4 * dim, dim)
        self.adaln = nn.Linear(embed_dim, 6 * dim)

    def forward(self, x, cond):
        (shift_a, scale_a, gate_a,
         shift_m, scale_m, gate_m) = self.adaln(F.silu(cond)).chunk(6, dim=1)
        x = x + gate_a[:, None, :] * self.attn(modulate(self.norm1(x), shift_a, scale_a))
        h = self.fc2(F.gelu(self.fc1(modulate(self.norm2(x), shift_m, scale_m)), approximate="tanh"))
        return x + gate_m[:, None, :] * h


class PatchTransformer(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        p, D = cfg.patch_size, cfg.hidden_dim
        self.p = p
        self.patch_embed = nn.Linear(p * p * cfg.channels_in, D)
        self.blocks = nn.ModuleList(Block(D, cfg.n_heads, cfg.embed_dim) for _ in range(cfg.n_blocks))
        self.final_norm = nn.LayerNorm(D, elementwise_affine=False, eps=1e-6)
        self.final_adaln = nn.Linear(cfg.embed_dim, 2 * D)
        self.head = nn.Linear(D, p * p * cfg.channels_in)
        self._pos = {}

    def pos(self, gh, gw, like):
        key = (gh, gw, like.dtype)
        if key not in self._pos:
            table = pos_embed_2d(self.patch_embed.out_features, gh, gw)
            self._pos[key] = torch.as_tensor(table, dtype=like.dtype)
        return self._pos[key]

    def embed_tokens(self, x):
        _, _, h, w = x.shape
        tok = self.patch_embed(patchify(x, self.p))
        return tok + self.pos(h // self.p, w // self.p, tok)[None]

    def forward(self, x, cond):
        n, c, h, w = x.shape
        tok = self.embed_tokens(x)
        for block in self.blocks:
            tok = block(tok, cond)
        shift, scale = self.final_adaln(F.silu(cond)).chunk(2, dim=1)
        tok = self.head(modulate(self.final_norm(tok), shift, scale))
        return unpatchify(tok, self.p, c, h, w)
