"""Small convolutional UNet noise predictor."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DenoiserConfig


def groups(channels: int) -> int:
    return min(8, channels)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, embed_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(embed_dim, cout)
        self.norm2 = nn.GroupNorm(groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, cond):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(F.silu(cond))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class UNet(nn.Module):
    """Encoder/decoder with one residual block per level and concatenated skips.

    Level ``i`` has width ``base_width * 2**i`` and runs at resolution
    ``H / 2**i``.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        widths = [cfg.base_width * 2**i for i in range(cfg.depth)]
        E = cfg.embed_dim
        self.widths = widths
        self.stem = nn.Conv2d(cfg.channels_in, widths[0], 3, padding=1)
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = widths[0]
        for i, w in enumerate(widths):
            self.down.append(ResBlock(prev, w, E))
            if i < cfg.depth - 1:
                self.downsample.append(nn.Conv2d(w, w, 3, stride=2, padding=1))
            prev = w
        self.mid = ResBlock(prev, prev, E)
        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i in reversed(range(cfg.depth)):
            w = widths[i]
            self.up.append(ResBlock(prev + w, w, E))
            if i > 0:
                self.upsample.append(nn.Conv2d(w, widths[i - 1], 3, padding=1))
            prev = w if i == 0 else widths[i - 1]
        self.out_norm = nn.GroupNorm(groups(widths[0]), widths[0])
        self.out_conv = nn.Conv2d(widths[0], cfg.channels_in, 3, padding=1)

    def forward(self, x, cond):
        h = self.stem(x)
        skips = []
        for i, block in enumerate(self.down):
            h = block(h, cond)
            skips.append(h)
            if i < len(self.downsample):
                h = self.downsample[i](h)
        h = self.mid(h, cond)
        for j, block in enumerate(self.up):
            h = block(torch.cat([h, skips.pop()], dim=1), cond)
            if j < len(self.upsample):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsample[j](h)
        return self.out_conv(F.silu(self.out_norm(h)))
