from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import IntEnum

from ..errors import ConfigError, ShapeError


class ConditionLabel(IntEnum):
    HEALTHY = 0
    UNHEALTHY = 1
    NULL = 2


@dataclass(frozen=True)
class DenoiserConfig:
    backend: str = "unet"
    channels_in: int = 4
    base_width: int = 32
    depth: int = 3
    patch_size: int = 4
    hidden_dim: int = 128
    n_blocks: int = 4
    n_heads: int = 4
    embed_dim: int = 128
    n_classes: int = 3

    def __post_init__(self):
        if self.backend not in ("unet", "transformer"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.embed_dim % 2:
            raise ConfigError("embed_dim must be even")
        if self.hidden_dim % self.n_heads:
            raise ConfigError("hidden_dim must be divisible by n_heads")
        if min(self.channels_in, self.base_width, self.depth, self.patch_size,
               self.hidden_dim, self.n_blocks, self.n_heads) < 1:
            raise ConfigError("denoiser sizes must be positive")
        if self.n_classes != 3:
            raise ConfigError("n_classes must be 3 (healthy, unhealthy, null)")

    def check_image(self, shape) -> None:
        """Raise unless a (..., C, H, W) shape is usable with this backend."""
        if len(shape) < 3:
            raise ShapeError(f"expected (..., C, H, W), got {tuple(shape)}")
        c, h, w = shape[-3:]
        if c != self.channels_in:
            raise ShapeError(f"expected {self.channels_in} channels, got {c}")
        if self.backend == "unet":
            k = 2 ** (self.depth - 1)
            if h % k or w % k:
                raise ShapeError(f"unet depth {self.depth} needs H, W divisible by {k}, got {h}x{w}")
        elif h % self.patch_size or w % self.patch_size:
            raise ShapeError(f"patch size {self.patch_size} does not divide {h}x{w}")

    def to_dict(self) -> dict:
        return asdict(self)
