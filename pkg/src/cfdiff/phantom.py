"""Synthetic four-channel brain phantoms with optional tumours, and the .cfds format.

A phantom is an elliptical "brain" with per-channel base intensity and
low-frequency texture. Unhealthy phantoms carry a lesion built from one to
three overlapping Gaussian blobs; the tumour mask is the union of the blobs'
half-maximum discs. Channel contrasts loosely follow T1 / T1ce / T2 / FLAIR
appearance: dark on T1, rim-enhancing on T1ce, bright on T2 and FLAIR.

Random draws come from three independent streams per seed (label, anatomy,
lesion), so a seed rendered with ``force_label=HEALTHY`` is the exact healthy
twin of the same seed rendered unhealthy.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from . import rng
from .denoiser.config import ConditionLabel
from .errors import (BadMagicError, ConfigError, FormatError, MaskValueError, TruncatedError,
                     VersionError)

MAGIC = b"CFDS"
VERSION = 1
_HEADER = struct.Struct("<4sHBBHHB3s")

# (base intensity, tumour contrast, rim_only)
DEFAULT_PROFILE = (
    (0.60, -0.40, False),  # T1-like
    (0.55, 0.50, True),    # T1ce-like
    (0.40, 0.50, False),   # T2-like
    (0.45, 0.55, False),   # FLAIR-like
)


@dataclass(frozen=True)
class PhantomSpec:
    H: int = 32
    W: int = 32
    C: int = 4
    count_range: tuple = (1, 3)
    radius_frac: tuple = (1 / 12, 1 / 5)
    amplitude_range: tuple = (0.3, 0.7)
    modality_profile: tuple = DEFAULT_PROFILE
    texture_amp: float = 0.05
    brain_axes: tuple = (0.36, 0.45)
    brain_jitter: float = 0.10
    brain_cover: tuple = (0.40, 0.70)
    max_tumor_frac: float = 0.20
    rim_width: int = 2

    def __post_init__(self):
        object.__setattr__(self, "count_range", tuple(self.count_range))
        object.__setattr__(self, "radius_frac", tuple(self.radius_frac))
        object.__setattr__(self, "amplitude_range", tuple(self.amplitude_range))
        object.__setattr__(self, "modality_profile",
                           tuple(tuple(p) for p in self.modality_profile))
        object.__setattr__(self, "brain_axes", tuple(self.brain_axes))
        object.__setattr__(self, "brain_cover", tuple(self.brain_cover))
        self.validate()

    def validate(self):
        if self.H < 8 or self.W < 8:
            raise ConfigError("phantom side must be at least 8")
        if self.C != len(self.modality_profile):
            raise ConfigError(f"C={self.C} but {len(self.modality_profile)} modality profiles")
        lo, hi = self.count_range
        if not 1 <= lo <= hi:
            raise ConfigError("bad tumour count range")
        if not 0 < self.radius_frac[0] <= self.radius_frac[1] < 0.5:
            raise ConfigError("bad tumour radius range")
        if not 0 < self.amplitude_range[0] <= self.amplitude_range[1] <= 1:
            raise ConfigError("bad amplitude range")
        for base, contrast, _ in self.modality_profile:
            # worst-case lesion factor is 1; keep values clampable to [0, 1]
            if not (0 <= base <= 1 and -1 <= contrast <= 1):
                raise ConfigError("modality profile out of range")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modality_profile"] = [list(p) for p in self.modality_profile]
        for k in ("count_range", "radius_frac", "amplitude_range", "brain_axes", "brain_cover"):
            d[k] = list(d[k])
        return d


@dataclass
class PhantomSample:
    image: np.ndarray                 # (C, H, W) float32 in [0, 1]
    tumor_mask: np.ndarray | None     # (H, W) bool
    brain_mask: np.ndarray | None     # (H, W) bool
    label: ConditionLabel

    def __post_init__(self):
        self.label = ConditionLabel(int(self.label))


def _grid(H, W):
    return np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")


def _upsample_bilinear(grid: np.ndarray, H: int, W: int) -> np.ndarray:
    """Cell-centred bilinear upsampling of a small 2-D grid, edges clamped."""
    gh, gw = grid.shape
    ys = np.clip((np.arange(H) + 0.5) * gh / H - 0.5, 0, gh - 1)
    xs = np.clip((np.arange(W) + 0.5) * gw / W - 0.5, 0, gw - 1)
    rows = np.stack([np.interp(xs, np.arange(gw), grid[i]) for i in range(gh)])
    return np.stack([np.interp(ys, np.arange(gh), rows[:, j]) for j in range(W)], axis=1)


def _brain(spec: PhantomSpec, g: np.random.Generator):
    H, W = spec.H, spec.W
    yy, xx = _grid(H, W)
    for _ in range(100):
        cy = H * (0.5 + g.uniform(-spec.brain_jitter, spec.brain_jitter))
        cx = W * (0.5 + g.uniform(-spec.brain_jitter, spec.brain_jitter))
        ay = H * g.uniform(*spec.brain_axes)
        ax = W * g.uniform(*spec.brain_axes)
        mask = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
        if spec.brain_cover[0] <= mask.mean() <= spec.brain_cover[1]:
            return mask
    raise ConfigError("could not place a brain ellipse with the requested coverage")


def _lesion(spec: PhantomSpec, brain: np.ndarray, g: np.random.Generator):
    """Return (tumour mask, strength map) for a lesion lying inside ``brain``."""
    H, W = spec.H, spec.W
    yy, xx = _grid(H, W)
    side = min(H, W)
    r_lo, r_hi = spec.radius_frac[0] * side, spec.radius_frac[1] * side
    half_max = 2.0 * math.log(2.0)
    inside = np.argwhere(brain)

    def disc_fits(cy, cx, r):
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        return disc.any() and not (disc & ~brain).any()

    for _ in range(100):
        count = int(g.integers(spec.count_range[0], spec.count_range[1] + 1))
        blobs = []
        r0 = g.uniform(r_lo, r_hi)
        for _ in range(200):
            cy, cx = inside[g.integers(len(inside))] + g.uniform(0.0, 1.0, 2)
            if disc_fits(cy, cx, r0):
                blobs.append((cy, cx, r0, g.uniform(*spec.amplitude_range)))
                break
        if not blobs:
            continue
        # satellites overlap the primary lobe so the lesion stays one connected region
        for _ in range(count - 1):
            for _ in range(50):
                r = g.uniform(r_lo, max(r_lo, blobs[0][2]))
                dist = g.uniform(0.5, 1.0) * blobs[0][2]
                ang = g.uniform(0.0, 2 * math.pi)
                cy, cx = blobs[0][0] + dist * math.sin(ang), blobs[0][1] + dist * math.cos(ang)
                if disc_fits(cy, cx, r):
                    blobs.append((cy, cx, r, g.uniform(*spec.amplitude_range)))
                    break
        mask = np.zeros((H, W), bool)
        strength = np.zeros((H, W))
        for cy, cx, r, amp in blobs:
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            # sigma chosen so the half-maximum contour is the disc of radius r
            blob = amp * np.exp(-d2 * half_max / (2.0 * r * r))
            mask |= d2 <= r * r
            strength = np.maximum(strength, blob)
        mask &= brain
        if 0 < mask.mean() <= spec.max_tumor_frac:
            return mask, strength
    raise ConfigError("could not place a lesion inside the brain")


def generate_sample(spec: PhantomSpec, seed: int, force_label=None) -> PhantomSample:
    spec.validate()
    label = ConditionLabel(int(rng.stream(seed, rng.PHANTOM, 0).integers(2)))
    if force_label is not None:
        label = ConditionLabel(int(force_label))
        if label == ConditionLabel.NULL:
            raise ConfigError("cannot generate a null-labelled phantom")
    g = rng.stream(seed, rng.PHANTOM, 1)
    brain = _brain(spec, g)
    image = np.zeros((spec.C, spec.H, spec.W))
    for c, (base, _, _) in enumerate(spec.modality_profile):
        texture = _upsample_bilinear(g.standard_normal((4, 4)), spec.H, spec.W)
        image[c] = brain * (base + spec.texture_amp * texture)

    tumor = np.zeros((spec.H, spec.W), bool)
    if label == ConditionLabel.UNHEALTHY:
        tumor, strength = _lesion(spec, brain, rng.stream(seed, rng.PHANTOM, 2))
        factor = np.where(tumor, 0.5 * (1.0 + strength), 0.0)
        core = ndimage.binary_erosion(tumor, iterations=spec.rim_width)
        rim = tumor & ~core
        for c, (_, contrast, rim_only) in enumerate(spec.modality_profile):
            region = rim if rim_only else tumor
            image[c] += contrast * factor * region
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return PhantomSample(image=image, tumor_mask=tumor, brain_mask=brain, label=label)


def healthy_schedule(n: int, healthy_fraction: float) -> list[bool]:
    """Evenly interleaved healthy flags totalling round-half-up(n * fraction)."""
    if not 0.0 <= healthy_fraction <= 1.0:
        raise ConfigError("healthy_fraction must lie in [0, 1]")
    f = healthy_fraction
    return [math.floor((i + 1) * f + 0.5) - math.floor(i * f + 0.5) == 1 for i in range(n)]


def generate_dataset(spec: PhantomSpec, n: int, healthy_fraction: float = 0.5, seed: int = 0,
                     start: int = 0) -> list[PhantomSample]:
    """Samples ``start .. n-1`` of the corpus; sample ``i`` uses seed ``seed + i``."""
    flags = healthy_schedule(n, healthy_fraction)
    return [
        generate_sample(spec, seed + i,
                        ConditionLabel.HEALTHY if flags[i] else ConditionLabel.UNHEALTHY)
        for i in range(start, n)
    ]


def to_model_range(image: np.ndarray) -> np.ndarray:
    return image * 2.0 - 1.0


def from_model_range(image: np.ndarray) -> np.ndarray:
    return (image + 1.0) / 2.0


def encode_sample(s: PhantomSample) -> bytes:
    image = np.asarray(s.image, dtype="<f4")
    C, H, W = image.shape
    flags = (s.tumor_mask is not None) | ((s.brain_mask is not None) << 1)
    parts = [_HEADER.pack(MAGIC, VERSION, flags, C, H, W, int(s.label), b"\0\0\0"), image.tobytes()]
    for m in (s.tumor_mask, s.brain_mask):
        if m is not None:
            if m.shape != (H, W):
                raise FormatError(f"mask shape {m.shape} != {(H, W)}")
            parts.append(np.asarray(m, dtype=np.uint8).tobytes())
    return b"".join(parts)


def decode_sample(data: bytes) -> PhantomSample:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a .cfds sample (bad magic)")
    if len(data) < _HEADER.size:
        raise TruncatedError("truncated .cfds header")
    _, version, flags, C, H, W, label, reserved = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionError(f"unsupported .cfds version {version}")
    if reserved != b"\0\0\0" or flags & ~3 or label > 1:
        raise FormatError("malformed .cfds header")
    n_img = C * H * W * 4
    n_masks = bin(flags).count("1") * H * W
    if len(data) < _HEADER.size + n_img + n_masks:
        raise TruncatedError("truncated .cfds payload")
    if len(data) > _HEADER.size + n_img + n_masks:
        raise FormatError("trailing bytes after .cfds payload")
    off = _HEADER.size
    image = np.frombuffer(data, dtype="<f4", count=C * H * W, offset=off).reshape(C, H, W)
    off += n_img
    masks = []
    for bit in (1, 2):
        if flags & bit:
            raw = np.frombuffer(data, dtype=np.uint8, count=H * W, offset=off).reshape(H, W)
            if raw.max(initial=0) > 1:
                raise MaskValueError("mask bytes must be 0 or 1")
            masks.append(raw.astype(bool))
            off += H * W
        else:
            masks.append(None)
    return PhantomSample(image=image.astype(np.float32), tumor_mask=masks[0],
                         brain_mask=masks[1], label=ConditionLabel(label))
