"""Mask-prompted counterfactual sampling.

At every reverse step the chain is split by a binary prompt: pixels to keep
are drawn from the closed-form posterior anchored at the input image, pixels
to regenerate are drawn from the model's guided reverse transition, and the
two are merged. Because the t=1 posterior has zero variance and mean exactly
x0, kept pixels come back bit-identical to the input.

Images may be single (C, H, W) grids or (N, C, H, W) batches; masks follow as
(H, W) or (N, H, W). Gaussian draws are keyed by (seed, stream, item, role, t)
so each batch element and each role owns an independent noise stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import rng
from .denoiser import ConditionLabel, DenoiserConfig, ParamStore, predict_noise
from .errors import ContractError, EmptyMaskError, RangeError, ShapeError
from .schedule import NoiseSchedule, estimate_x0, forward_noise, posterior_params


@dataclass(frozen=True)
class GuidanceSpec:
    target: ConditionLabel = ConditionLabel.HEALTHY
    scale: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "target", ConditionLabel(int(self.target)))
        if self.target == ConditionLabel.NULL:
            raise ContractError("guidance target must be healthy or unhealthy")
        if self.scale < 0:
            raise ContractError("guidance scale must be non-negative")


@dataclass(frozen=True)
class SamplerOptions:
    seed: int = 0
    clip_x0: bool = True
    known_region_mode: str = "posterior"
    record_trajectory: bool = False
    stream: int = 0

    def __post_init__(self):
        if self.known_region_mode not in ("posterior", "marginal"):
            raise ContractError(f"unknown known_region_mode {self.known_region_mode!r}")


def _batch(x) -> tuple[torch.Tensor, bool]:
    x = torch.as_tensor(np.asarray(x) if isinstance(x, np.ndarray) else x, dtype=torch.float32)
    if x.dim() == 3:
        return x[None], True
    if x.dim() != 4:
        raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got {tuple(x.shape)}")
    return x, False


def _items(n: int, items) -> list[int]:
    items = list(range(n)) if items is None else [int(i) for i in items]
    if len(items) != n:
        raise ShapeError(f"{len(items)} item ids for a batch of {n}")
    return items


def _noise(shape, opts: SamplerOptions, items, role: int, t: int) -> torch.Tensor:
    return torch.from_numpy(np.stack([
        rng.normal(shape, opts.seed, opts.stream, item, role, t) for item in items
    ]))


def guided_eps(params: ParamStore, cfg: DenoiserConfig, xt, t, g: GuidanceSpec):
    """Classifier-free guided noise: (1 + c) eps(target) - c eps(null)."""
    if g.target == ConditionLabel.NULL:
        raise ContractError("guidance target must not be null")
    if g.scale == 0:
        return predict_noise(params, cfg, xt, t, int(g.target))
    x, single = _batch(xt)
    n = x.shape[0]
    labels = torch.tensor([int(g.target)] * n + [int(ConditionLabel.NULL)] * n)
    both = predict_noise(params, cfg, torch.cat([x, x]), t, labels)
    out = (1.0 + g.scale) * both[:n] - g.scale * both[n:]
    return out[0] if single else out


def guided_step(params, cfg, s: NoiseSchedule, xt, t: int, g: GuidanceSpec,
                opts: SamplerOptions = SamplerOptions(), items=None):
    """One model-driven reverse transition x_t -> x_{t-1}."""
    t = s.check_t(t)
    x, single = _batch(xt)
    eps = guided_eps(params, cfg, x, t, g).to(torch.float32)
    x0_hat = estimate_x0(s, x, eps, t, clip=opts.clip_x0)
    mean, var = posterior_params(s, x0_hat, x, t)
    if var > 0:
        mean = mean + math.sqrt(var) * _noise(x.shape[1:], opts, _items(len(x), items),
                                              rng.GUIDED, t)
    return mean[0] if single else mean


def known_step(s: NoiseSchedule, x0, xt, t: int, opts: SamplerOptions = SamplerOptions(),
               items=None):
    """Draw x_{t-1} for the preserved region, anchored at the clean input ``x0``."""
    t = s.check_t(t)
    x0b, single = _batch(x0)
    if opts.known_region_mode == "posterior":
        xtb, _ = _batch(xt)
        mean, var = posterior_params(s, x0b, xtb, t)
    else:
        ab_prev = float(s.alpha_bar_prev[t - 1])
        mean, var = math.sqrt(ab_prev) * x0b, 1.0 - ab_prev
    if var > 0:
        mean = mean + math.sqrt(var) * _noise(x0b.shape[1:], opts, _items(len(x0b), items),
                                              rng.KNOWN, t)
    return mean[0] if single else mean


def _regen_mask(mask, x: torch.Tensor) -> torch.Tensor:
    m = torch.as_tensor(np.asarray(mask) if isinstance(mask, np.ndarray) else mask)
    if m.dim() == 2:
        m = m[None].expand(x.shape[0], -1, -1)
    if tuple(m.shape) != (x.shape[0],) + tuple(x.shape[2:]):
        raise ShapeError(f"mask shape {tuple(m.shape)} does not match images {tuple(x.shape)}")
    if not torch.all((m == 0) | (m == 1)):
        raise ContractError("prompt mask must be binary")
    return m.to(torch.bool)[:, None].expand_as(x)


def promptable_sample(params, cfg, s: NoiseSchedule, x_input, mask, g: GuidanceSpec,
                      opts: SamplerOptions = SamplerOptions(), items=None):
    """Regenerate the ``mask == 1`` region of ``x_input`` under guidance ``g``.

    Returns the generated image; with ``opts.record_trajectory`` returns
    ``(image, states)`` where ``states`` lists x_T .. x_0.
    """
    x_in, single = _batch(x_input)
    regen = _regen_mask(mask, x_in)
    items = _items(len(x_in), items)
    x = _noise(x_in.shape[1:], opts, items, rng.INIT, s.T)
    states = [x] if opts.record_trajectory else None
    for t in range(s.T, 0, -1):
        known = known_step(s, x_in, x, t, opts, items)
        guided = guided_step(params, cfg, s, x, t, g, opts, items)
        x = torch.where(regen, guided, known)
        if states is not None:
            states.append(x)
    out = x[0] if single else x
    if states is not None:
        return out, [st[0] if single else st for st in states]
    return out


def counterfactual_sample(params, cfg, s: NoiseSchedule, x_input, g: GuidanceSpec,
                          opts: SamplerOptions = SamplerOptions(), depth: int | None = None,
                          items=None):
    """Unprompted baseline: noise the whole input to ``depth`` and denoise with guidance."""
    depth = s.T // 2 if depth is None else int(depth)
    if not 0 <= depth <= s.T:
        raise RangeError(f"noising depth {depth} outside [0, {s.T}]")
    x_in, single = _batch(x_input)
    if depth == 0:
        return x_input
    items = _items(len(x_in), items)
    x = forward_noise(s, x_in, depth, _noise(x_in.shape[1:], opts, items, rng.INIT, depth))
    for t in range(depth, 0, -1):
        x = guided_step(params, cfg, s, x, t, g, opts, items)
    return x[0] if single else x


def tumor_transfer(params, cfg, s: NoiseSchedule, x_unhealthy, tumor_mask, new_site,
                   opts: SamplerOptions = SamplerOptions(), heal_scale: float = 0.0,
                   grow_scale: float = 0.0, items=None):
    """Remove the lesion under ``tumor_mask``, then grow a new one under ``new_site``."""
    heal_opts = SamplerOptions(opts.seed, opts.clip_x0, opts.known_region_mode, False,
                               2 * opts.stream + 1)
    grow_opts = SamplerOptions(opts.seed, opts.clip_x0, opts.known_region_mode, False,
                               2 * opts.stream + 2)
    healed = promptable_sample(params, cfg, s, x_unhealthy, tumor_mask,
                               GuidanceSpec(ConditionLabel.HEALTHY, heal_scale), heal_opts, items)
    regenerated = promptable_sample(params, cfg, s, healed, new_site,
                                    GuidanceSpec(ConditionLabel.UNHEALTHY, grow_scale), grow_opts,
                                    items)
    return healed, regenerated


def draw_site(gen: np.random.Generator, H: int, W: int, brain_region):
    """Draw a site ellipse; returns ``(mask, (cy, cx), (ay, ax))``."""
    brain = np.asarray(brain_region, bool)
    if brain.shape != (H, W):
        raise ShapeError(f"brain region shape {brain.shape} != {(H, W)}")
    if not brain.any():
        raise EmptyMaskError("brain region is empty")
    pixels = np.argwhere(brain)
    yy, xx = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")
    for _ in range(100):
        cy, cx = pixels[gen.integers(len(pixels))] + gen.uniform(0.0, 1.0, 2)
        ay = gen.uniform(H / 16, H / 6)
        ax = gen.uniform(W / 16, W / 6)
        mask = (((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0) & brain
        if mask.any():
            return mask, (cy, cx), (ay, ax)
    raise EmptyMaskError("could not draw a non-empty site mask in 100 attempts")


def random_site_mask(gen: np.random.Generator, H: int, W: int, brain_region) -> np.ndarray:
    """Axis-aligned ellipse centred uniformly in ``brain_region``, clipped to it."""
    return draw_site(gen, H, W, brain_region)[0]
