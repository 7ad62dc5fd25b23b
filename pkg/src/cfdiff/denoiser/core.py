"""Parameter store, initialisation, forward pass and reverse-mode gradients.

Networks are plain ``torch.nn`` modules used as stateless templates: weights
live in a :class:`ParamStore` and are bound per call with
``torch.func.functional_call``.
"""

from __future__ import annotations

import functools
import math
from collections import OrderedDict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from .. import rng
from ..errors import ShapeError, StaleTapeError
from .config import ConditionLabel, DenoiserConfig
from .embed import time_embed_batch
from .transformer import PatchTransformer
from .unet import UNet

INIT_DOMAIN = 20


class ParamStore(OrderedDict):
    """Ordered ``name -> tensor`` mapping holding the weights of one denoiser."""

    def num_params(self) -> int:
        return sum(v.numel() for v in self.values())

    def clone(self) -> "ParamStore":
        return ParamStore((k, v.detach().clone()) for k, v in self.items())

    def to(self, dtype) -> "ParamStore":
        return ParamStore((k, v.detach().to(dtype)) for k, v in self.items())

    def zeros_like(self) -> "ParamStore":
        return ParamStore((k, torch.zeros_like(v)) for k, v in self.items())

    def scale(self, factor: float) -> "ParamStore":
        return ParamStore((k, v * factor) for k, v in self.items())


class ConditionEmbedding(nn.Module):
    """Sinusoidal time embedding through a 2-layer MLP, plus a learned label embedding."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        E = cfg.embed_dim
        self.embed_dim = E
        self.time1 = nn.Linear(E, E)
        self.time2 = nn.Linear(E, E)
        self.label = nn.Embedding(cfg.n_classes, E)

    def forward(self, t, y):
        temb = time_embed_batch(t, self.embed_dim).to(self.time1.weight.dtype)
        temb = self.time2(F.silu(self.time1(temb)))
        return temb + self.label(y)


class Denoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cond = ConditionEmbedding(cfg)
        if cfg.backend == "unet":
            self.unet = UNet(cfg)
            self.net = "unet"
        else:
            self.transformer = PatchTransformer(cfg)
            self.net = "transformer"

    def forward(self, x, t, y):
        return getattr(self, self.net)(x, self.cond(t, y))


@functools.lru_cache(maxsize=None)
def template(cfg: DenoiserConfig) -> Denoiser:
    return Denoiser(cfg).requires_grad_(False)


def _zero_init(name: str) -> bool:
    return "adaln" in name


def init_params(cfg: DenoiserConfig, seed: int = 0) -> ParamStore:
    """Fan-in uniform weights, zero biases, unit norm scales, zero adaLN projections."""
    store = ParamStore()
    modules = dict(template(cfg).named_modules())
    for idx, (name, p) in enumerate(template(cfg).named_parameters()):
        owner = modules[name.rsplit(".", 1)[0]]
        leaf = name.rsplit(".", 1)[1]
        if _zero_init(name) or leaf == "bias":
            value = np.zeros(p.shape)
        elif isinstance(owner, nn.GroupNorm):
            value = np.ones(p.shape)
        elif isinstance(owner, nn.Embedding):
            value = rng.stream(seed, INIT_DOMAIN, idx).uniform(-1.0, 1.0, p.shape)
        else:
            fan_in = int(np.prod(p.shape[1:]))
            bound = 1.0 / math.sqrt(fan_in)
            value = rng.stream(seed, INIT_DOMAIN, idx).uniform(-bound, bound, p.shape)
        store[name] = torch.as_tensor(value.astype(np.float32))
    return store


def _prepare(params: ParamStore, cfg: DenoiserConfig, xt, t, y):
    cfg.check_image(tuple(xt.shape))
    dtype = next(iter(params.values())).dtype
    x = torch.as_tensor(xt, dtype=dtype)
    single = x.dim() == 3
    if single:
        x = x[None]
    if x.dim() != 4:
        raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got {tuple(x.shape)}")
    n = x.shape[0]
    t = torch.as_tensor(t, dtype=torch.int64).reshape(-1).expand(n) if np.ndim(t) == 0 \
        else torch.as_tensor(t, dtype=torch.int64)
    y = torch.as_tensor(y, dtype=torch.int64).reshape(-1).expand(n) if np.ndim(y) == 0 \
        else torch.as_tensor(y, dtype=torch.int64)
    if t.shape != (n,) or y.shape != (n,):
        raise ShapeError("t and y must be scalars or length-N vectors")
    if int(y.min()) < 0 or int(y.max()) > ConditionLabel.NULL:
        raise ShapeError(f"labels must be in 0..{int(ConditionLabel.NULL)}")
    return x, t, y, single


def predict_noise(params: ParamStore, cfg: DenoiserConfig, xt, t, y) -> torch.Tensor:
    """epsilon_theta(x_t, t, y); output has the shape of ``xt``."""
    x, t, y, single = _prepare(params, cfg, xt, t, y)
    with torch.no_grad():
        out = functional_call(template(cfg), dict(params), (x, t, y))
    return out[0] if single else out


class Tape:
    """Recorded forward pass awaiting a single :func:`backprop` call."""

    def __init__(self, params: ParamStore, cfg: DenoiserConfig, xt, t, y):
        x, t, y, single = _prepare(params, cfg, xt, t, y)
        self.leaves = OrderedDict((k, v.detach().requires_grad_(True)) for k, v in params.items())
        with torch.enable_grad():
            out = functional_call(template(cfg), dict(self.leaves), (x, t, y))
        self._out = out[0] if single else out
        self.output = self._out.detach()

    def consume(self):
        if self._out is None:
            raise StaleTapeError("forward state already consumed or missing")
        out, self._out = self._out, None
        return out


def record_forward(params: ParamStore, cfg: DenoiserConfig, xt, t, y) -> Tape:
    return Tape(params, cfg, xt, t, y)


def backprop(tape: Tape, loss_grad) -> ParamStore:
    """Gradient of a scalar loss given d(loss)/d(output) for the recorded pass."""
    if tape is None:
        raise StaleTapeError("no forward pass recorded")
    out = tape.consume()
    g = torch.as_tensor(loss_grad, dtype=out.dtype)
    if g.shape != out.shape:
        raise ShapeError(f"loss_grad shape {tuple(g.shape)} != output {tuple(out.shape)}")
    names = list(tape.leaves)
    grads = torch.autograd.grad(out, [tape.leaves[k] for k in names], grad_outputs=g,
                                allow_unused=True)
    return ParamStore(
        (k, torch.zeros_like(tape.leaves[k]) if gr is None else gr.detach())
        for k, gr in zip(names, grads)
    )
