"""Conditional DDPM training: noise-prediction loss, AdamW, and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import rng
from .checkpoint import Checkpoint, save_checkpoint
from .denoiser import ConditionLabel, DenoiserConfig, ParamStore, backprop, init_params, \
    record_forward
from .errors import ConfigError, ContractError, DataError, ShapeError
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    steps: int = 15000
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    eps_stability: float = 1e-8
    null_cond_prob: float = 0.1
    seed: int = 0
    replacement: bool = True
    log_every: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.null_cond_prob <= 1.0:
            raise ConfigError("null_cond_prob must lie in [0, 1]")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.learning_rate <= 0 or self.eps_stability <= 0 or self.weight_decay < 0:
            raise ConfigError("learning rate and eps must be positive, weight decay >= 0")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be positive and steps non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def draw_training_batch(s: NoiseSchedule, x0: torch.Tensor, y: torch.Tensor,
                        gen: np.random.Generator, null_cond_prob: float):
    """Timesteps, noise, noised images and (possibly nulled) labels for one batch."""
    n = x0.shape[0]
    t = gen.integers(1, s.T + 1, size=n)
    eps = torch.from_numpy(gen.standard_normal(tuple(x0.shape)).astype(np.float32))
    drop = gen.uniform(size=n) < null_cond_prob
    y = torch.where(torch.from_numpy(drop), int(ConditionLabel.NULL), y)
    ab = torch.from_numpy(s.alpha_bar[t - 1].astype(np.float32))[:, None, None, None]
    xt = ab.sqrt() * x0 + (1 - ab).sqrt() * eps
    return xt, torch.from_numpy(t), eps, y


def noise_loss(pred: torch.Tensor, eps: torch.Tensor):
    """Mean squared error and its gradient with respect to ``pred``."""
    diff = pred - eps
    return float((diff * diff).mean()), 2.0 * diff / diff.numel()


def ddpm_loss(params: ParamStore, cfg: DenoiserConfig, s: NoiseSchedule, x0, y,
              gen: np.random.Generator, null_cond_prob: float = 0.1):
    x0 = torch.as_tensor(x0, dtype=torch.float32)
    y = torch.as_tensor(y, dtype=torch.int64)
    if x0.shape[0] == 0:
        raise ContractError("empty batch")
    xt, t, eps, y = draw_training_batch(s, x0, y, gen, null_cond_prob)
    tape = record_forward(params, cfg, xt, t, y)
    loss, grad = noise_loss(tape.output, eps)
    return loss, backprop(tape, grad)


def init_moments(params: ParamStore) -> dict:
    return {"m": params.zeros_like(), "v": params.zeros_like()}


def optimizer_step(params: ParamStore, grads: ParamStore, moments: dict, tc: TrainConfig,
                   step: int):
    """AdamW with bias correction and decoupled weight decay; returns (params, moments)."""
    if step < 1:
        raise ContractError("optimizer step counter starts at 1")
    if list(params) != list(grads):
        raise ShapeError("gradient names do not match parameters")
    b1, b2, lr = tc.adam_beta1, tc.adam_beta2, tc.learning_rate
    c1, c2 = 1.0 - b1**step, 1.0 - b2**step
    new_p, new_m, new_v = ParamStore(), ParamStore(), ParamStore()
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {tuple(g.shape)} != {tuple(p.shape)}")
        m = b1 * moments["m"][name] + (1.0 - b1) * g
        v = b2 * moments["v"][name] + (1.0 - b2) * g * g
        update = (m / c1) / ((v / c2).sqrt() + tc.eps_stability)
        new_p[name] = p - lr * update - (lr * tc.weight_decay) * p
        new_m[name], new_v[name] = m, v
    return new_p, {"m": new_m, "v": new_v}


def dataset_arrays(samples) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack phantoms into model-range images in [-1, 1] and integer labels."""
    x = np.stack([s.image for s in samples]).astype(np.float32) * 2.0 - 1.0
    y = np.array([int(s.label) for s in samples], dtype=np.int64)
    return torch.from_numpy(x), torch.from_numpy(y)


def new_checkpoint(cfg: DenoiserConfig, tc: TrainConfig, s: NoiseSchedule,
                   init_seed: int | None = None) -> Checkpoint:
    params = init_params(cfg, tc.seed if init_seed is None else init_seed)
    return Checkpoint(denoiser=cfg, schedule=s.as_dict(), train=tc.to_dict(), step=0,
                      params=params, moments=init_moments(params))


def train(images, labels, cfg: DenoiserConfig, tc: TrainConfig, s: NoiseSchedule,
          resume: Checkpoint | None = None, log_path=None, checkpoint_path=None) -> Checkpoint:
    """Run (or continue) training up to ``tc.steps`` optimizer steps.

    Step ``k`` draws its batch, timesteps, noise and label dropout from its own
    stream keyed by ``(tc.seed, k)``, so resuming from a checkpoint at step
    ``k`` reproduces the uninterrupted run exactly.
    """
    x = torch.as_tensor(images, dtype=torch.float32)
    y = torch.as_tensor(labels, dtype=torch.int64)
    n = x.shape[0]
    if n == 0:
        raise DataError("empty training set")
    if tc.steps > 0 and not {0, 1} <= set(y.tolist()):
        raise DataError("training set needs both healthy and unhealthy samples")
    if not tc.replacement and n < tc.batch_size:
        raise DataError(f"{n} samples cannot fill a batch of {tc.batch_size} without replacement")
    cfg.check_image(tuple(x.shape))

    ckpt = resume if resume is not None else new_checkpoint(cfg, tc, s)
    params, moments = ckpt.params, ckpt.moments
    log_file = open(log_path, "a", buffering=1) if log_path else None
    try:
        for step in range(ckpt.step + 1, tc.steps + 1):
            gen = rng.stream(tc.seed, rng.TRAIN, step)
            idx = gen.choice(n, size=tc.batch_size, replace=tc.replacement)
            loss, grads = ddpm_loss(params, cfg, s, x[idx], y[idx], gen, tc.null_cond_prob)
            if not math.isfinite(loss):
                raise ContractError(f"non-finite loss at step {step}")
            params, moments = optimizer_step(params, grads, moments, tc, step)
            if log_file and step % tc.log_every == 0:
                log_file.write(f"{step}\t{loss!r}\n")
            if step % 500 == 0:
                log.info("step %d loss %.5f", step, loss)
            ckpt = Checkpoint(cfg, s.as_dict(), tc.to_dict(), step, params, moments)
            if checkpoint_path and tc.checkpoint_every and step % tc.checkpoint_every == 0:
                save_checkpoint(ckpt, checkpoint_path)
    finally:
        if log_file:
            log_file.close()
    return ckpt


def read_loss_log(path) -> tuple[np.ndarray, np.ndarray]:
    steps, losses = [], []
    for line in Path(path).read_text().splitlines():
        k, v = line.split("\t")
        steps.append(int(k))
        losses.append(float(v))
    return np.array(steps), np.array(losses)
