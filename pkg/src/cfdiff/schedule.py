"""Linear DDPM noise schedule and the closed-form Gaussian quantities built on it.

Timesteps are 1-based throughout: ``t`` ranges over ``1..T`` and array slot
``t - 1`` holds the value for step ``t``. The convention ``alpha_bar_0 = 1``
makes the posterior at ``t = 1`` collapse onto ``x0`` with zero variance.

All image-valued functions accept numpy arrays or torch tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    alpha_bar_prev: np.ndarray = field(repr=False)
    posterior_var: np.ndarray = field(repr=False)
    # coefficients of x0 and x_t in the posterior mean
    posterior_coef_x0: np.ndarray = field(repr=False)
    posterior_coef_xt: np.ndarray = field(repr=False)

    def check_t(self, t: int) -> int:
        if not 1 <= int(t) <= self.T:
            raise RangeError(f"timestep {t} outside [1, {self.T}]")
        return int(t)

    def as_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise RangeError(f"T must be a positive integer, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise RangeError(f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    T = int(T)
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])

    one_minus_ab = 1.0 - alpha_bar
    posterior_var = (1.0 - alpha_bar_prev) / one_minus_ab * beta
    coef_x0 = np.sqrt(alpha_bar_prev) * beta / one_minus_ab
    coef_xt = np.sqrt(alpha) * (1.0 - alpha_bar_prev) / one_minus_ab
    # 1 - (1 - beta_1) is not bit-equal to beta_1 in floating point; pin the
    # analytic values so the t=1 posterior is exactly x0.
    posterior_var[0] = 0.0
    coef_x0[0] = 1.0
    coef_xt[0] = 0.0

    for arr in (beta, alpha, alpha_bar, alpha_bar_prev, posterior_var, coef_x0, coef_xt):
        arr.setflags(write=False)
    return NoiseSchedule(
        T=T,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        alpha_bar_prev=alpha_bar_prev,
        posterior_var=posterior_var,
        posterior_coef_x0=coef_x0,
        posterior_coef_xt=coef_xt,
    )


def _same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{what}: shape {tuple(a.shape)} != {tuple(b.shape)}")


def forward_noise(s: NoiseSchedule, x0, t: int, eps):
    """Sample q(x_t | x_0) with the supplied unit noise ``eps``."""
    t = s.check_t(t)
    _same_shape(x0, eps, "forward_noise")
    ab = s.alpha_bar[t - 1]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def posterior_params(s: NoiseSchedule, x0, xt, t: int):
    """Mean and scalar variance of q(x_{t-1} | x_t, x_0)."""
    t = s.check_t(t)
    _same_shape(x0, xt, "posterior_params")
    mean = float(s.posterior_coef_x0[t - 1]) * x0 + float(s.posterior_coef_xt[t - 1]) * xt
    return mean, float(s.posterior_var[t - 1])


def estimate_x0(s: NoiseSchedule, xt, eps_hat, t: int, clip: bool = False):
    t = s.check_t(t)
    _same_shape(xt, eps_hat, "estimate_x0")
    ab = s.alpha_bar[t - 1]
    x0 = (xt - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)
    if clip:
        x0 = x0.clip(-1.0, 1.0)
    return x0
