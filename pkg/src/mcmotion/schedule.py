"""DDPM noise schedule, forward noising, and ancestral reverse sampling.

Supports both prediction targets (clean sample or injected noise); the
reverse step always routes through the clean-sample estimate so the two
targets share one posterior.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NumericError, ValidationError


class PredictionTarget(Enum):
    PREDICT_X0 = "x0"
    PREDICT_EPS = "eps"

    @classmethod
    def parse(cls, name: str) -> "PredictionTarget":
        for member in cls:
            if member.value == name:
                return member
        raise ValidationError(f"unknown prediction target {name!r}, expected 'x0' or 'eps'")


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def t_diff(self) -> int:
        return self.betas.shape[0]


def linear_beta_schedule(t_diff: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly interpolated betas, endpoints inclusive."""
    if t_diff < 1:
        raise ValidationError("t_diff must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValidationError("need 0 < beta_start <= beta_end < 1")
    if t_diff == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = beta_start + (beta_end - beta_start) * np.arange(t_diff, dtype=np.float64) / (t_diff - 1)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def _check_t(t, sched: NoiseSchedule):
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= sched.t_diff):
        raise IndexError(f"timestep out of range [0, {sched.t_diff})")
    return t


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward marginal x_t = sqrt(a_bar_t) x0 + sqrt(1 - a_bar_t) eps.

    t may be a scalar or a per-sequence array matching x0's leading dim.
    """
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if eps.shape != x0.shape:
        raise ValidationError(f"eps shape {eps.shape} must match x0 shape {x0.shape}")
    t = _check_t(t, sched)
    ab = sched.alpha_bars[t]
    if t.ndim > 0:
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    c0 = np.sqrt(ab).astype(x0.dtype)
    c1 = np.sqrt(1.0 - ab).astype(x0.dtype)
    return c0 * x0 + c1 * eps


def convert_prediction(pred: np.ndarray, x_t: np.ndarray, t, mode: PredictionTarget, sched: NoiseSchedule):
    """Return (x0_hat, eps_hat) from either prediction target."""
    t = _check_t(t, sched)
    ab = sched.alpha_bars[t]
    if np.asarray(t).ndim > 0:
        ab = ab.reshape((-1,) + (1,) * (np.asarray(x_t).ndim - 1))
    if np.any(ab >= 1.0):
        raise NumericError("alpha_bar must stay below 1 to convert predictions")
    sqrt_ab = np.sqrt(ab)
    sqrt_1m = np.sqrt(1.0 - ab)
    if mode is PredictionTarget.PREDICT_X0:
        x0_hat = pred
        eps_hat = (x_t - sqrt_ab * x0_hat) / sqrt_1m
    else:
        eps_hat = pred
        x0_hat = (x_t - sqrt_1m * eps_hat) / sqrt_ab
    return x0_hat, eps_hat


def p_sample_step(model_pred_fn, x_t: np.ndarray, t: int, sched: NoiseSchedule, rng, mode: PredictionTarget) -> np.ndarray:
    """One ancestral reverse step; rng=None disables the posterior noise.

    At t=0 the clean estimate is returned directly.
    """
    t = int(t)
    _check_t(t, sched)
    pred = model_pred_fn(x_t, t)
    x0_hat, _ = convert_prediction(pred, x_t, t, mode, sched)
    if t == 0:
        return x0_hat
    ab_t = sched.alpha_bars[t]
    ab_prev = sched.alpha_bars[t - 1]
    beta_t = sched.betas[t]
    alpha_t = sched.alphas[t]
    coef_x0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_xt = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef_x0 * x0_hat + coef_xt * x_t
    if rng is None:
        return mean
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    noise = rng.standard_normal(x_t.shape).astype(x_t.dtype, copy=False)
    return mean + np.sqrt(var) * noise


def sample_loop(
    model_pred_fn,
    frames: int,
    sched: NoiseSchedule,
    rng,
    mode: PredictionTarget,
    dim: int = 263,
    posterior_noise: bool = True,
    dtype=np.float64,
) -> np.ndarray:
    """Run the full reverse chain from Gaussian noise; returns frames x dim.

    model_pred_fn(x_t, t) supplies the denoiser prediction (conditioning
    is bound by the caller). Deterministic given the rng seed.
    """
    if frames < 1:
        raise ValidationError("frames must be >= 1")
    x = rng.standard_normal((frames, dim)).astype(dtype, copy=False)
    for t in range(sched.t_diff - 1, -1, -1):
        step_rng = rng if (posterior_noise and t > 0) else None
        x = p_sample_step(model_pred_fn, x, t, sched, step_rng, mode)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite values in the reverse chain at t={t}")
    return x
