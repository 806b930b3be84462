"""Forward noising, the tractable Gaussian posterior, and training losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import RngStream, Tensor, require_finite, require_same_shape
from .schedule import NoiseSchedule

_POSTERIOR_FORM_RTOL = 1e-10


@dataclass(frozen=True)
class PosteriorParams:
    """Mean and (scalar, isotropic) variance of q(x_{t-1} | x_t, x_0)."""

    mean: Tensor
    variance: float


def q_sample(x0: Tensor, t: int, eps: Tensor, schedule: NoiseSchedule) -> Tensor:
    """Jump directly to step t: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    require_same_shape(x0, eps, "x0 and eps")
    a = schedule.alpha_bar(schedule.check_step(t))
    out = math.sqrt(a) * np.asarray(x0, dtype=np.float64) \
        + math.sqrt(1.0 - a) * np.asarray(eps, dtype=np.float64)
    require_finite(out, "q_sample output")
    return out


def q_step(x_prev: Tensor, t: int, schedule: NoiseSchedule, rng: RngStream) -> Tensor:
    """Single forward step: draw from N(sqrt(1 - beta_t) * x_prev, beta_t I)."""
    b = schedule.beta(t)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    out = math.sqrt(1.0 - b) * x_prev + math.sqrt(b) * rng.normal(x_prev.shape)
    require_finite(out, "q_step output")
    return out


def posterior_mean_from_eps(xt: Tensor, eps: Tensor, t: int,
                            schedule: NoiseSchedule) -> Tensor:
    """Posterior mean in noise form: (x_t - (1-alpha_t)/sqrt(1-abar_t) * eps) / sqrt(alpha_t)."""
    require_same_shape(xt, eps, "xt and eps")
    a = schedule.alpha(t)
    abar = schedule.alpha_bar(t)
    xt = np.asarray(xt, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    return (xt - (1.0 - a) / math.sqrt(1.0 - abar) * eps) / math.sqrt(a)


def posterior_params(x0: Tensor, xt: Tensor, t: int,
                     schedule: NoiseSchedule) -> PosteriorParams:
    """Parameters of the tractable reverse conditional q(x_{t-1} | x_t, x_0).

    Computes the mean both from (x0, xt) and from the noise implied by the
    pair, and insists the two algebraic forms agree.
    """
    require_same_shape(x0, xt, "x0 and xt")
    t = schedule.check_step(t)
    x0 = np.asarray(x0, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    a = schedule.alpha(t)
    abar = schedule.alpha_bar(t)
    abar_prev = schedule.alpha_bar(t - 1)
    beta = schedule.beta(t)
    coef_x0 = math.sqrt(abar_prev) * beta / (1.0 - abar)
    coef_xt = math.sqrt(a) * (1.0 - abar_prev) / (1.0 - abar)
    mean = coef_x0 * x0 + coef_xt * xt

    eps = (xt - math.sqrt(abar) * x0) / math.sqrt(1.0 - abar)
    mean_eps_form = posterior_mean_from_eps(xt, eps, t, schedule)
    scale = max(float(np.max(np.abs(mean))), 1.0)
    if np.max(np.abs(mean - mean_eps_form)) > _POSTERIOR_FORM_RTOL * scale:
        raise AssertionError("posterior mean forms disagree beyond tolerance")

    require_finite(mean, "posterior mean")
    return PosteriorParams(mean=mean, variance=schedule.posterior_var(t))


def loss_simple(predictor, x0: Tensor, t: int, eps: Tensor,
                schedule: NoiseSchedule, condition=None) -> float:
    """Mean squared noise-prediction error at step t.

    ``x0`` may carry a leading batch axis; the reduction is the mean over
    all elements (and hence over the batch).
    """
    xt = q_sample(x0, t, eps, schedule)
    pred = predictor.predict(xt, t, condition)
    require_same_shape(pred, eps, "prediction and eps")
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(eps, dtype=np.float64)
    loss = float(np.mean(diff * diff))
    if not math.isfinite(loss):
        raise ValueError("loss_simple produced a non-finite value")
    return loss


def latent_loss(predictor, encoder: Callable[[Tensor], Tensor], x0: Tensor,
                t: int, eps: Tensor, schedule: NoiseSchedule,
                condition=None) -> float:
    """loss_simple evaluated on the encoded latent z0 = encoder(x0).

    ``eps`` must already have the latent shape.
    """
    z0 = np.asarray(encoder(x0), dtype=np.float64)
    return loss_simple(predictor, z0, t, eps, schedule, condition)


def kl_same_variance_gaussians(mu_a: Tensor, mu_b: Tensor, variance: float) -> float:
    """KL divergence between isotropic Gaussians sharing one variance:
    ||mu_a - mu_b||^2 / (2 variance)."""
    if not variance > 0.0:
        raise ValueError("variance must be positive")
    require_same_shape(mu_a, mu_b, "means")
    diff = np.asarray(mu_a, dtype=np.float64) - np.asarray(mu_b, dtype=np.float64)
    return float(np.sum(diff * diff) / (2.0 * variance))
