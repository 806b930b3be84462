"""Reverse-process generation: ancestral (DDPM) sampling, the DDIM step
family, the pseudo linear multistep (PLMS) sampler, and classifier-free
guidance combination.

The multistep sampler follows the published algorithm: a pseudo improved
Euler warmup for the first transfer, then Adams-Bashforth combinations of
the last 2/3/4 noise predictions, each followed by the deterministic DDIM
transfer. Timelines may be strided; the indices t+1, t+2, ... refer to
previously visited timeline entries, not arithmetic neighbours. The final
transfer targets the virtual step t = 0 where alpha_bar is 1, so with
sigma = 0 it returns the denoised observation exactly.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .diffusion import posterior_mean_from_eps
from .errors import ConfigError
from .numerics import RngStream, Tensor, require_finite, require_same_shape
from .schedule import NoiseSchedule, SamplingTimeline

SAMPLER_KINDS = ("ddpm", "ddim", "plms")

# Inference defaults reported for the full-scale model.
DEFAULT_ETA = 1.0
DEFAULT_STEPS = 200
DEFAULT_GUIDANCE_SCALE = 5.0


@dataclass(frozen=True)
class SamplingPlan:
    """Everything a sampling run depends on, fixed up front."""

    timeline: SamplingTimeline
    kind: str
    shape: tuple[int, ...]
    seed: int
    batch: int = 1
    eta: float = DEFAULT_ETA
    guidance_scale: float = DEFAULT_GUIDANCE_SCALE

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigError(f"unknown sampler kind {self.kind!r}; expected one of {SAMPLER_KINDS}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if self.guidance_scale < 0.0:
            raise ConfigError("guidance_scale must be >= 0")
        if int(self.batch) < 1:
            raise ConfigError("batch must be a positive integer")
        shape = tuple(int(s) for s in self.shape)
        if len(shape) == 0 or any(s < 1 for s in shape):
            raise ConfigError(f"invalid sample shape {shape}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "batch", int(self.batch))
        object.__setattr__(self, "seed", int(self.seed))


class EpsHistory:
    """Ring buffer of up to three previous noise predictions, newest first."""

    def __init__(self):
        self._entries: deque = deque(maxlen=3)

    def push(self, eps: Tensor) -> None:
        eps = np.asarray(eps, dtype=np.float64)
        if self._entries:
            require_same_shape(eps, self._entries[0], "history entries")
        self._entries.appendleft(eps)

    def entries(self) -> tuple[Tensor, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


def predict_x0(xt: Tensor, eps: Tensor, t: int, schedule: NoiseSchedule) -> Tensor:
    """Denoised observation: (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)."""
    require_same_shape(xt, eps, "xt and eps")
    t = schedule.check_step(t)
    a = schedule.alpha_bar(t)
    if a <= 0.0:
        raise ValueError("alpha_bar vanished; denoised observation is singular")
    xt = np.asarray(xt, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    return (xt - math.sqrt(1.0 - a) * eps) / math.sqrt(a)


def ddim_sigma(eta: float, t_cur: int, t_next: int, schedule: NoiseSchedule) -> float:
    """Per-transfer noise scale: eta * sqrt((1-abar_n)/(1-abar_c)) * sqrt(1 - abar_c/abar_n).

    eta = 0 gives the deterministic sampler; eta = 1 on adjacent steps
    reproduces the ancestral posterior variance exactly.
    """
    if eta < 0.0:
        raise ValueError("eta must be >= 0")
    t_cur = schedule.check_step(t_cur)
    t_next = schedule.check_step(t_next, low=0)
    if t_next >= t_cur:
        raise ValueError("t_next must be strictly below t_cur")
    ac = schedule.alpha_bar(t_cur)
    an = schedule.alpha_bar(t_next)
    return eta * math.sqrt((1.0 - an) / (1.0 - ac)) * math.sqrt(1.0 - ac / an)


def ddim_step(xt: Tensor, eps: Tensor, t_cur: int, t_next: int, sigma: float,
              schedule: NoiseSchedule, rng: RngStream | None = None
              ) -> tuple[Tensor, Tensor]:
    """One DDIM transfer from t_cur to t_next; returns (x_next, x0_pred).

    No randomness is consumed when sigma = 0.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    x0_pred = predict_x0(xt, eps, t_cur, schedule)
    an = schedule.alpha_bar(schedule.check_step(t_next, low=0))
    rem = 1.0 - an - sigma * sigma
    if rem < -1e-12:
        raise ValueError(f"invalid sigma {sigma}: 1 - abar_next - sigma^2 is negative")
    rem = max(rem, 0.0)
    x_next = math.sqrt(an) * x0_pred + math.sqrt(rem) * np.asarray(eps, dtype=np.float64)
    if sigma > 0.0:
        if rng is None:
            raise ValueError("sigma > 0 requires an RngStream")
        x_next = x_next + sigma * rng.normal(x_next.shape)
    require_finite(x_next, "ddim_step output")
    return x_next, x0_pred


def ddpm_step(predictor, xt: Tensor, t: int, schedule: NoiseSchedule,
              rng: RngStream, condition=None) -> Tensor:
    """Ancestral reverse step from N(posterior mean, posterior variance).

    At t = 1 the posterior variance is zero and the step is the pure mean;
    no randomness is consumed there.
    """
    t = schedule.check_step(t)
    eps = predictor.predict(xt, t, condition)
    require_same_shape(eps, xt, "prediction and xt")
    mean = posterior_mean_from_eps(xt, eps, t, schedule)
    var = schedule.posterior_var(t)
    if var > 0.0:
        mean = mean + math.sqrt(var) * rng.normal(np.shape(mean))
    require_finite(mean, "ddpm_step output")
    return mean


def plms_combine(e_t: Tensor, history) -> Tensor:
    """Adams-Bashforth combination of the newest prediction with history.

    History is ordered newest first; supported depths are 1, 2, and 3:
      1: (3 e_t - e_{t+1}) / 2
      2: (23 e_t - 16 e_{t+1} + 5 e_{t+2}) / 12
      3: (55 e_t - 59 e_{t+1} + 37 e_{t+2} - 9 e_{t+3}) / 24
    """
    entries = history.entries() if isinstance(history, EpsHistory) else tuple(history)
    e_t = np.asarray(e_t, dtype=np.float64)
    for h in entries:
        require_same_shape(e_t, h, "e_t and history entry")
    if len(entries) == 1:
        return (3.0 * e_t - entries[0]) / 2.0
    if len(entries) == 2:
        return (23.0 * e_t - 16.0 * entries[0] + 5.0 * entries[1]) / 12.0
    if len(entries) == 3:
        return (55.0 * e_t - 59.0 * entries[0] + 37.0 * entries[1] - 9.0 * entries[2]) / 24.0
    raise ValueError(f"history depth must be 1..3, got {len(entries)}")


def cfg_combine(eps_uncond: Tensor, eps_cond: Tensor, scale: float) -> Tensor:
    """Guided prediction: eps_uncond + scale * (eps_cond - eps_uncond)."""
    require_same_shape(eps_uncond, eps_cond, "unconditional and conditional eps")
    u = np.asarray(eps_uncond, dtype=np.float64)
    c = np.asarray(eps_cond, dtype=np.float64)
    return u + float(scale) * (c - u)


class _GuidedPredictor:
    """Wraps a predictor so every query returns the guidance-combined noise."""

    def __init__(self, base, scale: float):
        self._base = base
        self._scale = float(scale)

    def predict(self, xt, t, condition=None):
        if condition is None or self._scale == 1.0:
            return self._base.predict(xt, t, condition)
        uncond = self._base.predict(xt, t, None)
        cond = self._base.predict(xt, t, condition)
        return cfg_combine(uncond, cond, self._scale)


def _validate_plan(plan: SamplingPlan, schedule: NoiseSchedule) -> None:
    if max(plan.timeline.steps) > schedule.T:
        raise ConfigError("timeline indices exceed the schedule length")
    if plan.kind == "ddpm" and not plan.timeline.is_identity(schedule.T):
        raise ConfigError("ddpm requires the full identity timeline (T, T-1, ..., 1)")


def plms_sample(predictor, plan: SamplingPlan, schedule: NoiseSchedule,
                condition=None) -> Tensor:
    """Batch generation by the pseudo linear multistep algorithm.

    Transfers are the deterministic (sigma = 0) DDIM map; randomness enters
    only through the initial x_T draw. The warmup re-evaluates the predictor
    at the next timeline entry; when the timeline has a single entry the
    transfer targets t = 0 where no re-evaluation is possible, so the plain
    prediction is used.
    """
    if plan.kind != "plms":
        raise ConfigError("plms_sample requires a plan with kind='plms'")
    _validate_plan(plan, schedule)
    rng = RngStream(plan.seed)
    x = rng.normal((plan.batch, *plan.shape))
    guided = _GuidedPredictor(predictor, plan.guidance_scale)
    history = EpsHistory()
    for t_cur, t_next in plan.timeline.pairs():
        e_t = guided.predict(x, t_cur, condition)
        require_same_shape(e_t, x, "prediction and state")
        if len(history) == 0:
            if t_next >= 1:
                x_probe, _ = ddim_step(x, e_t, t_cur, t_next, 0.0, schedule)
                e_next = guided.predict(x_probe, t_next, condition)
                e_prime = 0.5 * (e_t + e_next)
            else:
                e_prime = e_t
        else:
            e_prime = plms_combine(e_t, history)
        x, _ = ddim_step(x, e_prime, t_cur, t_next, 0.0, schedule)
        history.push(e_t)
    require_finite(x, "plms_sample output")
    return x


def sample(predictor, plan: SamplingPlan, schedule: NoiseSchedule,
           condition=None) -> Tensor:
    """Draw x_T from the plan's seed and run the configured sampler.

    Guidance is applied to every noise prediction when a condition is
    present and guidance_scale differs from 1. Fully deterministic given
    (plan, predictor, condition).
    """
    _validate_plan(plan, schedule)
    if plan.kind == "plms":
        return plms_sample(predictor, plan, schedule, condition)

    rng = RngStream(plan.seed)
    x = rng.normal((plan.batch, *plan.shape))
    guided = _GuidedPredictor(predictor, plan.guidance_scale)
    if plan.kind == "ddpm":
        for t in plan.timeline.steps:
            x = ddpm_step(guided, x, t, schedule, rng, condition)
    else:
        for t_cur, t_next in plan.timeline.pairs():
            e_t = guided.predict(x, t_cur, condition)
            require_same_shape(e_t, x, "prediction and state")
            sigma = ddim_sigma(plan.eta, t_cur, t_next, schedule)
            x, _ = ddim_step(x, e_t, t_cur, t_next, sigma, schedule, rng)
    require_finite(x, "sample output")
    return x
