"""Noise predictors: the exact Gaussian-data oracle and a small trainable
conditional denoiser with sinusoidal time features and one cross-attention
block over condition tokens, plus its training loop.

The trainable network is intentionally tiny: input projection, additive
time features, a residual tanh stage, a residual single-head cross-attention
insertion (identity when unconditioned), a second residual tanh stage, and
an output projection. Gradients are computed in closed form and are checked
against finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Protocol

import numpy as np

from . import checkpoint as ckpt
from .errors import TrainingDivergedError
from .numerics import RngStream, Tensor, require_finite, softmax
from .schedule import NoiseSchedule, linear_schedule

ConditionTokens = np.ndarray  # (n_tokens, token_width), frozen float64


class EpsilonPredictor(Protocol):
    def predict(self, xt: Tensor, t: int, condition: Optional[ConditionTokens] = None) -> Tensor:
        """Noise estimate with xt's shape; deterministic per (xt, t, condition)."""
        ...


def check_condition_tokens(condition: ConditionTokens) -> ConditionTokens:
    cond = np.asarray(condition, dtype=np.float64)
    if cond.ndim != 2 or cond.shape[0] < 1 or cond.shape[1] < 1:
        raise ValueError("condition tokens must be a nonempty (n_tokens, width) array")
    require_finite(cond, "condition tokens")
    return cond


# ---------------------------------------------------------------------------
# Gaussian oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianOracle:
    """Exact posterior-mean noise predictor for data ~ N(mu0, var0 * I).

    E[x0 | xt] = (sqrt(abar_t) var0 xt + (1 - abar_t) mu0) / (abar_t var0 + 1 - abar_t)
    and the implied noise is (xt - sqrt(abar_t) E[x0|xt]) / sqrt(1 - abar_t).
    """

    mu0: Tensor
    var0: float
    schedule: NoiseSchedule

    def __post_init__(self):
        if self.var0 < 0.0:
            raise ValueError("var0 must be >= 0")
        object.__setattr__(self, "mu0", np.asarray(self.mu0, dtype=np.float64))

    def predict(self, xt: Tensor, t: int, condition=None) -> Tensor:
        a = self.schedule.alpha_bar(self.schedule.check_step(t))
        if a >= 1.0:
            raise ValueError("alpha_bar must be < 1 for the oracle to be defined")
        xt = np.asarray(xt, dtype=np.float64)
        x0_mean = (math.sqrt(a) * self.var0 * xt + (1.0 - a) * self.mu0) \
            / (a * self.var0 + 1.0 - a)
        return (xt - math.sqrt(a) * x0_mean) / math.sqrt(1.0 - a)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def time_embedding(t, dim: int) -> Tensor:
    """Sinusoidal features: interleaved (sin(t w_k), cos(t w_k)) pairs with
    w_k geometrically spaced from 1 down to 1/10000."""
    dim = int(dim)
    if dim < 2 or dim % 2 != 0:
        raise ValueError("embedding dim must be an even integer >= 2")
    half = dim // 2
    if half == 1:
        freqs = np.array([1.0])
    else:
        freqs = 10.0 ** (-4.0 * np.arange(half) / (half - 1))
    t_arr = np.asarray(t, dtype=np.float64)
    angles = t_arr[..., None] * freqs
    out = np.empty(angles.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


@dataclass(frozen=True)
class AttentionWeights:
    """Single-head projections: queries from the hidden state, keys and
    values from the condition memory, then an output projection."""

    wq: np.ndarray  # (width, width)
    wk: np.ndarray  # (width, cond_width)
    wv: np.ndarray  # (width, cond_width)
    wo: np.ndarray  # (width, width)


def _attend(h: np.ndarray, memory: np.ndarray, w: AttentionWeights):
    """Batched single-query attention: h (B, W) against memory (B, n, dc).

    Returns the projected attention output (B, W) and a cache for backward.
    """
    dk = w.wq.shape[0]
    q = h @ w.wq.T                                   # (B, W)
    k = np.einsum("bnd,wd->bnw", memory, w.wk)       # (B, n, W)
    v = np.einsum("bnd,wd->bnw", memory, w.wv)       # (B, n, W)
    scores = np.einsum("bw,bnw->bn", q, k) / math.sqrt(dk)
    weights = softmax(scores)                        # rows sum to 1
    z = np.einsum("bn,bnw->bw", weights, v)
    out = z @ w.wo.T
    cache = (h, memory, q, k, v, weights, z)
    return out, cache


def _attend_backward(g_out: np.ndarray, cache, w: AttentionWeights):
    h, memory, q, k, v, weights, z = cache
    dk = w.wq.shape[0]
    d_wo = g_out.T @ z
    dz = g_out @ w.wo
    d_weights = np.einsum("bw,bnw->bn", dz, v)
    dv = np.einsum("bn,bw->bnw", weights, dz)
    ds = (d_weights - (d_weights * weights).sum(axis=1, keepdims=True)) * weights
    ds = ds / math.sqrt(dk)
    dq = np.einsum("bn,bnw->bw", ds, k)
    dkk = np.einsum("bn,bw->bnw", ds, q)
    d_wq = dq.T @ h
    d_wk = np.einsum("bnw,bnd->wd", dkk, memory)
    d_wv = np.einsum("bnw,bnd->wd", dv, memory)
    dh = dq @ w.wq
    return dh, d_wq, d_wk, d_wv, d_wo


def cross_attention(queries: np.ndarray, memory: ConditionTokens,
                    weights: AttentionWeights) -> np.ndarray:
    """Attend a sequence of query tokens (m, W) over condition memory (n, dc)."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2:
        raise ValueError("queries must be a (m, width) token sequence")
    memory = check_condition_tokens(memory)
    m = queries.shape[0]
    mem_b = np.broadcast_to(memory, (m,) + memory.shape)
    out, _ = _attend(queries, mem_b, weights)
    return out


# ---------------------------------------------------------------------------
# Toy denoiser
# ---------------------------------------------------------------------------

_PARAM_ORDER = (
    "w_in", "b_in", "w_time",
    "ff1_w1", "ff1_b1", "ff1_w2", "ff1_b2",
    "wq", "wk", "wv", "wo",
    "ff2_w1", "ff2_b1", "ff2_w2", "ff2_b2",
    "w_out", "b_out",
)


@dataclass(frozen=True)
class ToyDenoiserParams:
    """All weights of the toy conditional denoiser, as named float64 arrays."""

    data_width: int
    width: int
    time_dim: int
    cond_width: int
    w_in: np.ndarray
    b_in: np.ndarray
    w_time: np.ndarray
    ff1_w1: np.ndarray
    ff1_b1: np.ndarray
    ff1_w2: np.ndarray
    ff1_b2: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ff2_w1: np.ndarray
    ff2_b1: np.ndarray
    ff2_w2: np.ndarray
    ff2_b2: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_ORDER}

    @property
    def attention(self) -> AttentionWeights:
        return AttentionWeights(wq=self.wq, wk=self.wk, wv=self.wv, wo=self.wo)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in _PARAM_ORDER])

    def with_vector(self, vec: np.ndarray) -> "ToyDenoiserParams":
        vec = np.asarray(vec, dtype=np.float64)
        updates = {}
        offset = 0
        for name in _PARAM_ORDER:
            cur = getattr(self, name)
            updates[name] = vec[offset:offset + cur.size].reshape(cur.shape).copy()
            offset += cur.size
        if offset != vec.size:
            raise ValueError("parameter vector has the wrong length")
        return replace(self, **updates)

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "ToyDenoiserParams":
        return replace(self, **{k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})


def init_toy_denoiser(rng: RngStream, data_width: int, width: int = 16,
                      time_dim: int = 16, cond_width: int = 16) -> ToyDenoiserParams:
    """Gaussian fan-in initialization of every weight matrix, zero biases."""
    def mat(rows, cols):
        return rng.normal((rows, cols)) / math.sqrt(cols)

    return ToyDenoiserParams(
        data_width=int(data_width), width=int(width),
        time_dim=int(time_dim), cond_width=int(cond_width),
        w_in=mat(width, data_width), b_in=np.zeros(width),
        w_time=mat(width, time_dim),
        ff1_w1=mat(width, width), ff1_b1=np.zeros(width),
        ff1_w2=mat(width, width), ff1_b2=np.zeros(width),
        wq=mat(width, width), wk=mat(width, cond_width),
        wv=mat(width, cond_width), wo=mat(width, width),
        ff2_w1=mat(width, width), ff2_b1=np.zeros(width),
        ff2_w2=mat(width, width), ff2_b2=np.zeros(width),
        w_out=mat(data_width, width), b_out=np.zeros(data_width),
    )


def _forward_pass(params: ToyDenoiserParams, xt: np.ndarray, t,
                  memory: Optional[np.ndarray], cond_mask: Optional[np.ndarray]):
    """Shared forward; returns the prediction and every intermediate needed
    for the closed-form backward pass."""
    x = np.asarray(xt, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.data_width:
        raise ValueError(f"input width {x.shape[-1] if x.ndim else '?'} does not match "
                         f"configured width {params.data_width}")
    batch = x.shape[0]

    temb = time_embedding(np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,)),
                          params.time_dim)
    h1 = x @ params.w_in.T + params.b_in + temb @ params.w_time.T

    z1 = h1 @ params.ff1_w1.T + params.ff1_b1
    a1 = np.tanh(z1)
    h2 = h1 + a1 @ params.ff1_w2.T + params.ff1_b2

    attn_cache = None
    mask = None
    if memory is not None:
        mem = np.asarray(memory, dtype=np.float64)
        if mem.ndim == 2:
            mem = np.broadcast_to(mem, (batch,) + mem.shape)
        if mem.ndim != 3 or mem.shape[0] != batch or mem.shape[2] != params.cond_width:
            raise ValueError("condition memory must be (n, cond_width) or (batch, n, cond_width)")
        attn_out, attn_cache = _attend(h2, mem, params.attention)
        mask = np.ones((batch, 1)) if cond_mask is None \
            else np.asarray(cond_mask, dtype=np.float64).reshape(batch, 1)
        h3 = h2 + mask * attn_out
    else:
        h3 = h2

    z2 = h3 @ params.ff2_w1.T + params.ff2_b1
    a2 = np.tanh(z2)
    h4 = h3 + a2 @ params.ff2_w2.T + params.ff2_b2

    out = h4 @ params.w_out.T + params.b_out
    cache = (x, temb, h1, a1, h2, attn_cache, mask, h3, a2, h4, squeeze)
    return out, cache


def toy_denoiser_forward(params: ToyDenoiserParams, xt: Tensor, t,
                         condition: Optional[ConditionTokens] = None) -> Tensor:
    """Noise prediction with xt's shape; condition may be absent."""
    memory = None if condition is None else check_condition_tokens(condition)
    out, cache = _forward_pass(params, xt, t, memory, None)
    require_finite(out, "denoiser output")
    return out[0] if cache[-1] else out


def _loss_and_grad(params: ToyDenoiserParams, xt: np.ndarray, t,
                   eps: np.ndarray, memory, cond_mask):
    """Mean-squared noise-prediction loss and its gradient for every array."""
    out, cache = _forward_pass(params, xt, t, memory, cond_mask)
    x, temb, h1, a1, h2, attn_cache, mask, h3, a2, h4, _ = cache
    eps = np.asarray(eps, dtype=np.float64).reshape(out.shape)
    diff = out - eps
    loss = float(np.mean(diff * diff))
    g_out = 2.0 * diff / diff.size

    grads = {}
    grads["w_out"] = g_out.T @ h4
    grads["b_out"] = g_out.sum(axis=0)
    gh4 = g_out @ params.w_out

    gh3 = gh4.copy()
    grads["ff2_w2"] = gh4.T @ a2
    grads["ff2_b2"] = gh4.sum(axis=0)
    ga2 = gh4 @ params.ff2_w2
    gz2 = ga2 * (1.0 - a2 * a2)
    grads["ff2_w1"] = gz2.T @ h3
    grads["ff2_b1"] = gz2.sum(axis=0)
    gh3 += gz2 @ params.ff2_w1

    if attn_cache is not None:
        g_attn = mask * gh3
        dh, d_wq, d_wk, d_wv, d_wo = _attend_backward(g_attn, attn_cache, params.attention)
        grads["wq"], grads["wk"], grads["wv"], grads["wo"] = d_wq, d_wk, d_wv, d_wo
        gh2 = gh3 + dh
    else:
        grads["wq"] = np.zeros_like(params.wq)
        grads["wk"] = np.zeros_like(params.wk)
        grads["wv"] = np.zeros_like(params.wv)
        grads["wo"] = np.zeros_like(params.wo)
        gh2 = gh3

    gh1 = gh2.copy()
    grads["ff1_w2"] = gh2.T @ a1
    grads["ff1_b2"] = gh2.sum(axis=0)
    ga1 = gh2 @ params.ff1_w2
    gz1 = ga1 * (1.0 - a1 * a1)
    grads["ff1_w1"] = gz1.T @ h1
    grads["ff1_b1"] = gz1.sum(axis=0)
    gh1 += gz1 @ params.ff1_w1

    grads["w_time"] = gh1.T @ temb
    grads["w_in"] = gh1.T @ x
    grads["b_in"] = gh1.sum(axis=0)
    return loss, grads


class ToyDenoiser:
    """EpsilonPredictor facade over a fixed parameter set."""

    def __init__(self, params: ToyDenoiserParams):
        self.params = params

    def predict(self, xt: Tensor, t: int, condition: Optional[ConditionTokens] = None) -> Tensor:
        return toy_denoiser_forward(self.params, xt, t, condition)


# ---------------------------------------------------------------------------
# Condition encoding and training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelEmbedding:
    """Fixed (untrained) map from label indices to single condition tokens."""

    tokens: np.ndarray  # (n_classes, cond_width)

    @classmethod
    def create(cls, n_classes: int, cond_width: int, seed: int) -> "LabelEmbedding":
        tokens = RngStream(seed).child("label-embedding").normal((n_classes, cond_width))
        tokens.setflags(write=False)
        return cls(tokens=tokens)

    def condition(self, label: int) -> ConditionTokens:
        return self.tokens[int(label)][None, :]

    def memory_for(self, labels: np.ndarray) -> np.ndarray:
        """Per-sample memory (batch, 1, cond_width) for a vector of labels."""
        return self.tokens[np.asarray(labels, dtype=np.int64)][:, None, :]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"  # or "sgd"
    drop_prob: float = 0.0   # condition-drop probability for guidance training

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop probability must lie in [0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


def save_denoiser(path, params: ToyDenoiserParams, schedule: NoiseSchedule,
                  label_embedding: Optional[LabelEmbedding] = None) -> None:
    """Write a denoiser checkpoint: parameters, widths, the linear-schedule
    constants, and the frozen label tokens when training was conditional."""
    arrays = dict(params.arrays())
    arrays["meta"] = np.array([params.data_width, params.width, params.time_dim,
                               params.cond_width], dtype=np.float64)
    arrays["schedule"] = np.array([schedule.T, float(schedule.betas[0]),
                                   float(schedule.betas[-1])])
    if label_embedding is not None:
        arrays["label_tokens"] = label_embedding.tokens
    ckpt.save_arrays(path, ckpt.DENOISER_MAGIC, arrays)


def load_denoiser(path):
    """Returns (params, schedule, label_embedding or None)."""
    arrays = ckpt.load_arrays(path, ckpt.DENOISER_MAGIC)
    meta = arrays.pop("meta")
    sched_consts = arrays.pop("schedule")
    tokens = arrays.pop("label_tokens", None)
    data_width, width, time_dim, cond_width = (int(v) for v in meta)
    template = init_toy_denoiser(RngStream(0), data_width, width=width,
                                 time_dim=time_dim, cond_width=cond_width)
    params = template.with_arrays(arrays)
    schedule = linear_schedule(int(sched_consts[0]), float(sched_consts[1]),
                               float(sched_consts[2]))
    embedding = LabelEmbedding(tokens=tokens) if tokens is not None else None
    return params, schedule, embedding


class _AdamState:
    def __init__(self, params: ToyDenoiserParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.t = 0

    def update(self, arrays: dict, grads: dict, lr: float) -> dict:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            out[k] = arrays[k] - lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def train(params: ToyDenoiserParams, dataset, config: TrainConfig,
          schedule: NoiseSchedule,
          label_embedding: Optional[LabelEmbedding] = None
          ) -> tuple[ToyDenoiserParams, np.ndarray]:
    """Noise-prediction training; returns updated params and the loss curve.

    Each step samples a data batch, per-sample timesteps uniform on {1..T},
    fresh noise, and (when a label embedding is supplied) drops each
    sample's condition with the configured probability so the network also
    learns the unconditional branch.
    """
    rng = RngStream(config.seed)
    rng_data = rng.child("data")
    rng_t = rng.child("timesteps")
    rng_eps = rng.child("noise")
    rng_drop = rng.child("drop")

    abar = schedule.alpha_bars
    adam = _AdamState(params) if config.optimizer == "adam" else None
    losses = np.zeros(config.steps)

    for step in range(config.steps):
        x0, labels = dataset.sample(config.batch_size, rng_data)
        b = x0.shape[0]
        t = rng_t.integers(1, schedule.T, (b,))
        eps = rng_eps.normal(x0.shape)
        a = abar[t - 1][:, None]
        xt = np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps

        if label_embedding is not None and labels is not None:
            memory = label_embedding.memory_for(labels)
            keep = (rng_drop.uniform((b,)) >= config.drop_prob).astype(np.float64)
        else:
            memory, keep = None, None

        loss, grads = _loss_and_grad(params, xt, t, eps, memory, keep)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss became non-finite at step {step}")
        losses[step] = loss

        arrays = params.arrays()
        if adam is not None:
            arrays = adam.update(arrays, grads, config.learning_rate)
        else:
            arrays = {k: arrays[k] - config.learning_rate * grads[k] for k in grads}
        params = params.with_arrays(arrays)

    return params, losses
