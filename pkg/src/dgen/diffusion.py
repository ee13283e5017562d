"""Pixel-space diffusion: schedule, signal-scaled forward process, samplers.

The forward process is x_t = sqrt(gamma_t) * s * x0 + sqrt(1 - gamma_t) * eps
with a signal scale s in (0, 1] that raises the noise-to-signal ratio
(s < 1 makes every step harder).  Sampler arithmetic runs in float64 on the
schedule; only model calls see the working dtype.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, TrainingError

_MAX_GAMMA_END = 1e-3


def _model_array(out) -> np.ndarray:
    return out.data if isinstance(out, nn.Tensor) else np.asarray(out)


def cosine_gamma(num_steps: int, s: float = 0.008) -> np.ndarray:
    """Squared-cosine signal retention, normalized so gamma_0 = 1; length T+1."""
    if num_steps < 2:
        raise ConfigError(f"schedule needs at least 2 steps, got {num_steps}")
    t = np.arange(num_steps + 1, dtype=np.float64) / num_steps
    f = np.cos((t + s) / (1.0 + s) * np.pi / 2.0) ** 2
    return f / f[0]


@dataclass
class DiffusionSchedule:
    num_steps: int = 1000
    signal_scale: float = 0.5
    gamma: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.gamma is None:
            self.gamma = cosine_gamma(self.num_steps)
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        if len(self.gamma) != self.num_steps + 1:
            raise ConfigError(f"gamma length {len(self.gamma)} != T+1 = {self.num_steps + 1}")
        if not 0.0 < self.signal_scale <= 1.0:
            raise ConfigError(f"signal_scale must be in (0, 1], got {self.signal_scale}")
        if np.any(np.diff(self.gamma) >= 0):
            raise ConfigError("gamma must be strictly decreasing")
        if self.gamma[0] > 1.0 + 1e-12 or self.gamma[-1] <= 0.0:
            raise ConfigError("gamma must stay in (0, 1] with gamma_0 <= 1")
        if self.gamma[-1] >= _MAX_GAMMA_END:
            raise ConfigError(f"gamma_T = {self.gamma[-1]:.2e} is not close enough to 0")

    def check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.num_steps):
            raise ConfigError(f"timestep out of [1, {self.num_steps}]: {t}")
        return t


@dataclass
class NoisyPair:
    x_t: np.ndarray
    epsilon: np.ndarray
    t: np.ndarray


def forward_noise(x0: np.ndarray, t, sched: DiffusionSchedule, rng: np.random.Generator) -> NoisyPair:
    """Draw x_t | x0.  `t` is an int or per-example (N,) array, x0 in [-1, 1]."""
    x0 = np.asarray(x0)
    t = sched.check_t(t)
    gamma = sched.gamma[t]
    if gamma.ndim:  # per-example t on batched x0
        gamma = gamma.reshape((-1,) + (1,) * (x0.ndim - 1))
    eps = rng.standard_normal(x0.shape)
    x_t = np.sqrt(gamma) * sched.signal_scale * x0 + np.sqrt(1.0 - gamma) * eps
    return NoisyPair(x_t, eps, t)


def estimate_x0(x_t: np.ndarray, eps_hat: np.ndarray, t, sched: DiffusionSchedule) -> np.ndarray:
    """Invert the forward process for the model's noise estimate; clipped to [-1, 1]."""
    t = sched.check_t(t)
    gamma = sched.gamma[t]
    if np.ndim(gamma):
        gamma = gamma.reshape((-1,) + (1,) * (np.ndim(x_t) - 1))
    x0 = (np.asarray(x_t, dtype=np.float64) - np.sqrt(1.0 - gamma) * eps_hat) / (np.sqrt(gamma) * sched.signal_scale)
    return np.clip(x0, -1.0, 1.0)


def epsilon_loss(model, x0, condition, task, sched: DiffusionSchedule, rng: np.random.Generator):
    """Noise-prediction objective: mean over batch and pixels of (eps_hat - eps)^2.

    Timesteps are drawn uniformly from [1, T] per example.  Returns
    (loss Tensor, t array) so the harness can log the drawn noise levels.
    """
    x0 = np.asarray(x0)
    n = x0.shape[0]
    t = rng.integers(1, sched.num_steps + 1, size=n)
    pair = forward_noise(x0, t, sched, rng)
    dtype = nn.default_dtype()
    eps_hat = model(pair.x_t.astype(dtype), t, condition, task)
    loss = nn.mse(eps_hat, pair.epsilon.astype(dtype))
    if not np.isfinite(loss.data):
        raise TrainingError(f"non-finite diffusion loss at t={t.tolist()}")
    return loss, t


def regression_loss(model, x0, condition, task):
    """Non-diffusion ablation: one forward pass from zeros, plain MSE to the target."""
    x0 = np.asarray(x0)
    dtype = nn.default_dtype()
    zeros = np.zeros_like(x0, dtype=dtype)
    pred = model(zeros, np.zeros(x0.shape[0], dtype=int), condition, task)
    loss = nn.mse(pred, x0.astype(dtype))
    if not np.isfinite(loss.data):
        raise TrainingError("non-finite regression loss")
    return loss


def regression_predict(model, condition, task, shape) -> np.ndarray:
    """Deterministic single-pass prediction, interpreted directly as x0."""
    dtype = nn.default_dtype()
    zeros = np.zeros(shape, dtype=dtype)
    with nn.no_grad():
        pred = _model_array(model(zeros, np.zeros(shape[0], dtype=int), condition, task))
    return np.clip(pred.astype(np.float64), -1.0, 1.0)


def sampling_timesteps(num_steps: int, steps: int) -> np.ndarray:
    """Evenly spaced descending subsequence T = t_0 > t_1 > ... > t_steps = 0."""
    if steps <= 0:
        raise ConfigError(f"sampler steps must be positive, got {steps}")
    if steps > num_steps:
        raise ConfigError(f"sampler steps {steps} exceed schedule length {num_steps}")
    ts = np.round(np.linspace(num_steps, 0, steps + 1)).astype(int)
    return ts


def to_rgb(x0: np.ndarray) -> np.ndarray:
    """De-normalize [-1, 1] -> 8-bit RGB rasters (N, 3, H, W) uint8."""
    v = (np.clip(x0, -1.0, 1.0) + 1.0) / 2.0 * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def from_rgb(rgb: np.ndarray) -> np.ndarray:
    """8-bit RGB -> [-1, 1] float in the working dtype."""
    return (np.asarray(rgb, dtype=np.float64) / 255.0 * 2.0 - 1.0).astype(nn.default_dtype())


@dataclass
class SampleResult:
    x0: np.ndarray            # (N, 3, H, W) float64 in [-1, 1]
    rgb: np.ndarray           # (N, 3, H, W) uint8
    frames: list              # [(step index, uint8 frame batch)], when traced


def ddim_sample(model, condition, task, sched: DiffusionSchedule, shape, steps: int = 50,
                rng: np.random.Generator = None, trace_stride: int = 0, x_init=None) -> SampleResult:
    """Deterministic sampler: given the initial noise, the trajectory is a
    pure function of the model.  Frames are captured every `trace_stride`
    transitions (plus the initial state and the final output)."""
    ts = sampling_timesteps(sched.num_steps, steps)
    if x_init is None:
        if rng is None:
            raise ConfigError("ddim_sample needs an rng or an explicit x_init")
        x = rng.standard_normal(shape)
    else:
        x = np.asarray(x_init, dtype=np.float64).copy()
        shape = x.shape

    frames = []
    if trace_stride > 0:
        frames.append((0, to_rgb(x)))
    dtype = nn.default_dtype()
    x0_hat = None
    for i in range(steps):
        t, t_next = int(ts[i]), int(ts[i + 1])
        with nn.no_grad():
            eps_hat = _model_array(model(x.astype(dtype), np.full(shape[0], t), condition, task)).astype(np.float64)
        x0_hat = estimate_x0(x, eps_hat, t, sched)
        if t_next > 0:
            g = sched.gamma[t_next]
            x = np.sqrt(g) * sched.signal_scale * x0_hat + np.sqrt(1.0 - g) * eps_hat
        else:
            x = x0_hat
        done = i + 1
        if trace_stride > 0 and (done % trace_stride == 0 or done == steps):
            frames.append((done, to_rgb(x)))
    return SampleResult(x0_hat, to_rgb(x0_hat), frames)


def ddpm_step(x_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int,
              sched: DiffusionSchedule, rng: np.random.Generator,
              noise_scale: float = 1.0) -> np.ndarray:
    """One ancestral step t -> t_prev.

    Parameterized through the estimated x0 with posterior standard deviation
    sigma = sqrt((1-g')/(1-g) * (1 - g/g')); at noise_scale=0 the update
    degenerates exactly to the deterministic DDIM rule.
    """
    if not t_prev < t:
        raise ConfigError(f"ddpm_step needs t_prev < t, got {t_prev} >= {t}")
    g = sched.gamma[t]
    gp = sched.gamma[t_prev]
    var = (1.0 - gp) / (1.0 - g) * (1.0 - g / gp)
    sigma = noise_scale * np.sqrt(max(var, 0.0))
    x0_hat = estimate_x0(x_t, eps_hat, t, sched)
    direction = np.sqrt(max(1.0 - gp - sigma ** 2, 0.0)) * np.asarray(eps_hat, dtype=np.float64)
    out = np.sqrt(gp) * sched.signal_scale * x0_hat + direction
    if sigma > 0.0:
        out = out + sigma * rng.standard_normal(out.shape)
    return out
