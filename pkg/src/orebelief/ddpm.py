"""Conditional denoising diffusion model.

Forward noising mixes the clean map with Gaussian noise according to a
cumulative schedule; a small UNet learns to predict the noise from the
noisy map, the step index, and the 2-channel condition tensor, which is
concatenated to the UNet input at every denoising step.

The reverse recurrence has two selectable forms: the "standard"
ancestral update (1/sqrt(alpha_t) scaling, sqrt(beta_t) noise) and a
"literal" variant (1/alpha_t scaling, (1-alpha_t) noise); the standard
form is the default because the literal one drifts numerically over
long chains.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import io
from .conditioning import Trajectory, encode_batch, encode_condition, sample_history
from .nn import AdamHyper, ParamSet, adam_step
from .nn import tensor as T
from .nn.layers import Conv2d, Linear
from .nn.tensor import Tensor, no_grad

SIZES = {"tiny": 8, "small": 16, "medium": 32, "large": 64}
T_RANGE = (100, 1000)
TIME_CHANNELS = 4
TIME_EMB_DIM = 8
RECURRENCES = ("standard", "literal")


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step keep fractions alpha_t and their running product alpha_bar_t."""

    alphas: np.ndarray  # (T,), alphas[t-1] = alpha_t
    alpha_bars: np.ndarray

    def __post_init__(self):
        a = self.alphas
        if np.any(a <= 0) or np.any(a >= 1):
            raise ValueError("alphas must lie strictly inside (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if self.alpha_bars[-1] >= 0.05:
            raise ValueError(f"alpha_bar at T must be < 0.05, got {self.alpha_bars[-1]:.4f}")

    @property
    def t_max(self) -> int:
        return len(self.alphas)

    @staticmethod
    def linear(t_max: int, beta_lo: float = 1e-4, beta_hi: float = 0.02) -> "NoiseSchedule":
        """Linear betas, rescaled by 1000/T so short schedules still destroy signal."""
        scale = 1000.0 / t_max
        betas = np.linspace(beta_lo, beta_hi, t_max) * scale
        alphas = 1.0 - betas
        return NoiseSchedule(alphas, np.cumprod(alphas))


def noising(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if not (1 <= t <= schedule.t_max):
        raise ValueError(f"t={t} outside [1, {schedule.t_max}]")
    ab = schedule.alpha_bars[t - 1]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def invert_noising(x_t: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Recover x0 analytically from x_t when the injected noise is known."""
    ab = schedule.alpha_bars[t - 1]
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def _time_features(t: np.ndarray, t_max: int, dim: int) -> np.ndarray:
    """Sinusoidal features of the normalized step index: (B, dim)."""
    tt = np.asarray(t, dtype=np.float64) / t_max
    half = dim // 2
    freqs = 2.0 ** np.arange(half) * math.pi
    ang = tt[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class _Block:
    """conv + relu with an additive per-channel time bias.

    No normalization here: the predictor needs the raw amplitude of the
    noisy input, which per-sample normalization would erase.
    """

    def __init__(self, params, name, cin, cout, rng, dtype):
        self.conv = Conv2d(params, f"{name}.conv", cin, cout, 3, 1, 1, rng, dtype)
        self.time = Linear(params, f"{name}.time", TIME_EMB_DIM, cout, rng, dtype)

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        hidden = self.conv(x)
        bias = self.time(temb)  # (B, C)
        b, c = bias.shape
        bias4 = T.expand(T.reshape(bias, (b, c, 1, 1)), hidden.shape)
        return T.relu(hidden + bias4)


@dataclass(frozen=True)
class DdpmConfig:
    size: str = "small"
    t_max: int = 250
    lr: float = 2e-4
    epochs: int = 50
    batch_size: int = 64
    h: int = 32
    w: int = 32
    recurrence: str = "standard"

    def __post_init__(self):
        if self.size not in SIZES:
            raise ValueError(f"size must be one of {tuple(SIZES)}, got {self.size!r}")
        if not (T_RANGE[0] <= self.t_max <= T_RANGE[1]):
            raise ValueError(f"t_max must lie in {T_RANGE}, got {self.t_max}")
        if self.recurrence not in RECURRENCES:
            raise ValueError(f"recurrence must be one of {RECURRENCES}")
        if self.h != self.w or self.h % 4:
            raise ValueError("grid must be square with side divisible by 4")

    def label(self) -> str:
        return f"DDPM ({self.size.capitalize()}, {self.t_max})"


class DdpmModel:
    """Three-level UNet noise predictor plus its schedule."""

    def __init__(self, config: DdpmConfig, rng: np.random.Generator, dtype=np.float32, schedule: NoiseSchedule | None = None):
        self.config = config
        self.dtype = dtype
        self.schedule = schedule if schedule is not None else NoiseSchedule.linear(config.t_max)
        w = SIZES[config.size]
        p = self.params = ParamSet()
        cin = 1 + 2 + TIME_CHANNELS  # noisy map, condition, broadcast time features
        self.enc1 = _Block(p, "enc1", cin, w, rng, dtype)
        self.down1 = Conv2d(p, "down1.conv", w, 2 * w, 3, 2, 1, rng, dtype)
        self.enc2 = _Block(p, "enc2", 2 * w, 2 * w, rng, dtype)
        self.down2 = Conv2d(p, "down2.conv", 2 * w, 4 * w, 3, 2, 1, rng, dtype)
        self.mid = _Block(p, "mid", 4 * w, 4 * w, rng, dtype)
        self.up2 = _Block(p, "up2", 4 * w + 2 * w, 2 * w, rng, dtype)
        self.up1 = _Block(p, "up1", 2 * w + w, w, rng, dtype)
        self.head = Conv2d(p, "head", w, 1, 3, 1, 1, rng, dtype)
        # direct linear path from the noisy input: the optimal predictor is
        # close to a scaled copy of x_t, which convs + relus represent poorly
        self.skip = Conv2d(p, "skip", 1, 1, 1, 1, 0, rng, dtype)

    def predict_noise(self, x_t: Tensor, t: np.ndarray, c: Tensor) -> Tensor:
        """UNet forward: (B,1,H,W) noisy maps + per-item steps + conditions."""
        x_t, c = Tensor.of(x_t), Tensor.of(c)
        b = x_t.shape[0]
        if c.shape != (b, 2, self.config.h, self.config.w):
            raise ValueError(f"condition shape {c.shape} mismatch")
        feats = _time_features(np.broadcast_to(np.asarray(t), (b,)), self.schedule.t_max, TIME_EMB_DIM)
        temb = Tensor(feats.astype(self.dtype))
        tchan = np.broadcast_to(
            feats[:, :TIME_CHANNELS, None, None], (b, TIME_CHANNELS, self.config.h, self.config.w)
        ).astype(self.dtype)
        stack = T.concat([x_t, c, Tensor(np.ascontiguousarray(tchan))], axis=1)

        h1 = self.enc1(stack, temb)
        h2 = self.enc2(T.leaky_relu(self.down1(h1), 0.2), temb)
        h3 = self.mid(T.leaky_relu(self.down2(h2), 0.2), temb)
        u2 = self.up2(T.concat([T.upsample_nearest(h3, 2), h2], axis=1), temb)
        u1 = self.up1(T.concat([T.upsample_nearest(u2, 2), h1], axis=1), temb)
        return self.head(u1) + self.skip(x_t)

    # -- persistence ------------------------------------------------------------

    def to_checkpoint(self, meta: dict | None = None) -> io.Checkpoint:
        cfg = {k: getattr(self.config, k) for k in DdpmConfig.__dataclass_fields__}
        return io.Checkpoint("ddpm", cfg, dict(self.params.arrays()), meta or {})

    @staticmethod
    def from_checkpoint(ckpt: io.Checkpoint) -> "DdpmModel":
        if ckpt.kind != "ddpm":
            raise ValueError(f"checkpoint kind {ckpt.kind!r} is not a DDPM")
        config = DdpmConfig(**ckpt.config)
        dtype = next(iter(ckpt.arrays.values())).dtype
        model = DdpmModel(config, np.random.default_rng(0), dtype=dtype)
        model.params.load_arrays(ckpt.arrays)
        return model


def ddpm_loss(model: DdpmModel, x0: np.ndarray, cond: np.ndarray, rng: np.random.Generator, noise_fn=None):
    """Mean over the batch of the summed squared noise-prediction error.

    Steps are drawn uniformly from [1, T] and noise from N(0, I) per item;
    ``noise_fn`` may override the noise predictor for oracle tests.
    """
    if x0.shape[0] != cond.shape[0]:
        raise ValueError("batch/condition mismatch")
    b = x0.shape[0]
    sched = model.schedule
    t = rng.integers(1, sched.t_max + 1, size=b)
    eps = rng.standard_normal(x0.shape)
    ab = sched.alpha_bars[t - 1][:, None, None, None]
    x_t = np.sqrt(ab) * (2.0 * x0 - 1.0) + np.sqrt(1.0 - ab) * eps  # diffusion runs in [-1, 1]
    predict = noise_fn if noise_fn is not None else model.predict_noise
    pred = predict(Tensor(x_t.astype(model.dtype)), t, Tensor(cond.astype(model.dtype)))
    diff = pred - Tensor(eps.astype(model.dtype))
    return ((diff * diff).sum(axis=(1, 2, 3))).mean()


def denoise_step(model: DdpmModel, x_t: np.ndarray, t: int, cond: np.ndarray, rng: np.random.Generator | None, noise: np.ndarray | None = None) -> np.ndarray:
    """One reverse-recurrence step on a batch; deterministic at t = 1."""
    sched = model.schedule
    if not (1 <= t <= sched.t_max):
        raise ValueError(f"t={t} outside [1, {sched.t_max}]")
    a_t = sched.alphas[t - 1]
    ab_t = sched.alpha_bars[t - 1]
    with no_grad():
        u = model.predict_noise(Tensor(x_t.astype(model.dtype)), np.full(x_t.shape[0], t), Tensor(cond.astype(model.dtype))).data.astype(np.float64)
    mean_core = x_t - (1.0 - a_t) / np.sqrt(1.0 - ab_t) * u
    if t > 1:
        eps = noise if noise is not None else rng.standard_normal(x_t.shape)
    else:
        eps = 0.0
    if model.config.recurrence == "literal":
        return mean_core / a_t + (1.0 - a_t) * eps
    return mean_core / np.sqrt(a_t) + np.sqrt(1.0 - a_t) * eps


def ddpm_sample_posterior(model: DdpmModel, traj: Trajectory, n: int, rng: np.random.Generator, chunk: int = 256, threads: int = 1) -> np.ndarray:
    """n reverse chains from pure noise, condition re-applied at every step."""
    cfg = model.config
    cond1 = encode_condition(traj, cfg.h, cfg.w)
    cond = np.ascontiguousarray(np.broadcast_to(cond1, (n, 2, cfg.h, cfg.w)))
    return _run_chains(model, cond, rng, chunk, threads)


def ddpm_sample_posterior_multi(model: DdpmModel, trajs, m_each: int, rng: np.random.Generator, chunk: int = 256, threads: int = 1) -> np.ndarray:
    """m_each chains per trajectory, batched together: (len(trajs), m, H, W)."""
    cfg = model.config
    cond = np.repeat(encode_batch(trajs, cfg.h, cfg.w), m_each, axis=0)
    flat = _run_chains(model, cond, rng, chunk, threads)
    return flat.reshape(len(trajs), m_each, cfg.h, cfg.w)


def _run_chains(model: DdpmModel, cond: np.ndarray, rng: np.random.Generator, chunk: int, threads: int = 1) -> np.ndarray:
    from .parallel import map_chunks

    n = cond.shape[0]
    cfg = model.config
    x = rng.standard_normal((n, 1, cfg.h, cfg.w))
    for t in range(model.schedule.t_max, 0, -1):
        # noise for the whole batch is drawn up front so chunking cannot
        # change the sample stream
        noise = rng.standard_normal(x.shape) if t > 1 else None
        parts = map_chunks(
            lambda s, e: denoise_step(model, x[s:e], t, cond[s:e], None, noise=None if t == 1 else noise[s:e]),
            n, chunk, threads,
        )
        x = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
    return np.clip((x[:, 0] + 1.0) / 2.0, 0.0, 1.0)  # back from the [-1, 1] diffusion space


def train_ddpm(dataset: np.ndarray, config: DdpmConfig, rng: np.random.Generator, max_obs: int = 36, progress=None, ema_decay: float = 0.995):
    """Adam on the noise-prediction loss with fresh per-batch histories.

    The returned model carries a bias-corrected exponential moving
    average of the weights, which samples noticeably better than the
    raw final iterate.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    model = DdpmModel(config, rng)
    hyper = AdamHyper(lr=config.lr, beta1=0.9, beta2=0.999)
    n = len(dataset)
    curve = []
    ema = {name: np.zeros_like(arr) for name, arr in model.params.arrays().items()}
    steps = 0
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = dataset[idx].astype(np.float64)
            trajs = [sample_history(m, rng, max_obs=max_obs) for m in batch]
            cond = encode_batch(trajs, config.h, config.w)
            loss = ddpm_loss(model, batch[:, None], cond, rng)
            val = loss.item()
            if not np.isfinite(val):
                raise DivergenceError(f"non-finite DDPM loss at epoch {epoch}")
            model.params.zero_grad()
            loss.backward()
            adam_step(model.params, hyper)
            steps += 1
            for name, p in zip(ema, model.params):
                ema[name] *= ema_decay
                ema[name] += (1.0 - ema_decay) * p.value
            losses.append(val)
        curve.append((epoch, float(np.mean(losses)), time.perf_counter() - t0))
        if progress:
            progress(curve[-1])
    correction = 1.0 - ema_decay**steps
    model.params.load_arrays({name: (arr / correction).astype(model.dtype) for name, arr in ema.items()})
    return model, curve
