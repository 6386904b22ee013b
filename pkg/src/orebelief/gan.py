"""Conditional GAN belief model.

DCGAN-style generator and discriminator.  The condition tensor is
injected into the generator at the first layer (encoded to a vector and
concatenated with the latent), and optionally at later layers (encoded
to a feature map, pooled to the layer's resolution, and channel
concatenated): strategies "first", "half", "all".  The discriminator
sees the sample and the raw condition channel-concatenated at its
input.

Supported losses: binary cross entropy ("CE", with one-sided label
smoothing and logit clamping), Wasserstein ("W"), and Wasserstein with
gradient penalty ("W-GP").
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import io
from .conditioning import Trajectory, encode_batch, encode_condition, sample_history
from .nn import AdamHyper, ParamSet, adam_step
from .nn import tensor as T
from .nn.layers import Conv2d, ConvTranspose2d, InstanceNorm2d, Linear
from .nn.tensor import NonFiniteError, Tensor, grad, no_grad

INJECTIONS = ("first", "half", "all")
LOSSES = ("CE", "W", "W-GP")
CHANNEL_GRID = (2, 8)
LATENT_GRID = (32, 64, 128)

COND_VEC_DIM = 32  # injected alongside z at layer 1
COND_MAP_CHANNELS = 4  # channels appended by each spatial injection site
LOGIT_CLAMP = 30.0


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class GanConfig:
    injection: str = "half"
    n_channels: int = 2
    n_z: int = 32
    loss: str = "W"
    gp_coeff: float = 10.0
    lr: float = 4e-4
    epochs: int = 50
    batch_size: int = 64
    h: int = 32
    w: int = 32
    label_smoothing: float = 0.9

    def __post_init__(self):
        if self.injection not in INJECTIONS:
            raise ValueError(f"injection must be one of {INJECTIONS}, got {self.injection!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.n_z < 1:
            raise ValueError("n_z must be at least 1")
        if self.loss == "W-GP" and self.gp_coeff <= 0:
            raise ValueError("gradient-penalty coefficient must be positive for W-GP")
        if self.h != self.w or self.h < 8 or (self.h & (self.h - 1)):
            raise ValueError("grid must be square with power-of-two side >= 8")

    @property
    def n_gen_layers(self) -> int:
        # projection layer plus one transposed-conv stage per doubling from 4x4
        return 1 + int(math.log2(self.h // 4))

    def injection_sites(self) -> list[int]:
        n = self.n_gen_layers
        if self.injection == "first":
            return [1]
        if self.injection == "half":
            return list(range(1, math.ceil(n / 2) + 1))
        return list(range(1, n + 1))

    def label(self) -> str:
        inj = {"first": "1st", "half": "Half", "all": "All"}[self.injection]
        return f"GAN ({inj}, {self.n_channels}, {self.n_z}, {self.loss})"


class _VectorCondEncoder:
    """Condition -> vector for the latent-concat injection site."""

    def __init__(self, params, name, h, rng, dtype):
        self.c1 = Conv2d(params, f"{name}.c1", 2, 4, 3, 2, 1, rng, dtype)
        self.c2 = Conv2d(params, f"{name}.c2", 4, 8, 3, 2, 1, rng, dtype)
        self.flat_dim = 8 * (h // 4) * (h // 4)
        self.lin = Linear(params, f"{name}.lin", self.flat_dim, COND_VEC_DIM, rng, dtype)

    def __call__(self, c: Tensor) -> Tensor:
        hidden = T.leaky_relu(self.c1(c), 0.2)
        hidden = T.leaky_relu(self.c2(hidden), 0.2)
        flat = T.reshape(hidden, (hidden.shape[0], self.flat_dim))
        return self.lin(flat)


class _MapCondEncoder:
    """Condition -> feature map pooled to one spatial injection site."""

    def __init__(self, params, name, h, site_res, rng, dtype):
        if h % site_res:
            raise ValueError(f"site resolution {site_res} does not divide grid {h}")
        self.factor = h // site_res
        self.c1 = Conv2d(params, f"{name}.c1", 2, 4, 3, 1, 1, rng, dtype)
        self.c2 = Conv2d(params, f"{name}.c2", 4, COND_MAP_CHANNELS, 3, 1, 1, rng, dtype)

    def __call__(self, c: Tensor) -> Tensor:
        hidden = T.leaky_relu(self.c1(c), 0.2)
        feat = self.c2(hidden)
        return T.avg_pool(feat, self.factor) if self.factor > 1 else feat


class GanModel:
    """Generator, discriminator, and per-site condition encoders."""

    def __init__(self, config: GanConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        h = config.h
        n_up = config.n_gen_layers - 1
        widths = [config.n_channels * 2 ** (n_up - i) for i in range(n_up)]  # at 4x4, 8x8, ...
        self.gen_params = ParamSet()
        self.disc_params = ParamSet()
        sites = config.injection_sites()

        # condition encoders live with the generator's parameters
        self.encoders: dict[int, object] = {}
        for site in sites:
            if site == 1:
                self.encoders[1] = _VectorCondEncoder(self.gen_params, "enc1", h, rng, dtype)
            else:
                res = 4 * 2 ** (site - 2)  # input resolution of generator layer `site`
                self.encoders[site] = _MapCondEncoder(self.gen_params, f"enc{site}", h, res, rng, dtype)

        in_dim = config.n_z + (COND_VEC_DIM if 1 in sites else 0)
        self._base_width = widths[0]
        self.project = Linear(self.gen_params, "gen.project", in_dim, widths[0] * 16, rng, dtype)
        self.project_norm = InstanceNorm2d(self.gen_params, "gen.project_norm", widths[0], dtype)
        self.upconvs = []
        self.upnorms = []
        for i in range(n_up):
            cin = widths[i] + (COND_MAP_CHANNELS if (i + 2) in sites else 0)
            cout = widths[i + 1] if i + 1 < n_up else 1
            self.upconvs.append(ConvTranspose2d(self.gen_params, f"gen.up{i}", cin, cout, 4, 2, 1, rng, dtype))
            if i + 1 < n_up:
                self.upnorms.append(InstanceNorm2d(self.gen_params, f"gen.upnorm{i}", cout, dtype))

        # discriminator: strided conv stack on [x | c], no normalization (GP-safe)
        c0 = config.n_channels
        self.d_convs = [
            Conv2d(self.disc_params, "disc.c0", 3, c0, 4, 2, 1, rng, dtype),
            Conv2d(self.disc_params, "disc.c1", c0, 2 * c0, 4, 2, 1, rng, dtype),
            Conv2d(self.disc_params, "disc.c2", 2 * c0, 4 * c0, 4, 2, 1, rng, dtype),
        ]
        final_res = h // 8
        self.d_head = Linear(self.disc_params, "disc.head", 4 * c0 * final_res * final_res, 1, rng, dtype)

    # -- forward passes ---------------------------------------------------------

    def generator_forward(self, z: Tensor, c: Tensor) -> Tensor:
        """(B, n_z) latents and (B, 2, H, W) conditions -> (B, 1, H, W) maps in [0,1]."""
        z, c = Tensor.of(z), Tensor.of(c)
        if c.shape[1:] != (2, self.config.h, self.config.w):
            raise ValueError(f"condition shape {c.shape[1:]} does not match grid {self.config.h}")
        sites = self.config.injection_sites()
        hidden = z
        if 1 in sites:
            hidden = T.concat([z, self.encoders[1](c)], axis=1)
        hidden = self.project(hidden)
        b = hidden.shape[0]
        hidden = T.reshape(hidden, (b, self._base_width, 4, 4))
        hidden = T.relu(self.project_norm(hidden))
        for i, up in enumerate(self.upconvs):
            site = i + 2
            if site in sites:
                feat = self.encoders[site](c)
                hidden = T.concat([hidden, feat], axis=1)
            hidden = up(hidden)
            if i + 1 < len(self.upconvs):
                hidden = T.relu(self.upnorms[i](hidden))
            else:
                hidden = T.sigmoid(hidden)
        return hidden

    def disc_logits(self, x: Tensor, c: Tensor) -> Tensor:
        """Raw critic scores (B, 1) on the channel-stacked [x | c] input."""
        x, c = Tensor.of(x), Tensor.of(c)
        if x.shape[1:] != (1, self.config.h, self.config.w):
            raise ValueError(f"sample shape {x.shape[1:]} does not match grid")
        if c.shape[0] != x.shape[0]:
            raise ValueError("sample/condition batch mismatch")
        hidden = T.concat([x, c], axis=1)  # (B, 3, H, W)
        for conv in self.d_convs:
            hidden = T.leaky_relu(conv(hidden), 0.2)
        flat = T.reshape(hidden, (hidden.shape[0], self.d_head.weight.value.shape[0]))
        return self.d_head(flat)

    def discriminator_forward(self, x: Tensor, c: Tensor) -> Tensor:
        """Critic score: squashed to (0,1) in CE mode, unbounded for W losses."""
        logits = self.disc_logits(x, c)
        return T.sigmoid(logits) if self.config.loss == "CE" else logits

    # -- persistence --------------------------------------------------------------

    def all_arrays(self) -> dict[str, np.ndarray]:
        out = {f"gen/{k}": v for k, v in self.gen_params.arrays().items()}
        out.update({f"disc/{k}": v for k, v in self.disc_params.arrays().items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.gen_params.load_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("gen/")})
        self.disc_params.load_arrays({k[5:]: v for k, v in arrays.items() if k.startswith("disc/")})

    def to_checkpoint(self, meta: dict | None = None) -> io.Checkpoint:
        cfg = {k: getattr(self.config, k) for k in GanConfig.__dataclass_fields__}
        return io.Checkpoint("gan", cfg, self.all_arrays(), meta or {})

    @staticmethod
    def from_checkpoint(ckpt: io.Checkpoint) -> "GanModel":
        if ckpt.kind != "gan":
            raise ValueError(f"checkpoint kind {ckpt.kind!r} is not a GAN")
        config = GanConfig(**ckpt.config)
        dtype = next(iter(ckpt.arrays.values())).dtype
        model = GanModel(config, np.random.default_rng(0), dtype=dtype)
        model.load_arrays(ckpt.arrays)
        return model


# -- losses ------------------------------------------------------------------------


def log_sigmoid(logits: Tensor) -> Tensor:
    return -T.softplus(-T.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP))


def log_one_minus_sigmoid(logits: Tensor) -> Tensor:
    return -T.softplus(T.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP))


def bce_losses(logits_real: Tensor, logits_fake_d: Tensor, logits_fake_g: Tensor, smoothing: float = 0.9):
    """Cross-entropy pair: classifier loss for D, saturating loss for G.

    Both are quantities their optimizers minimize; logits are clamped so
    the boundary regime (confident discriminator) stays finite.
    """
    real_term = smoothing * log_sigmoid(logits_real).mean() + (1 - smoothing) * log_one_minus_sigmoid(logits_real).mean()
    loss_d = -(real_term + log_one_minus_sigmoid(logits_fake_d).mean())
    loss_g = log_one_minus_sigmoid(logits_fake_g).mean()
    return loss_d, loss_g


def wasserstein_losses(scores_real: Tensor, scores_fake_d: Tensor, scores_fake_g: Tensor):
    """Critic loss E[-D(x) + D(G(z))] and generator loss E[-D(G(z))]."""
    return (-scores_real + scores_fake_d).mean(), (-scores_fake_g).mean()


def gradient_penalty(score_fn, x_hat_data: np.ndarray) -> Tensor:
    """E[(||d score / d x_hat||_2 - 1)^2] on the given interpolates."""
    x_hat = Tensor(x_hat_data, requires_grad=True)
    scores = score_fn(x_hat)
    (gx,) = grad(scores.sum(), [x_hat], create_graph=True)
    sq = (gx * gx).sum(axis=tuple(range(1, gx.ndim)))
    norms = (sq + 1e-12) ** 0.5
    return ((norms - 1.0) ** 2).mean()


def gan_losses(model: GanModel, real: np.ndarray, z: np.ndarray, cond: np.ndarray, loss_kind: str | None = None, rng: np.random.Generator | None = None, parts: str = "both"):
    """Adversarial losses as the quantities each optimizer minimizes.

    Returns (loss_d, loss_g); a part not requested comes back as None.
    The discriminator loss sees a detached fake batch; the generator
    loss differentiates through a fresh generator pass.  "W-GP" adds the
    gradient penalty on per-sample interpolates between real and fake.
    """
    kind = loss_kind or model.config.loss
    if kind not in LOSSES:
        raise ValueError(f"unknown loss kind {kind!r}")
    if parts not in ("both", "d", "g"):
        raise ValueError(f"parts must be 'both', 'd', or 'g', got {parts!r}")
    if real.shape[0] != cond.shape[0] or real.shape[0] != z.shape[0]:
        raise ValueError("real/z/condition batches must align")
    dt = model.dtype
    real_arr = np.asarray(real, dtype=dt)
    real_t = Tensor(real_arr)
    cond_t = Tensor(np.asarray(cond, dtype=dt))
    z_t = Tensor(np.asarray(z, dtype=dt))

    fake = model.generator_forward(z_t, cond_t)
    loss_d = loss_g = None

    if parts in ("both", "d"):
        fake_detached = fake.detach()
        logits_real = model.disc_logits(real_t, cond_t)
        logits_fake_d = model.disc_logits(fake_detached, cond_t)
        if kind == "CE":
            loss_d, _ = bce_losses(logits_real, logits_fake_d, logits_fake_d, model.config.label_smoothing)
        else:
            loss_d, _ = wasserstein_losses(logits_real, logits_fake_d, logits_fake_d)
            if kind == "W-GP":
                if rng is None:
                    raise ValueError("W-GP needs an rng for the interpolation draw")
                u = rng.uniform(size=(real.shape[0], 1, 1, 1)).astype(dt)
                x_hat = u * real_arr + (1 - u) * fake_detached.data
                penalty = gradient_penalty(lambda xh: model.disc_logits(xh, cond_t), x_hat)
                loss_d = loss_d + model.config.gp_coeff * penalty

    if parts in ("both", "g"):
        logits_fake_g = model.disc_logits(fake, cond_t)
        if kind == "CE":
            _, loss_g = bce_losses(logits_fake_g, logits_fake_g, logits_fake_g, model.config.label_smoothing)
        else:
            _, loss_g = wasserstein_losses(logits_fake_g, logits_fake_g, logits_fake_g)
    return loss_d, loss_g


# -- training -------------------------------------------------------------------


def train_gan(dataset: np.ndarray, config: GanConfig, rng: np.random.Generator, max_obs: int = 36, progress=None):
    """Alternate critic/generator Adam steps; returns (model, curve rows).

    Histories are drawn freshly for every batch.  Curve rows are
    (epoch, loss_d, loss_g, wall_clock_seconds).
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    model = GanModel(config, rng)
    hyper = AdamHyper(lr=config.lr, beta1=0.5, beta2=0.999)
    n = len(dataset)
    curve = []
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        d_losses, g_losses = [], []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if len(idx) < 2:
                continue
            batch = dataset[idx]
            trajs = [sample_history(m, rng, max_obs=max_obs) for m in batch]
            cond = encode_batch(trajs, config.h, config.w)
            real = batch[:, None, :, :]

            z = rng.standard_normal((len(idx), config.n_z))
            loss_d, _ = gan_losses(model, real, z, cond, rng=rng, parts="d")
            if not np.isfinite(loss_d.item()):
                raise DivergenceError(f"non-finite discriminator loss at epoch {epoch}")
            model.disc_params.zero_grad()
            model.gen_params.zero_grad()
            loss_d.backward()
            adam_step(model.disc_params, hyper)

            z = rng.standard_normal((len(idx), config.n_z))
            _, loss_g = gan_losses(model, real, z, cond, rng=rng, parts="g")
            if not np.isfinite(loss_g.item()):
                raise DivergenceError(f"non-finite generator loss at epoch {epoch}")
            model.gen_params.zero_grad()
            model.disc_params.zero_grad()
            loss_g.backward()
            adam_step(model.gen_params, hyper)

            d_losses.append(loss_d.item())
            g_losses.append(loss_g.item())
        curve.append((epoch, float(np.mean(d_losses)), float(np.mean(g_losses)), time.perf_counter() - t0))
        if progress:
            progress(curve[-1])
    return model, curve


def gan_sample_posterior(model: GanModel, traj: Trajectory, n: int, rng: np.random.Generator, chunk: int = 256, threads: int = 1) -> np.ndarray:
    """n posterior ore maps from one condition; cost independent of |traj|."""
    cfg = model.config
    cond1 = encode_condition(traj, cfg.h, cfg.w)
    conds = np.ascontiguousarray(np.broadcast_to(cond1, (n, 2, cfg.h, cfg.w)))
    return _generate(model, conds, rng, chunk, threads)


def gan_sample_posterior_multi(model: GanModel, trajs, m_each: int, rng: np.random.Generator, chunk: int = 256, threads: int = 1) -> np.ndarray:
    """m_each samples per trajectory in one batched pass: (len(trajs), m, H, W)."""
    cfg = model.config
    conds = np.repeat(encode_batch(trajs, cfg.h, cfg.w), m_each, axis=0)
    flat = _generate(model, conds, rng, chunk, threads)
    return flat.reshape(len(trajs), m_each, cfg.h, cfg.w)


def _generate(model: GanModel, conds: np.ndarray, rng: np.random.Generator, chunk: int, threads: int = 1) -> np.ndarray:
    from .parallel import map_chunks

    cfg = model.config
    n = len(conds)
    z = rng.standard_normal((n, cfg.n_z)).astype(model.dtype)
    conds = conds.astype(model.dtype)
    out = np.empty((n, cfg.h, cfg.w), dtype=np.float64)

    def run(s, e):
        with no_grad():
            maps = model.generator_forward(Tensor(z[s:e]), Tensor(conds[s:e]))
        out[s:e] = maps.data[:, 0].astype(np.float64)

    map_chunks(run, n, chunk, threads)
    return out
