"""Conditional GAN: structure, losses, gradients, smoke training."""

import numpy as np
import pytest

from orebelief import nn
from orebelief.conditioning import Trajectory
from orebelief.gan import (
    GanConfig,
    GanModel,
    bce_losses,
    gan_losses,
    gan_sample_posterior,
    gradient_penalty,
    train_gan,
    wasserstein_losses,
)
from orebelief.io import Checkpoint, load_checkpoint, save_checkpoint
from orebelief.nn.tensor import Tensor


def tiny_config(**kw):
    defaults = dict(injection="half", n_channels=2, n_z=32, loss="W", h=8, w=8, epochs=1, batch_size=4)
    defaults.update(kw)
    return GanConfig(**defaults)


def batch_inputs(cfg, b=3, seed=0):
    rng = np.random.default_rng(seed)
    real = rng.uniform(size=(b, 1, cfg.h, cfg.w))
    z = rng.standard_normal((b, cfg.n_z))
    cond = np.zeros((b, 2, cfg.h, cfg.w))
    cond[:, 0, 1, 1] = 1.0
    cond[:, 1, 1, 1] = 0.4
    return real, z, cond


def randomize_params(params, rng, scale=0.05):
    """Perturb every parameter (zero-init biases included) so gradient
    checks evaluate at a generic point, away from activation kinks."""
    for p in params:
        p.tensor.data = p.tensor.data + rng.normal(0.0, scale, p.value.shape)


class TestStructure:
    def test_injection_first_has_one_encoder(self):
        model = GanModel(tiny_config(injection="first", h=32, w=32), np.random.default_rng(0))
        assert set(model.encoders) == {1}

    def test_injection_half_on_four_layer_stack(self):
        cfg = tiny_config(injection="half", h=32, w=32)
        assert cfg.n_gen_layers == 4
        model = GanModel(cfg, np.random.default_rng(0))
        assert set(model.encoders) == {1, 2}

    def test_injection_all_has_encoder_per_layer(self):
        cfg = tiny_config(injection="all", h=32, w=32)
        model = GanModel(cfg, np.random.default_rng(0))
        assert set(model.encoders) == {1, 2, 3, 4}

    def test_half_rounds_up_on_odd_layer_count(self):
        cfg = tiny_config(injection="half", h=16, w=16)  # 3 generator layers
        assert cfg.n_gen_layers == 3
        assert cfg.injection_sites() == [1, 2]

    def test_discriminator_input_is_three_channel_stack(self):
        model = GanModel(tiny_config(), np.random.default_rng(0))
        assert model.d_convs[0].weight.value.shape[1] == 3

    def test_out_of_grid_config_rejected(self):
        with pytest.raises(ValueError):
            GanConfig(injection="everywhere")
        with pytest.raises(ValueError):
            GanConfig(loss="hinge")
        with pytest.raises(ValueError):
            GanConfig(loss="W-GP", gp_coeff=0.0)
        with pytest.raises(ValueError):
            GanConfig(n_z=0)

    def test_paper_variant_labels(self):
        assert tiny_config(injection="half", n_channels=2, n_z=32, loss="W").label() == "GAN (Half, 2, 32, W)"
        assert tiny_config(injection="all", n_channels=2, n_z=128, loss="W").label() == "GAN (All, 2, 128, W)"


class TestForward:
    def test_generator_deterministic_and_in_unit_interval(self):
        cfg = tiny_config()
        model = GanModel(cfg, np.random.default_rng(1))
        _, z, cond = batch_inputs(cfg)
        a = model.generator_forward(Tensor(z.astype(np.float32)), Tensor(cond.astype(np.float32)))
        b = model.generator_forward(Tensor(z.astype(np.float32)), Tensor(cond.astype(np.float32)))
        np.testing.assert_array_equal(a.data, b.data)
        assert a.shape == (3, 1, 8, 8)
        assert a.data.min() >= 0.0 and a.data.max() <= 1.0

    def test_ce_mode_discriminator_output_in_unit_interval(self):
        cfg = tiny_config(loss="CE")
        model = GanModel(cfg, np.random.default_rng(2))
        real, _, cond = batch_inputs(cfg)
        score = model.discriminator_forward(Tensor(real.astype(np.float32)), Tensor(cond.astype(np.float32)))
        assert np.all((score.data > 0) & (score.data < 1))

    def test_w_mode_discriminator_output_unbounded(self):
        cfg = tiny_config(loss="W")
        model = GanModel(cfg, np.random.default_rng(2))
        real, _, cond = batch_inputs(cfg)
        score = model.discriminator_forward(Tensor(real.astype(np.float32)), Tensor(cond.astype(np.float32)))
        assert score.shape == (3, 1)  # raw logits, no squashing applied

    def test_condition_shape_mismatch_raises(self):
        cfg = tiny_config()
        model = GanModel(cfg, np.random.default_rng(0))
        with pytest.raises(ValueError):
            model.generator_forward(Tensor(np.zeros((1, cfg.n_z))), Tensor(np.zeros((1, 2, 4, 4))))


class TestLosses:
    def test_ce_boundary_perfect_discriminator_finite(self):
        # confident logits: D(real) ~ 1, D(fake) ~ 0
        real_logits = Tensor(np.full((4, 1), 25.0))
        fake_logits = Tensor(np.full((4, 1), -25.0))
        loss_d, loss_g = bce_losses(real_logits, fake_logits, fake_logits)
        assert np.isfinite(loss_d.item()) and np.isfinite(loss_g.item())
        # generator's saturating loss hits its log(1) = 0 boundary
        assert loss_g.item() == pytest.approx(0.0, abs=1e-9)

    def test_wasserstein_constant_critic_gives_zero(self):
        s = Tensor(np.full((5, 1), 3.7))
        loss_d, _ = wasserstein_losses(s, s, s)
        assert loss_d.item() == pytest.approx(0.0, abs=1e-12)

    def test_gradient_penalty_zero_for_unit_gradient_linear_critic(self):
        v = np.zeros((1, 1, 4, 4))
        v[0, 0, 2, 2] = 1.0  # unit L2 norm direction

        def score_fn(x_hat):
            return (x_hat * Tensor(np.broadcast_to(v, x_hat.shape).copy())).sum(axis=(1, 2, 3))

        pen = gradient_penalty(score_fn, np.random.default_rng(0).uniform(size=(6, 1, 4, 4)))
        assert pen.item() == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("kind", ["CE", "W", "W-GP"])
    def test_losses_finite_on_fresh_model(self, kind):
        cfg = tiny_config(loss=kind)
        model = GanModel(cfg, np.random.default_rng(3))
        real, z, cond = batch_inputs(cfg)
        loss_d, loss_g = gan_losses(model, real, z, cond, rng=np.random.default_rng(0))
        assert np.isfinite(loss_d.item()) and np.isfinite(loss_g.item())

    def test_misaligned_batches_rejected(self):
        cfg = tiny_config()
        model = GanModel(cfg, np.random.default_rng(0))
        real, z, cond = batch_inputs(cfg)
        with pytest.raises(ValueError):
            gan_losses(model, real[:2], z, cond)


class TestLossGradients:
    """Each adversarial objective is checked against the parameters its
    optimizer actually updates (the fake batch is constant under critic
    perturbations, so the detach semantics stay FD-consistent)."""

    @pytest.mark.parametrize("kind", ["CE", "W", "W-GP"])
    def test_critic_loss_gradients(self, kind):
        cfg = tiny_config(loss=kind)
        model = GanModel(cfg, np.random.default_rng(5), dtype=np.float64)
        randomize_params(model.disc_params, np.random.default_rng(20))
        randomize_params(model.gen_params, np.random.default_rng(21))
        real, z, cond = batch_inputs(cfg, b=2, seed=7)

        def loss_fn():
            loss_d, _ = gan_losses(model, real, z, cond, rng=np.random.default_rng(11), parts="d")
            return loss_d

        err = nn.grad_check(loss_fn, model.disc_params, max_coords_per_param=6, rng=np.random.default_rng(0))
        assert err < 1e-4

    @pytest.mark.parametrize("kind", ["CE", "W"])
    def test_generator_loss_gradients(self, kind):
        cfg = tiny_config(loss=kind)
        model = GanModel(cfg, np.random.default_rng(5), dtype=np.float64)
        randomize_params(model.disc_params, np.random.default_rng(22))
        randomize_params(model.gen_params, np.random.default_rng(23))
        real, z, cond = batch_inputs(cfg, b=2, seed=7)

        both = nn.ParamSet()
        both.merge(model.gen_params, "g:")
        both.merge(model.disc_params, "d:")

        def loss_fn():
            _, loss_g = gan_losses(model, real, z, cond, rng=np.random.default_rng(11), parts="g")
            return loss_g

        err = nn.grad_check(loss_fn, both, max_coords_per_param=6, rng=np.random.default_rng(0))
        assert err < 1e-4


class TestTraining:
    def test_smoke_train_and_checkpoint_roundtrip(self, tmp_path):
        cfg = tiny_config(loss="W-GP", epochs=1, batch_size=5)
        rng = np.random.default_rng(0)
        data = rng.uniform(size=(10, 8, 8)).astype(np.float32)
        model, curve = train_gan(data, cfg, rng, max_obs=4)
        assert len(curve) == 1 and np.isfinite(curve[0][1]) and np.isfinite(curve[0][2])
        path = tmp_path / "gan.ckpt"
        save_checkpoint(path, model.to_checkpoint({"epochs": 1}))
        loaded = GanModel.from_checkpoint(load_checkpoint(path))
        _, z, cond = batch_inputs(cfg)
        a = model.generator_forward(Tensor(z.astype(np.float32)), Tensor(cond.astype(np.float32)))
        b = loaded.generator_forward(Tensor(z.astype(np.float32)), Tensor(cond.astype(np.float32)))
        np.testing.assert_array_equal(a.data, b.data)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_gan(np.zeros((0, 8, 8)), tiny_config(), np.random.default_rng(0))


class TestPosteriorSampling:
    def test_reproducible_and_bounded(self):
        cfg = tiny_config()
        model = GanModel(cfg, np.random.default_rng(4))
        traj = Trajectory((((2, 3), 0.6),))
        a = gan_sample_posterior(model, traj, 12, np.random.default_rng(9))
        b = gan_sample_posterior(model, traj, 12, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)
        assert a.shape == (12, 8, 8)
        assert a.min() >= 0.0 and a.max() <= 1.0

    def test_empty_trajectory_samples_prior(self):
        cfg = tiny_config()
        model = GanModel(cfg, np.random.default_rng(4))
        s = gan_sample_posterior(model, Trajectory(), 5, np.random.default_rng(1))
        assert s.shape == (5, 8, 8)

    def test_chunking_does_not_change_samples(self):
        # chunk size only regroups BLAS calls; agreement to float32 ulps
        cfg = tiny_config()
        model = GanModel(cfg, np.random.default_rng(4))
        traj = Trajectory((((1, 1), 0.2),))
        a = gan_sample_posterior(model, traj, 10, np.random.default_rng(3), chunk=3)
        b = gan_sample_posterior(model, traj, 10, np.random.default_rng(3), chunk=100)
        np.testing.assert_allclose(a, b, atol=1e-6)
