"""Experiment configuration: presets, YAML loading, schema validation.

Two presets ship with the package: "paper" mirrors the reference
problem scale (32x32 grid, 90k training maps, 50 epochs, N_test 1300),
"desk" is a minutes-scale variant (16x16 grid, small models) used by
the acceptance suite.  A user YAML file is merged section-by-section on
top of a preset.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .ddpm import SIZES, T_RANGE, DdpmConfig
from .env import EnvConfig
from .gan import CHANNEL_GRID, INJECTIONS, LATENT_GRID, LOSSES, GanConfig
from .particle_filter import DEFAULT_PARTICLE_GRID, DEFAULT_SIGMA_GRID
from .planner import VoiConfig


class ConfigError(ValueError):
    """Invalid or out-of-grid configuration; the message names the field."""


PRESETS: dict[str, dict] = {
    "paper": {
        "env": {"h": 32, "w": 32, "radius_mean_frac": 0.183, "smooth_sigma": 2.0, "noise_lengthscale": 4.0, "drill_grid": 6},
        "dataset": {"count": 90_000, "seed": 1, "path": "oremaps.bin"},
        "train": {"variant": "DDPM (Large, 500)", "epochs": 50, "batch_size": 64, "seed": 2, "dataset": "oremaps.bin", "max_obs": 36},
        "eval": {"belief": "PF (10k, 0.05)", "n_test": 1300, "n_samples": 500, "seed": 3, "dataset": "oremaps.bin", "traj_lens": None, "prior_particles": 10_000},
        "plan": {
            "solvers": ["PF (10k, 0.05)"],
            "n_maps": 46,
            "seed": 4,
            "prior_particles": 10_000,
            "voi": {"n_states": 50, "m_samples": 10, "n_actions": 50, "min_boreholes": 1, "max_boreholes": 10, "n_decision_samples": 50, "max_steps": 36},
        },
    },
    "desk": {
        "env": {"h": 16, "w": 16, "radius_mean_frac": 0.296, "smooth_sigma": 1.0, "noise_lengthscale": 2.0, "drill_grid": 4},
        "dataset": {"count": 3000, "seed": 1, "path": "oremaps.bin"},
        "train": {"variant": "DDPM (Tiny, 100)", "epochs": 20, "batch_size": 32, "seed": 2, "dataset": "oremaps.bin", "max_obs": 16},
        "eval": {"belief": "PF (1k, 0.05)", "n_test": 100, "n_samples": 128, "seed": 3, "dataset": "oremaps.bin", "traj_lens": None, "prior_particles": 1000},
        "plan": {
            "solvers": ["PF (1k, 0.05)"],
            "n_maps": 20,
            "seed": 4,
            "prior_particles": 1000,
            "voi": {"n_states": 8, "m_samples": 3, "n_actions": 10, "min_boreholes": 1, "max_boreholes": 3, "n_decision_samples": 32, "max_steps": 16},
        },
    },
}


@dataclass
class ExperimentConfig:
    env: EnvConfig
    dataset: dict
    train: dict
    eval: dict
    plan: dict
    raw: dict = field(repr=False, default_factory=dict)

    def voi_config(self) -> VoiConfig:
        return VoiConfig(**self.plan["voi"])


def parse_model_label(label: str):
    """Parse a model label into its config class and kwargs.

    Accepts the reporting style "GAN (Half, 2, 32, W)" / "DDPM (Large, 250)"
    and the compact style "gan:half,2,32,W" / "ddpm:large,250".
    """
    text = label.strip()
    low = text.lower()
    if low.startswith("gan"):
        kind, body = "gan", text[3:]
    elif low.startswith("ddpm"):
        kind, body = "ddpm", text[4:]
    else:
        raise ConfigError(f"variant: cannot parse model label {label!r}")
    body = body.strip().lstrip(":").strip()
    if body.startswith("(") and body.endswith(")"):
        body = body[1:-1]
    parts = [p.strip() for p in body.split(",") if p.strip()]
    if kind == "gan":
        if len(parts) != 4:
            raise ConfigError(f"variant: GAN label needs (injection, N_channels, N_z, loss), got {label!r}")
        inj = {"1st": "first", "first": "first", "half": "half", "all": "all"}.get(parts[0].lower())
        if inj is None:
            raise ConfigError(f"variant.injection: unknown strategy {parts[0]!r}")
        loss = parts[3].upper()
        return "gan", {"injection": inj, "n_channels": int(parts[1]), "n_z": int(parts[2]), "loss": loss}
    if len(parts) != 2:
        raise ConfigError(f"variant: DDPM label needs (size, N_iterations), got {label!r}")
    return "ddpm", {"size": parts[0].lower(), "t_max": int(parts[1])}


def parse_pf_label(label: str) -> tuple[int, float]:
    """Parse "PF (1k, 0.05)" into (n_particles, sigma_abc)."""
    text = label.strip()
    if not text.lower().startswith("pf"):
        raise ConfigError(f"belief: cannot parse particle-filter label {label!r}")
    body = text[2:].strip().lstrip(":").strip()
    if body.startswith("(") and body.endswith(")"):
        body = body[1:-1]
    parts = [p.strip() for p in body.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"belief: PF label needs (N_particles, sigma_ABC), got {label!r}")
    n_text = parts[0].lower().replace("_", "")
    n = int(float(n_text[:-1]) * 1000) if n_text.endswith("k") else int(n_text)
    return n, float(parts[1])


def _validate_model_label(label: str) -> None:
    kind, kw = parse_model_label(label)
    if kind == "gan":
        if kw["injection"] not in INJECTIONS:
            raise ConfigError(f"variant.injection: {kw['injection']!r} not in {INJECTIONS}")
        if kw["n_channels"] not in CHANNEL_GRID:
            raise ConfigError(f"variant.n_channels: {kw['n_channels']} not in grid {CHANNEL_GRID}")
        if kw["n_z"] not in LATENT_GRID:
            raise ConfigError(f"variant.n_z: {kw['n_z']} not in grid {LATENT_GRID}")
        if kw["loss"] not in LOSSES:
            raise ConfigError(f"variant.loss: {kw['loss']!r} not in {LOSSES}")
    else:
        if kw["size"] not in SIZES:
            raise ConfigError(f"variant.size: {kw['size']!r} not in {tuple(SIZES)}")
        if not (T_RANGE[0] <= kw["t_max"] <= T_RANGE[1]):
            raise ConfigError(f"variant.t_max: {kw['t_max']} outside grid {T_RANGE}")


def _validate_belief_label(label: str) -> None:
    if label.startswith("ckpt:"):
        return
    n, sigma = parse_pf_label(label)
    if n not in DEFAULT_PARTICLE_GRID:
        raise ConfigError(f"belief.n_particles: {n} not in grid {DEFAULT_PARTICLE_GRID}")
    if sigma not in DEFAULT_SIGMA_GRID:
        raise ConfigError(f"belief.sigma_abc: {sigma} not in grid {DEFAULT_SIGMA_GRID}")


def build_config(data: dict) -> ExperimentConfig:
    """Validate a merged config dict; raise ConfigError naming bad fields."""
    for section in ("env", "dataset", "train", "eval", "plan"):
        if section not in data:
            raise ConfigError(f"{section}: missing section")
        if not isinstance(data[section], dict):
            raise ConfigError(f"{section}: must be a mapping")
    try:
        env = EnvConfig(**data["env"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"env: {exc}") from exc

    ds = data["dataset"]
    if not isinstance(ds.get("count"), int) or ds["count"] < 1:
        raise ConfigError("dataset.count: must be a positive integer")

    tr = data["train"]
    _validate_model_label(tr["variant"])
    if not isinstance(tr.get("epochs"), int) or tr["epochs"] < 1:
        raise ConfigError("train.epochs: must be a positive integer")
    if not isinstance(tr.get("batch_size"), int) or tr["batch_size"] < 2:
        raise ConfigError("train.batch_size: must be an integer >= 2")

    ev = data["eval"]
    _validate_belief_label(ev["belief"])
    if not isinstance(ev.get("n_test"), int) or ev["n_test"] < 1:
        raise ConfigError("eval.n_test: must be a positive integer")
    if not isinstance(ev.get("n_samples"), int) or ev["n_samples"] < 2:
        raise ConfigError("eval.n_samples: must be an integer >= 2")

    pl = data["plan"]
    if not isinstance(pl.get("solvers"), list) or not pl["solvers"]:
        raise ConfigError("plan.solvers: must be a non-empty list")
    for s in pl["solvers"]:
        _validate_belief_label(s)
    if not isinstance(pl.get("n_maps"), int) or pl["n_maps"] < 1:
        raise ConfigError("plan.n_maps: must be a positive integer")
    try:
        VoiConfig(**pl["voi"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"plan.voi: {exc}") from exc

    return ExperimentConfig(env=env, dataset=ds, train=tr, eval=ev, plan=pl, raw=data)


def load_config(path_or_preset: str | None = None, preset: str = "desk") -> ExperimentConfig:
    """Resolve a preset plus optional YAML override file."""
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r} (have {tuple(PRESETS)})")
    data = copy.deepcopy(PRESETS[preset])
    if path_or_preset is not None:
        p = Path(path_or_preset)
        if not p.exists():
            raise ConfigError(f"config: file not found: {p}")
        with open(p) as f:
            user = yaml.safe_load(f) or {}
        if not isinstance(user, dict):
            raise ConfigError("config: top level must be a mapping")
        for section, content in user.items():
            if section not in data:
                raise ConfigError(f"{section}: unknown section")
            if not isinstance(content, dict):
                raise ConfigError(f"{section}: must be a mapping")
            for key, value in content.items():
                if key == "voi" and isinstance(value, dict):
                    data[section]["voi"].update(value)
                else:
                    data[section][key] = value
    return build_config(data)


def gan_config_from(cfg: ExperimentConfig, kw: dict) -> GanConfig:
    tr = cfg.train
    return GanConfig(h=cfg.env.h, w=cfg.env.w, epochs=tr["epochs"], batch_size=tr["batch_size"],
                     lr=tr.get("lr", 4e-4), **kw)


def ddpm_config_from(cfg: ExperimentConfig, kw: dict) -> DdpmConfig:
    tr = cfg.train
    return DdpmConfig(h=cfg.env.h, w=cfg.env.w, epochs=tr["epochs"], batch_size=tr["batch_size"],
                      lr=tr.get("lr", 2e-4), **kw)
