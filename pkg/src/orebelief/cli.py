"""Command-line interface: gen-data, train, eval-belief, plan.

Every command is deterministic given (config, seed, --threads 1); CSVs
carry wall-clock columns that are excluded from determinism checks.
Exit codes: 0 success, 2 configuration error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import ddpm as ddpm_mod
from . import env as E
from . import gan as gan_mod
from . import io
from . import metrics as M
from . import plots
from .beliefs import GenerativeBelief, ParticleBeliefAdapter
from .conditioning import Trajectory
from .config import ConfigError, ddpm_config_from, gan_config_from, load_config, parse_model_label, parse_pf_label
from .nn.tensor import NonFiniteError
from .particle_filter import ParticleBelief
from .planner import run_episode

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orebelief", description="Belief representations and VOI planning for mineral exploration")
    p.add_argument("--version", action="version", version=f"orebelief {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="YAML overrides merged onto the preset")
        sp.add_argument("--preset", default="desk", choices=["desk", "paper"], help="base preset")
        sp.add_argument("--seed", type=int, default=None, help="override the command's seed")
        sp.add_argument("--threads", type=int, default=1, help="internal sampling parallelism")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    sp = sub.add_parser("gen-data", help="sample ore maps and write the dataset file")
    common(sp)
    sp.add_argument("--count", type=int, default=None, help="override dataset.count")

    sp = sub.add_parser("train", help="train a generative belief model")
    common(sp)
    sp.add_argument("--variant", default=None, help='model label, e.g. "GAN (Half, 2, 32, W)" or "DDPM (Small, 250)"')

    sp = sub.add_parser("eval-belief", help="run the belief metric suite")
    common(sp)
    sp.add_argument("--belief", default=None, help='belief spec: "PF (1k, 0.05)" or "ckpt:PATH"')

    sp = sub.add_parser("plan", help="run VOI planning episodes for each configured solver")
    common(sp)
    return p


def _load(args):
    cfg = load_config(args.config, preset=args.preset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _build_prior_pool(cfg, out: Path, n: int, seed: int) -> np.ndarray:
    """Prior ore-map reservoir for particle filters; reuses the dataset file."""
    path = out / cfg.dataset["path"]
    if path.exists():
        maps = io.load_ore_maps(path)
        if maps.shape[1:] == (cfg.env.h, cfg.env.w) and len(maps) >= n:
            return maps[:n]
    rng = np.random.default_rng(seed)
    return np.stack([E.sample_initial_state(rng, cfg.env) for _ in range(n)]).astype(np.float32)


def _belief_sampler(cfg, spec: str, out: Path, threads: int, eval_seed: int):
    """Build (label, conditional posterior sampler, belief factory) for a spec."""
    if spec.startswith("ckpt:"):
        ckpt = io.load_checkpoint(spec[5:])
        model = gan_mod.GanModel.from_checkpoint(ckpt) if ckpt.kind == "gan" else ddpm_mod.DdpmModel.from_checkpoint(ckpt)
        if (model.config.h, model.config.w) != (cfg.env.h, cfg.env.w):
            raise ConfigError(f"belief: checkpoint grid {model.config.h} does not match env grid {cfg.env.h}")
        label = model.config.label()

        def sampler(traj, n, rng):
            belief = GenerativeBelief(model, traj, threads=threads)
            return belief.sample(n, rng)

        def factory(rng):
            return GenerativeBelief(model, Trajectory(), threads=threads)

        return label, sampler, factory

    n_particles, sigma = parse_pf_label(spec)
    pool = _build_prior_pool(cfg, out, n_particles, cfg.eval.get("prior_seed", 7))
    label = spec

    def sampler(traj, n, rng):
        prior = ParticleBelief(pool, np.full(len(pool), 1.0 / len(pool)), sigma, source_pool=pool)
        return prior.conditioned(traj).sample(n, rng)

    def factory(rng):
        prior = ParticleBelief(pool, np.full(len(pool), 1.0 / len(pool)), sigma, source_pool=pool)
        return ParticleBeliefAdapter(prior)

    return label, sampler, factory


def cmd_gen_data(args) -> int:
    cfg, out = _load(args)
    seed = args.seed if args.seed is not None else cfg.dataset["seed"]
    count = args.count if args.count is not None else cfg.dataset["count"]
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    maps = np.stack([E.sample_initial_state(rng, cfg.env) for _ in range(count)]).astype(np.float32)
    path = out / cfg.dataset["path"]
    io.save_ore_maps(path, maps)
    values = np.array([E.extraction_value(m, cfg.env) for m in maps])
    viable = float((values > 0).mean())
    io.write_csv(out / "dataset_summary.csv",
                 ["count", "h", "w", "mean_r_mine", "sd_r_mine", "fraction_viable", "seed"],
                 [[count, cfg.env.h, cfg.env.w, values.mean(), values.std(), viable, seed]])
    print(f"wrote {path} ({count} maps, {cfg.env.h}x{cfg.env.w})")
    print(f"mean R_mine = {values.mean():.3f} (sd {values.std():.2f}), fraction viable = {viable:.3f}")
    print(f"elapsed {time.perf_counter() - t0:.1f}s")
    if not args.no_figures:
        plots.plot_map_gallery(maps[:16], out / "dataset_gallery.png", title="sampled ore maps")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, out = _load(args)
    seed = args.seed if args.seed is not None else cfg.train["seed"]
    variant = args.variant if args.variant is not None else cfg.train["variant"]
    kind, kw = parse_model_label(variant)
    ds_path = out / cfg.train.get("dataset", cfg.dataset["path"])
    if not ds_path.exists():
        raise ConfigError(f"train.dataset: file not found: {ds_path} (run gen-data first)")
    dataset = io.load_ore_maps(ds_path)
    if dataset.shape[1:] != (cfg.env.h, cfg.env.w):
        raise ConfigError(f"train.dataset: maps are {dataset.shape[1:]}, env is {(cfg.env.h, cfg.env.w)}")
    rng = np.random.default_rng(seed)
    max_obs = cfg.train.get("max_obs", 36)
    t0 = time.perf_counter()

    def progress(row):
        print(f"epoch {row[0]}: " + ", ".join(f"{v:.4f}" for v in row[1:-1]) + f" [{row[-1]:.1f}s]")

    if kind == "gan":
        model_cfg = gan_config_from(cfg, kw)
        model, curve = gan_mod.train_gan(dataset, model_cfg, rng, max_obs=max_obs, progress=progress)
        curve_header = ["epoch", "loss_d", "loss_g", "wall_clock_s"]
        final_loss = curve[-1][2]
    else:
        model_cfg = ddpm_config_from(cfg, kw)
        model, curve = ddpm_mod.train_ddpm(dataset, model_cfg, rng, max_obs=max_obs, progress=progress)
        curve_header = ["epoch", "loss", "wall_clock_s"]
        final_loss = curve[-1][1]

    meta = {"epochs": model_cfg.epochs, "final_loss": final_loss, "seed": seed,
            "dataset_fingerprint": io.dataset_fingerprint(dataset), "variant": variant}
    stem = f"{kind}_{seed}"
    ckpt_path = out / f"{stem}.ckpt"
    io.save_checkpoint(ckpt_path, model.to_checkpoint(meta))
    io.write_csv(out / f"{stem}_curve.csv", curve_header, curve)
    print(f"wrote {ckpt_path} (final loss {final_loss:.4f}, {time.perf_counter() - t0:.1f}s)")
    if not args.no_figures:
        plots.plot_training_curve(curve, out / f"{stem}_curve.png", kind)
    return EXIT_OK


def cmd_eval_belief(args) -> int:
    cfg, out = _load(args)
    seed = args.seed if args.seed is not None else cfg.eval["seed"]
    spec = args.belief if args.belief is not None else cfg.eval["belief"]
    label, sampler, _ = _belief_sampler(cfg, spec, out, args.threads, seed)
    rng = np.random.default_rng(seed)
    cases = M.make_eval_cases(cfg.env, cfg.eval["n_test"], rng,
                              traj_lens=cfg.eval.get("traj_lens"), max_obs=cfg.eval.get("max_obs", 36))
    report = M.evaluate_belief(sampler, cases, cfg.env, n_samples=cfg.eval["n_samples"], rng=rng)
    safe = label.replace(" ", "").replace("(", "").replace(")", "").replace(",", "_").replace(":", "")
    report.write(out / f"eval_{safe}_cases.csv", out / f"eval_{safe}_trend.csv")
    agg = report.aggregate()
    for m in report.METRICS:
        print(f"{m}: {agg[m][0]:.4f} ({agg[m][1]:.4f})")
    if not args.no_figures:
        plots.plot_metric_trends(report.by_traj_len(), out / f"eval_{safe}_trend.png", label)
    print(f"wrote {out}/eval_{safe}_cases.csv")
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg, out = _load(args)
    seed = args.seed if args.seed is not None else cfg.plan["seed"]
    voi = cfg.voi_config()
    map_rng = np.random.default_rng(seed)
    test_maps = [E.sample_initial_state(map_rng, cfg.env) for _ in range(cfg.plan["n_maps"])]
    rows = []
    per_solver: dict[str, list] = {}
    for spec in cfg.plan["solvers"]:
        label, _, factory = _belief_sampler(cfg, spec, out, args.threads, seed)
        returns = []
        for i, true_state in enumerate(test_maps):
            ep_rng = np.random.default_rng((seed, i))
            belief = factory(ep_rng)
            total, trace = run_episode(cfg.env, belief, voi, true_state, ep_rng)
            n_drills = sum(1 for r in trace.rows if r["kind"] == "drill")
            final = trace.rows[-1].get("action", "")
            truth = E.extraction_value(true_state, cfg.env)
            rows.append([label, i, total, n_drills, final, truth])
            returns.append(total)
            print(f"{label} map {i}: return {total:.2f} ({n_drills} drills, {final}, truth {truth:+.0f})")
        per_solver[label] = returns
        rows.append([label, "mean", float(np.mean(returns)), "", "", ""])
    io.write_csv(out / "planning.csv",
                 ["solver", "episode", "return", "n_drills", "final_action", "truth_value"], rows)
    for label, returns in per_solver.items():
        print(f"{label}: mean return {np.mean(returns):.3f} over {len(returns)} maps")
    if not args.no_figures:
        plots.plot_planning_returns(per_solver, out / "planning_returns.png")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval-belief":
            return cmd_eval_belief(args)
        if args.command == "plan":
            return cmd_plan(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (gan_mod.DivergenceError, ddpm_mod.DivergenceError, NonFiniteError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
