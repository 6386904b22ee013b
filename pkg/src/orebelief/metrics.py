"""Belief evaluation metrics over (true state, trajectory) test cases.

Task-agnostic: nearest-sample recall (min L2), observation error,
posterior-sampling wall clock.  Task-specific: ore-value error, decision
accuracy, and the Gaussian density of the true ore value under the
belief's (mean, variance) estimate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .conditioning import Trajectory
from .env import EnvConfig, extraction_value
from .io import write_csv

SIGMA2_FLOOR = 1e-6


@dataclass(frozen=True)
class EvalCase:
    """One evaluation item: hidden truth, its trajectory, cached true value."""

    state: np.ndarray
    traj: Trajectory
    truth_value: float

    @staticmethod
    def make(state: np.ndarray, traj: Trajectory, config: EnvConfig) -> "EvalCase":
        for (r, c), v in traj.pairs:
            if abs(state[r, c] - v) > 1e-9:
                raise ValueError(f"trajectory value at {(r, c)} inconsistent with the state")
        return EvalCase(state, traj, extraction_value(state, config))


def min_l2_recall(samples: np.ndarray, truth: np.ndarray) -> float:
    """Distance from the truth to its nearest belief sample (Frobenius)."""
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    diffs = samples - truth[None]
    return float(np.sqrt(np.sum(diffs * diffs, axis=(1, 2))).min())


def observation_error(samples: np.ndarray, traj: Trajectory) -> float:
    """Mean over samples of the L2 gap at the trajectory's cells."""
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    if len(traj) == 0:
        raise ValueError("observation error needs a non-empty trajectory")
    rs = np.array([c[0] for c in traj.cells])
    cs = np.array([c[1] for c in traj.cells])
    z = samples[:, rs, cs]
    gaps = z - traj.values[None, :]
    return float(np.sqrt(np.sum(gaps * gaps, axis=1)).mean())


def ore_value_stats(samples: np.ndarray, config: EnvConfig) -> tuple[float, float]:
    """Mean and unbiased variance of the mining payoff over samples."""
    if len(samples) < 2:
        raise ValueError("variance needs at least two samples")
    vals = np.array([extraction_value(s, config) for s in samples])
    return float(vals.mean()), float(vals.var(ddof=1))


def ore_value_error(mean_value: float, truth_value: float) -> float:
    return abs(truth_value - mean_value)


def sign_convention(x: float) -> int:
    """sign with sign(0) = -1: breakeven mining is treated as abandon."""
    return 1 if x > 0 else -1


def decision_correct(mean_value: float, truth_value: float) -> bool:
    return sign_convention(mean_value) == sign_convention(truth_value)


def ore_value_density(mean_value: float, variance: float, truth_value: float) -> float:
    """Normal density of the truth under the belief's value estimate."""
    if variance < 0:
        raise ValueError("variance must be non-negative")
    var = max(variance, SIGMA2_FLOOR)
    return float(np.exp(-0.5 * (truth_value - mean_value) ** 2 / var) / np.sqrt(2.0 * np.pi * var))


@dataclass
class CaseResult:
    case_id: int
    traj_len: int
    min_l2: float = np.nan
    obs_error: float = np.nan
    value_error: float = np.nan
    decision: float = np.nan
    density: float = np.nan
    wall_clock: float = np.nan
    status: str = "ok"


@dataclass
class MetricReport:
    cases: list[CaseResult] = field(default_factory=list)

    METRICS = ("min_l2", "obs_error", "value_error", "decision", "density", "wall_clock")

    def ok_cases(self) -> list[CaseResult]:
        return [c for c in self.cases if c.status == "ok"]

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """Per-metric (mean, sd) over successful cases."""
        out = {}
        ok = self.ok_cases()
        for m in self.METRICS:
            vals = np.array([getattr(c, m) for c in ok], dtype=np.float64)
            out[m] = (float(vals.mean()), float(vals.std())) if len(vals) else (np.nan, np.nan)
        return out

    def by_traj_len(self) -> dict[int, dict[str, float]]:
        """Per-|traj| bin means, for trend plots."""
        out: dict[int, dict[str, float]] = {}
        ok = self.ok_cases()
        for k in sorted({c.traj_len for c in ok}):
            grp = [c for c in ok if c.traj_len == k]
            out[k] = {m: float(np.mean([getattr(c, m) for c in grp])) for m in self.METRICS}
            out[k]["count"] = len(grp)
        return out

    def write(self, path_cases, path_trend=None) -> None:
        header = ["case_id", "traj_len", *self.METRICS, "status"]
        rows = [[c.case_id, c.traj_len, *(getattr(c, m) for m in self.METRICS), c.status] for c in self.cases]
        agg = self.aggregate()
        rows.append(["mean", "", *(agg[m][0] for m in self.METRICS), "aggregate"])
        rows.append(["sd", "", *(agg[m][1] for m in self.METRICS), "aggregate"])
        write_csv(path_cases, header, rows)
        if path_trend is not None:
            theader = ["traj_len", "count", *self.METRICS]
            trows = [[k, v["count"], *(v[m] for m in self.METRICS)] for k, v in self.by_traj_len().items()]
            write_csv(path_trend, theader, trows)


def evaluate_belief(sampler, cases, config: EnvConfig, n_samples: int = 500, rng: np.random.Generator | None = None) -> MetricReport:
    """Run the full metric suite.

    ``sampler(traj, n, rng) -> (n, H, W)`` is the belief's conditional
    posterior sampler.  Sampling is wall-clocked per case; a sampler
    failure marks the case and evaluation continues.
    """
    if len(cases) == 0:
        raise ValueError("need at least one evaluation case")
    rng = rng if rng is not None else np.random.default_rng(0)
    report = MetricReport()
    for i, case in enumerate(cases):
        res = CaseResult(case_id=i, traj_len=len(case.traj))
        try:
            t0 = time.perf_counter()
            samples = sampler(case.traj, n_samples, rng)
            res.wall_clock = time.perf_counter() - t0
            res.min_l2 = min_l2_recall(samples, case.state)
            if len(case.traj) > 0:
                res.obs_error = observation_error(samples, case.traj)
            mean_v, var_v = ore_value_stats(samples, config)
            res.value_error = ore_value_error(mean_v, case.truth_value)
            res.decision = float(decision_correct(mean_v, case.truth_value))
            res.density = ore_value_density(mean_v, var_v, case.truth_value)
        except Exception as exc:  # belief failure is recorded, not fatal
            res.status = f"error: {type(exc).__name__}"
        report.cases.append(res)
    return report


def make_eval_cases(env_cfg: EnvConfig, n_cases: int, rng: np.random.Generator, traj_lens=None, max_obs: int = 36) -> list[EvalCase]:
    """Seeded (state, trajectory) evaluation set.

    ``traj_lens`` fixes the trajectory length cycle; otherwise lengths
    follow the training distribution capped at ``max_obs``.
    """
    from . import env as E
    from .conditioning import sample_history, sample_history_length

    cases = []
    for i in range(n_cases):
        state = E.sample_initial_state(rng, env_cfg)
        if traj_lens is not None:
            k = int(traj_lens[i % len(traj_lens)])
        else:
            k = sample_history_length(rng, 0.2, max_obs)
        flat = rng.choice(env_cfg.h * env_cfg.w, size=k, replace=False)
        cells = [(int(f // env_cfg.w), int(f % env_cfg.w)) for f in flat]
        traj = Trajectory.from_arrays(cells, [state[c] for c in cells])
        cases.append(EvalCase.make(state, traj, env_cfg))
    return cases
