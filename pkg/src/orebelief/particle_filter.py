"""Bootstrap particle filter with a Gaussian ABC likelihood.

Observations are noise-free, so the likelihood is replaced by the ABC
kernel exp(-||o - Z(s)||^2 / (2 sigma^2)).  The transition is the
identity, so particles never move; updates reweight and systematically
resample.  Weights are handled in log space; total underflow falls back
to uniform weights and raises a depletion flag instead of aborting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conditioning import Trajectory
from .env import Drill

DEFAULT_PARTICLE_GRID = (1_000, 10_000, 100_000)
DEFAULT_SIGMA_GRID = (0.01, 0.05, 0.1)


def abc_log_weight(states: np.ndarray, cells, values: np.ndarray, sigma: float) -> np.ndarray:
    """Log ABC kernel of stacked states (N, H, W) against observations."""
    if sigma <= 0:
        raise ValueError("sigma_abc must be positive")
    if len(cells) == 0:
        return np.zeros(states.shape[0])
    rs = np.array([c[0] for c in cells])
    cs = np.array([c[1] for c in cells])
    z = states[:, rs, cs]  # (N, k)
    d2 = np.sum((z - np.asarray(values)[None, :]) ** 2, axis=1)
    with np.errstate(divide="ignore"):  # -inf log-weight is the underflow signal
        return -d2 / (2.0 * sigma * sigma)


def abc_weight(state: np.ndarray, traj: Trajectory, sigma: float) -> float:
    """Unnormalized Gaussian ABC weight of one state; 1 for an empty trajectory."""
    lw = abc_log_weight(state[None], traj.cells, traj.values, sigma)
    return float(np.exp(lw[0]))


def systematic_resample(weights: np.ndarray, n: int, offset: float) -> np.ndarray:
    """Indices of n offspring from stratified positions (i + offset) / n."""
    if not (0.0 <= offset < 1.0):
        raise ValueError("offset must lie in [0, 1)")
    positions = (np.arange(n) + offset) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0  # guard rounding
    return np.searchsorted(cum, positions, side="right")


def effective_sample_size(weights: np.ndarray) -> float:
    """1 / sum(w^2) for normalized weights."""
    w = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(w * w))


@dataclass
class ParticleBelief:
    """Equally weighted particle approximation of the posterior over ore maps."""

    particles: np.ndarray  # (N, H, W)
    weights: np.ndarray  # (N,), normalized
    sigma_abc: float
    source_pool: np.ndarray | None = None  # prior reservoir the particles came from
    depleted: bool = False
    last_ess: float = field(default=0.0)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        total = self.weights.sum()
        if not np.isclose(total, 1.0, atol=1e-9):
            raise ValueError(f"weights must be normalized, sum={total}")
        if self.last_ess == 0.0:
            self.last_ess = effective_sample_size(self.weights)

    @staticmethod
    def from_prior(sampler, n: int, sigma_abc: float, rng: np.random.Generator) -> "ParticleBelief":
        """Draw the initial particle set once from the prior sampler."""
        particles = np.stack([sampler(rng) for _ in range(n)]).astype(np.float32)
        weights = np.full(n, 1.0 / n)
        return ParticleBelief(particles, weights, sigma_abc, source_pool=particles)

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    # -- weight updates ------------------------------------------------------------

    def reweighted(self, cells, values) -> "ParticleBelief":
        """Multiply weights by the ABC kernel of the new observation; no resampling."""
        logw = np.log(np.maximum(self.weights, 1e-300)) + abc_log_weight(
            self.particles, cells, values, self.sigma_abc
        )
        m = logw.max()
        depleted = False
        if not np.isfinite(m):
            # every particle underflowed: reset to uniform, flag depletion
            w = np.full(self.n, 1.0 / self.n)
            depleted = True
        else:
            w = np.exp(logw - m)
            w /= w.sum()
        return ParticleBelief(
            self.particles,
            w,
            self.sigma_abc,
            source_pool=self.source_pool,
            depleted=self.depleted or depleted,
            last_ess=effective_sample_size(w),
        )

    def update(self, action, observation, rng: np.random.Generator) -> "ParticleBelief":
        """Bayes step: identity transition, ABC reweight, systematic resample to N."""
        if not isinstance(action, Drill):
            raise ValueError("belief update requires a Drill action")
        rew = self.reweighted(list(action.cells), np.asarray(observation))
        idx = systematic_resample(rew.weights, self.n, float(rng.uniform()))
        return ParticleBelief(
            self.particles[idx],
            np.full(self.n, 1.0 / self.n),
            self.sigma_abc,
            source_pool=self.source_pool,
            depleted=rew.depleted,
            last_ess=rew.last_ess,
        )

    def conditioned(self, traj: Trajectory) -> "ParticleBelief":
        """Joint reweight on a whole trajectory, processed observation by observation.

        Observation-at-a-time processing keeps the cost linear in the
        trajectory length, mirroring sequential filtering.
        """
        belief = self
        for cell, v in traj.pairs:
            belief = belief.reweighted([cell], np.array([v]))
        return belief

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n draws with replacement proportional to weights: (n, H, W)."""
        if n < 1:
            raise ValueError("need at least one sample")
        idx = rng.choice(self.n, size=n, replace=True, p=self.weights)
        return self.particles[idx].astype(np.float64)

    def ess(self) -> float:
        return effective_sample_size(self.weights)
