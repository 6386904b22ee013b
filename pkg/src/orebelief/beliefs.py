"""Belief implementations behind the planner's behavioral contract.

A belief supports ``update(action, observation, rng) -> Belief``
(non-destructive: the original stays usable for sibling hypotheticals)
and ``sample(n, rng) -> (n, H, W)``.  ``sample_updated`` batches
posterior sampling across many hypothetical updates, which the
generative beliefs exploit with a single large model call.
"""

from __future__ import annotations

import numpy as np

from .conditioning import Trajectory
from .ddpm import DdpmModel, ddpm_sample_posterior, ddpm_sample_posterior_multi
from .env import Drill
from .gan import GanModel, gan_sample_posterior, gan_sample_posterior_multi
from .particle_filter import ParticleBelief


def default_sample_updated(belief, updates, m_each: int, rng: np.random.Generator) -> np.ndarray:
    """Fallback: update and sample per hypothetical, in index order."""
    out = []
    for action, obs in updates:
        post = belief.update(action, obs, rng)
        out.append(post.sample(m_each, rng))
    return np.stack(out)


class GenerativeBelief:
    """Trajectory-conditioned belief over ore maps backed by a cDGM.

    Updates just extend the trajectory; sampling conditions the model on
    the whole history at constant cost per sample.
    """

    def __init__(self, model, traj: Trajectory = Trajectory(), chunk: int = 256, threads: int = 1):
        self.model = model
        self.traj = traj
        self.chunk = chunk
        self.threads = threads
        if isinstance(model, GanModel):
            self._one = gan_sample_posterior
            self._multi = gan_sample_posterior_multi
        elif isinstance(model, DdpmModel):
            self._one = ddpm_sample_posterior
            self._multi = ddpm_sample_posterior_multi
        else:
            raise TypeError(f"unsupported model type {type(model).__name__}")

    def update(self, action, observation, rng=None) -> "GenerativeBelief":
        if not isinstance(action, Drill):
            raise ValueError("belief update requires a Drill action")
        traj = self.traj.extended(action.cells, np.asarray(observation))
        return GenerativeBelief(self.model, traj, self.chunk, self.threads)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self._one(self.model, self.traj, n, rng, chunk=self.chunk, threads=self.threads)

    def sample_updated(self, updates, m_each: int, rng: np.random.Generator) -> np.ndarray:
        trajs = [self.traj.extended(a.cells, np.asarray(o)) for a, o in updates]
        return self._multi(self.model, trajs, m_each, rng, chunk=self.chunk, threads=self.threads)


class ParticleBeliefAdapter:
    """ParticleBelief with the planner's batched-hypothetical hook."""

    def __init__(self, pf: ParticleBelief):
        self.pf = pf

    def update(self, action, observation, rng) -> "ParticleBeliefAdapter":
        return ParticleBeliefAdapter(self.pf.update(action, observation, rng))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.pf.sample(n, rng)

    def sample_updated(self, updates, m_each: int, rng: np.random.Generator) -> np.ndarray:
        out = []
        for action, obs in updates:
            # reweight + direct weighted draw; resampling then drawing
            # with replacement is distributionally the same here
            rew = self.pf.reweighted(list(action.cells), np.asarray(obs))
            out.append(rew.sample(m_each, rng))
        return np.stack(out)

    @property
    def traj(self):
        return None


class DiscreteBelief:
    """Exact finite-support belief with noise-free Bayes updates.

    The enumeration oracle for planner tests: states inconsistent with
    an observation (beyond ``tol``) get zero posterior mass.
    """

    def __init__(self, states: np.ndarray, probs: np.ndarray, tol: float = 1e-9):
        self.states = np.asarray(states, dtype=np.float64)
        probs = np.asarray(probs, dtype=np.float64)
        if len(self.states) != len(probs):
            raise ValueError("states/probs length mismatch")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")
        self.probs = probs / probs.sum()
        self.tol = tol

    def support(self):
        keep = self.probs > 0
        return self.states[keep], self.probs[keep]

    def update(self, action, observation, rng=None) -> "DiscreteBelief":
        obs = np.asarray(observation, dtype=np.float64)
        rs = np.array([c[0] for c in action.cells])
        cs = np.array([c[1] for c in action.cells])
        z = self.states[:, rs, cs]
        consistent = np.all(np.abs(z - obs[None, :]) <= self.tol, axis=1)
        new = self.probs * consistent
        total = new.sum()
        if total <= 0:
            raise ValueError("observation inconsistent with every support state")
        return DiscreteBelief(self.states, new / total, self.tol)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self.states), size=n, replace=True, p=self.probs)
        return self.states[idx]

    def sample_updated(self, updates, m_each: int, rng: np.random.Generator) -> np.ndarray:
        return default_sample_updated(self, updates, m_each, rng)
