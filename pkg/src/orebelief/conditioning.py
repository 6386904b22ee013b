"""Action-observation histories and their 2-channel tensor encoding.

A trajectory is an ordered set of (cell, observed value) pairs.  Its
condition tensor has a one-hot mask channel marking observed cells and
a value channel holding the observations (zero elsewhere), so encoding
is lossless and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Trajectory:
    """Drilled cells with their exact observed values."""

    pairs: tuple[tuple[tuple[int, int], float], ...] = ()

    def __post_init__(self):
        cells = [cell for cell, _ in self.pairs]
        if len(set(cells)) != len(cells):
            raise ValueError("trajectory repeats a cell")
        for cell, v in self.pairs:
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"observed value {v} outside [0, 1] at cell {cell}")

    def __len__(self):
        return len(self.pairs)

    @property
    def cells(self) -> list[tuple[int, int]]:
        return [cell for cell, _ in self.pairs]

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.pairs], dtype=np.float64)

    def extended(self, cells, values) -> "Trajectory":
        new = tuple((tuple(map(int, c)), float(v)) for c, v in zip(cells, values))
        return Trajectory(self.pairs + new)

    @staticmethod
    def from_arrays(cells, values) -> "Trajectory":
        return Trajectory(tuple((tuple(map(int, c)), float(v)) for c, v in zip(cells, values)))


def encode_condition(traj: Trajectory, h: int, w: int) -> np.ndarray:
    """2 x H x W tensor: channel 0 observation mask, channel 1 observed values."""
    out = np.zeros((2, h, w), dtype=np.float64)
    for (r, c), v in traj.pairs:
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"cell {(r, c)} outside {h}x{w} grid")
        out[0, r, c] = 1.0
        out[1, r, c] = v
    return out


def decode_condition(cond: np.ndarray) -> Trajectory:
    """Recover the (cell, value) set from a condition tensor."""
    mask, values = cond[0], cond[1]
    rs, cs = np.nonzero(mask)
    pairs = tuple(((int(r), int(c)), float(values[r, c])) for r, c in zip(rs, cs))
    return Trajectory(pairs)


def sample_history_length(rng: np.random.Generator, lam: float, max_obs: int) -> int:
    """N_a = min(max_obs, round(1 + Exp(lam))), the training history length."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    if max_obs < 1:
        raise ValueError("max_obs must be at least 1")
    n = int(round(1.0 + rng.exponential(1.0 / lam)))
    return min(max(n, 1), max_obs)


def sample_history(state: np.ndarray, rng: np.random.Generator, lam: float = 0.2, max_obs: int = 36) -> Trajectory:
    """Random training history: distinct uniform cells with exact observations."""
    h, w = state.shape
    n = sample_history_length(rng, lam, max_obs)
    flat = rng.choice(h * w, size=n, replace=False)
    cells = [(int(i // w), int(i % w)) for i in flat]
    return Trajectory(tuple((cell, float(state[cell])) for cell in cells))


def encode_batch(trajs, h: int, w: int) -> np.ndarray:
    """Stack condition tensors for a list of trajectories: (B, 2, H, W)."""
    return np.stack([encode_condition(t, h, w) for t in trajs])
