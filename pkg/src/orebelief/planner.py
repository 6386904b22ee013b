"""Value-of-information policy and episode runner.

Each decision scores a sampled set of candidate drill actions: for N
states drawn from the belief, the hypothetical observation updates the
belief, M posterior samples estimate the post-drill mining value, and
the action's score is the drill reward plus max(0, estimated value),
averaged over the N states.  The agent drills while the best candidate
beats deciding immediately, then mines or abandons on the posterior
value sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import env as E
from .env import Abandon, Drill, EnvConfig, Mine, extraction_value


@dataclass(frozen=True)
class VoiConfig:
    n_states: int = 50  # belief samples per decision
    m_samples: int = 10  # posterior samples per hypothetical
    n_actions: int = 50  # candidate drill actions per decision
    min_boreholes: int = 1
    max_boreholes: int = 10
    n_decision_samples: int = 50  # fresh batch behind terminal decisions
    max_steps: int = 36

    def __post_init__(self):
        if self.n_states < 1 or self.m_samples < 1 or self.n_actions < 1:
            raise ValueError("n_states, m_samples, n_actions must be at least 1")
        if not (1 <= self.min_boreholes <= self.max_boreholes):
            raise ValueError("borehole range invalid")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


def sample_action_set(drilled: set, rng: np.random.Generator, config: VoiConfig, env_cfg: EnvConfig) -> list[Drill]:
    """Candidate drill actions over undrilled cells of the drill grid.

    Each action drills k ~ U[min, max] distinct cells, k capped by the
    number of undrilled cells remaining.
    """
    available = [c for c in env_cfg.drill_cells() if c not in drilled]
    if not available:
        raise ValueError("no undrilled cells remain")
    actions = []
    for _ in range(config.n_actions):
        k = int(rng.integers(config.min_boreholes, config.max_boreholes + 1))
        k = min(k, len(available))
        idx = rng.choice(len(available), size=k, replace=False)
        actions.append(Drill(tuple(available[i] for i in idx)))
    return actions


@dataclass
class VoiDiagnostics:
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    actions: list = field(default_factory=list)
    flagged: int = 0  # hypotheticals whose belief update failed


def voi_policy(env_cfg: EnvConfig, belief, config: VoiConfig, rng: np.random.Generator, drilled: set | None = None, actions: list | None = None, enumerate_support: bool = False):
    """Choose the highest-value candidate drill; ties break to the lowest index.

    Returns (action, VoiDiagnostics).  With ``enumerate_support`` the
    sampled expectations are replaced by exact sums over the belief's
    finite support (the belief must expose ``support()``).
    """
    drilled = drilled if drilled is not None else set()
    if actions is None:
        actions = sample_action_set(drilled, rng, config, env_cfg)
    diag = VoiDiagnostics(actions=actions)

    if enumerate_support:
        values = _enumerate_values(env_cfg, belief, actions)
    else:
        values = _sampled_values(env_cfg, belief, actions, config, rng, diag)
    diag.values = values
    best = int(np.argmax(values))
    return actions[best], diag


def batch_extraction_values(maps: np.ndarray, env_cfg: EnvConfig) -> np.ndarray:
    """extraction_value vectorized over leading axes."""
    return env_cfg.r_capex + np.count_nonzero(maps > env_cfg.rho, axis=(-2, -1)).astype(np.float64)


def _sampled_values(env_cfg, belief, actions, config, rng, diag) -> np.ndarray:
    states = belief.sample(config.n_states, rng)
    updates = []
    for action in actions:
        for s in states:
            obs = E.observe(s, action)
            updates.append((action, obs))
    try:
        posts = belief.sample_updated(updates, config.m_samples, rng)
        rbar = batch_extraction_values(posts, env_cfg).mean(axis=1).reshape(len(actions), config.n_states)
        scores = env_cfg.r_drill + np.maximum(0.0, rbar)
    except Exception:
        # per-hypothetical fallback: a failed update scores the drill reward alone
        scores = np.full((len(actions), config.n_states), env_cfg.r_drill)
        for j, (action, obs) in enumerate(updates):
            a_i, s_i = divmod(j, config.n_states)
            try:
                post = belief.update(action, obs, rng)
                vals = batch_extraction_values(post.sample(config.m_samples, rng), env_cfg)
                scores[a_i, s_i] = env_cfg.r_drill + max(0.0, float(np.mean(vals)))
            except Exception:
                diag.flagged += 1
    return scores.mean(axis=1)


def _enumerate_values(env_cfg, belief, actions) -> np.ndarray:
    states, probs = belief.support()
    values = np.zeros(len(actions))
    for a_i, action in enumerate(actions):
        total = 0.0
        for s, p in zip(states, probs):
            obs = E.observe(s, action)
            post = belief.update(action, obs)
            ps, pp = post.support()
            rbar = float(np.sum([pj * extraction_value(sj, env_cfg) for sj, pj in zip(ps, pp)]))
            total += p * (env_cfg.r_drill + max(0.0, rbar))
        values[a_i] = total
    return values


def terminal_decision(belief, env_cfg: EnvConfig, rng: np.random.Generator, n_samples: int = 50):
    """Mine iff the posterior mean mining value is positive."""
    samples = belief.sample(n_samples, rng)
    vals = np.array([extraction_value(s, env_cfg) for s in samples])
    rbar = float(vals.mean())
    action = Mine() if rbar > 0 else Abandon()
    return action, rbar, float(vals.var(ddof=1)) if len(vals) > 1 else 0.0


@dataclass
class EpisodeTrace:
    rows: list = field(default_factory=list)  # structured per-step records

    def log(self, **kw):
        self.rows.append(kw)


def run_episode(env_cfg: EnvConfig, belief, config: VoiConfig, true_state: np.ndarray, rng: np.random.Generator, policy=voi_policy):
    """VOI episode: drill while information pays, then mine or abandon.

    Returns (undiscounted return, EpisodeTrace).  Drill cost is charged
    per action (not per borehole); the trace records borehole counts so
    the alternative costing stays auditable.
    """
    trace = EpisodeTrace()
    total = 0.0
    drilled: set = set()
    for step in range(config.max_steps):
        decision, rbar0, var0 = terminal_decision(belief, env_cfg, rng, config.n_decision_samples)
        baseline = max(0.0, rbar0)
        grid_left = any(c not in drilled for c in env_cfg.drill_cells())
        action, diag = (None, None)
        if grid_left:
            action, diag = policy(env_cfg, belief, config, rng, drilled=drilled)
        if action is None or float(diag.values.max()) <= baseline:
            _, reward, done = E.step(true_state, decision, env_cfg)
            total += reward
            trace.log(step=step, kind="terminal", action=type(decision).__name__, reward=reward,
                      rbar=rbar0, var=var0, baseline=baseline)
            return total, trace
        obs = E.observe(true_state, action)
        _, reward, _ = E.step(true_state, action, env_cfg)
        total += reward
        trace.log(step=step, kind="drill", cells=list(action.cells), n_boreholes=len(action.cells),
                  cost_model="per-action", obs=[float(v) for v in obs], reward=reward,
                  rbar=rbar0, var=var0, baseline=baseline, best_value=float(diag.values.max()))
        belief = belief.update(action, obs, rng)
        drilled |= set(action.cells)
    decision, rbar0, var0 = terminal_decision(belief, env_cfg, rng, config.n_decision_samples)
    _, reward, _ = E.step(true_state, decision, env_cfg)
    total += reward
    trace.log(step=config.max_steps, kind="terminal", action=type(decision).__name__, reward=reward,
              rbar=rbar0, var=var0, baseline=max(0.0, rbar0))
    return total, trace


def immediate_policy(env_cfg, belief, config, rng, drilled=None):
    """Baseline that never drills; run_episode resolves it terminally."""
    return None, VoiDiagnostics(values=np.array([-np.inf]))


def random_policy(env_cfg, belief, config, rng, drilled=None):
    """Baseline that drills one uniformly random candidate action."""
    actions = sample_action_set(drilled if drilled is not None else set(), rng, config, env_cfg)
    pick = int(rng.integers(len(actions)))
    return actions[pick], VoiDiagnostics(values=np.full(len(actions), np.inf), actions=actions)
