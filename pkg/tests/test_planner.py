"""VOI policy oracles on toy problems, episode arithmetic, determinism."""

import numpy as np
import pytest

from orebelief import env as E
from orebelief.beliefs import DiscreteBelief
from orebelief.planner import (
    VoiConfig,
    immediate_policy,
    random_policy,
    run_episode,
    sample_action_set,
    terminal_decision,
    voi_policy,
)


def toy_env():
    # 4x4 grid, drill anywhere on a 2x2 subgrid, capex tuned so the two
    # toy states straddle the mine/abandon boundary
    return E.EnvConfig(h=4, w=4, r_capex=-2.0, drill_grid=2, radius_mean_frac=0.3)


def two_state_belief():
    """sA mines (+2), sB abandons (-2); cell (1,1) distinguishes, (2,2) does not."""
    s_a = np.zeros((4, 4))
    s_a[0, :] = 0.9  # 4 cells above rho -> value +2
    s_a[1, 1] = 0.6
    s_a[2, 2] = 0.3
    s_b = np.zeros((4, 4))
    s_b[1, 1] = 0.1
    s_b[2, 2] = 0.3  # same as s_a: uninformative
    return DiscreteBelief(np.stack([s_a, s_b]), np.array([0.5, 0.5])), s_a, s_b


DISTINGUISHING = E.Drill(((1, 1),))
UNINFORMATIVE = E.Drill(((2, 2),))


class TestActionSet:
    def test_fresh_episode_covers_full_drill_grid(self):
        cfg = E.EnvConfig()
        voi = VoiConfig(n_actions=200, max_boreholes=1)
        actions = sample_action_set(set(), np.random.default_rng(0), voi, cfg)
        seen = {a.cells[0] for a in actions}
        assert seen <= set(cfg.drill_cells())
        assert len(seen) > 25  # most of the 36 cells appear across 200 draws

    def test_single_remaining_cell(self):
        cfg = E.EnvConfig()
        cells = cfg.drill_cells()
        drilled = set(cells[:-1])
        voi = VoiConfig(n_actions=10, max_boreholes=10)
        actions = sample_action_set(drilled, np.random.default_rng(1), voi, cfg)
        for a in actions:
            assert a.cells == (cells[-1],)

    def test_no_duplicates_within_action(self):
        cfg = E.EnvConfig()
        voi = VoiConfig(n_actions=50, max_boreholes=10)
        for a in sample_action_set(set(), np.random.default_rng(2), voi, cfg):
            assert len(set(a.cells)) == len(a.cells)

    def test_exhausted_grid_raises(self):
        cfg = E.EnvConfig()
        with pytest.raises(ValueError):
            sample_action_set(set(cfg.drill_cells()), np.random.default_rng(3), VoiConfig(), cfg)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            VoiConfig(n_states=0)
        with pytest.raises(ValueError):
            VoiConfig(min_boreholes=3, max_boreholes=2)


class TestVoiPolicy:
    def test_single_candidate_returned_regardless(self):
        belief, _, _ = two_state_belief()
        action, _ = voi_policy(toy_env(), belief, VoiConfig(n_states=4, m_samples=2),
                               np.random.default_rng(0), actions=[UNINFORMATIVE])
        assert action == UNINFORMATIVE

    def test_degenerate_belief_hand_evaluation(self):
        # one-state belief: every action scores r_drill + max(0, R_mine(s*));
        # argmax ties break to the first action
        cfg = toy_env()
        s = np.zeros((4, 4))
        s[0, :3] = 0.9  # 3 cells -> value +1
        belief = DiscreteBelief(s[None], np.array([1.0]))
        actions = [UNINFORMATIVE, DISTINGUISHING, E.Drill(((0, 0),))]
        action, diag = voi_policy(cfg, belief, VoiConfig(n_states=8, m_samples=4),
                                  np.random.default_rng(1), actions=actions)
        np.testing.assert_allclose(diag.values, cfg.r_drill + 1.0, atol=1e-9)
        assert action == actions[0]

    def test_exact_enumeration_selects_distinguishing_drill(self):
        belief, _, _ = two_state_belief()
        action, diag = voi_policy(toy_env(), belief, VoiConfig(), np.random.default_rng(0),
                                  actions=[UNINFORMATIVE, DISTINGUISHING], enumerate_support=True)
        assert action == DISTINGUISHING
        # closed-form values: uninformative -0.1, distinguishing 0.9
        np.testing.assert_allclose(diag.values, [-0.1, 0.9], atol=1e-9)

    def test_enumeration_matches_brute_force_outcome_tree(self):
        # brute force over the full 2-state x 2-action outcome tree
        cfg = toy_env()
        belief, s_a, s_b = two_state_belief()
        for action in (UNINFORMATIVE, DISTINGUISHING):
            total = 0.0
            for s, p in zip(*belief.support()):
                post = belief.update(action, E.observe(s, action))
                ps, pp = post.support()
                rbar = sum(pj * E.extraction_value(sj, cfg) for sj, pj in zip(ps, pp))
                total += p * (cfg.r_drill + max(0.0, rbar))
            _, diag = voi_policy(cfg, belief, VoiConfig(), np.random.default_rng(0),
                                 actions=[action], enumerate_support=True)
            np.testing.assert_allclose(diag.values[0], total, atol=1e-12)

    def test_sampled_mode_prefers_distinguishing_drill(self):
        belief, _, _ = two_state_belief()
        wins = 0
        runs = 60
        for seed in range(runs):
            action, _ = voi_policy(toy_env(), belief, VoiConfig(n_states=50, m_samples=10),
                                   np.random.default_rng(seed), actions=[UNINFORMATIVE, DISTINGUISHING])
            wins += action == DISTINGUISHING
        assert wins / runs >= 0.95

    def test_argmax_invariant_to_constant_score_shift(self):
        # shifting the drill reward shifts every hypothetical's score equally
        belief, _, _ = two_state_belief()
        base = toy_env()
        shifted = E.EnvConfig(h=4, w=4, r_capex=-2.0, drill_grid=2, radius_mean_frac=0.3, r_drill=-3.0)
        a1, d1 = voi_policy(base, belief, VoiConfig(n_states=30, m_samples=6),
                            np.random.default_rng(5), actions=[UNINFORMATIVE, DISTINGUISHING])
        a2, d2 = voi_policy(shifted, belief, VoiConfig(n_states=30, m_samples=6),
                            np.random.default_rng(5), actions=[UNINFORMATIVE, DISTINGUISHING])
        assert a1 == a2
        np.testing.assert_allclose(d2.values - d1.values, (-3.0 + 0.1) * np.ones(2), atol=1e-9)

    def test_deterministic_per_seed(self):
        belief, _, _ = two_state_belief()
        picks = [
            voi_policy(toy_env(), belief, VoiConfig(n_states=20, m_samples=5), np.random.default_rng(42))[0]
            for _ in range(2)
        ]
        assert picks[0] == picks[1]


class TestTerminalDecision:
    def test_all_zero_samples_abandon(self):
        belief = DiscreteBelief(np.zeros((1, 4, 4)), np.array([1.0]))
        action, rbar, _ = terminal_decision(belief, toy_env(), np.random.default_rng(0), 8)
        assert isinstance(action, E.Abandon) and rbar == -2.0

    def test_all_high_samples_mine(self):
        s = np.full((4, 4), 0.95)
        belief = DiscreteBelief(s[None], np.array([1.0]))
        action, rbar, _ = terminal_decision(belief, toy_env(), np.random.default_rng(0), 8)
        assert isinstance(action, E.Mine) and rbar == 14.0

    def test_breakeven_abandons(self):
        s = np.zeros((4, 4))
        s[0, :2] = 0.9  # exactly 2 cells -> value 0
        belief = DiscreteBelief(s[None], np.array([1.0]))
        action, rbar, _ = terminal_decision(belief, toy_env(), np.random.default_rng(0), 8)
        assert isinstance(action, E.Abandon) and rbar == 0.0


class TestRunEpisode:
    def test_immediate_abandon_returns_zero(self):
        cfg = toy_env()
        belief = DiscreteBelief(np.zeros((1, 4, 4)), np.array([1.0]))
        total, trace = run_episode(cfg, belief, VoiConfig(n_decision_samples=4), np.zeros((4, 4)),
                                   np.random.default_rng(0), policy=immediate_policy)
        assert total == 0.0
        assert trace.rows[-1]["action"] == "Abandon"

    def test_immediate_mine_on_zero_map_pays_capex(self):
        cfg = toy_env()
        s_high = np.full((4, 4), 0.9)
        belief = DiscreteBelief(s_high[None], np.array([1.0]))  # wrongly confident
        total, trace = run_episode(cfg, belief, VoiConfig(n_decision_samples=4), np.zeros((4, 4)),
                                   np.random.default_rng(0), policy=immediate_policy)
        assert total == -2.0  # toy capex
        assert trace.rows[-1]["action"] == "Mine"

    def test_k_drills_then_abandon_costs_k_tenths(self):
        cfg = toy_env()
        belief = DiscreteBelief(np.zeros((1, 4, 4)), np.array([1.0]))
        k = 3
        voi = VoiConfig(n_decision_samples=4, max_steps=k, n_actions=2, max_boreholes=2)
        total, trace = run_episode(cfg, belief, voi, np.zeros((4, 4)),
                                   np.random.default_rng(1), policy=random_policy)
        assert total == pytest.approx(k * cfg.r_drill)
        drills = [r for r in trace.rows if r["kind"] == "drill"]
        assert len(drills) == k
        assert all(r["cost_model"] == "per-action" for r in drills)

    def test_episode_return_is_undiscounted_sum(self):
        cfg = toy_env()
        belief, s_a, _ = two_state_belief()
        total, trace = run_episode(cfg, belief, VoiConfig(n_states=20, m_samples=5, n_actions=4,
                                                          max_boreholes=1, n_decision_samples=16),
                                   s_a, np.random.default_rng(7))
        rewards = [r["reward"] for r in trace.rows]
        assert total == pytest.approx(sum(rewards))

    def test_voi_episode_on_distinguishable_truth_mines_correctly(self):
        # truth s_a pays +2: with the distinguishing drill available, the agent
        # should identify it and mine, netting 2 - 0.1 * n_drills
        cfg = toy_env()
        belief, s_a, _ = two_state_belief()
        voi = VoiConfig(n_states=40, m_samples=10, n_actions=8, max_boreholes=2, n_decision_samples=32)
        total, trace = run_episode(cfg, belief, voi, s_a, np.random.default_rng(3))
        assert trace.rows[-1]["action"] == "Mine"
        assert total > 1.5
