"""Unit tests for the Predator-Prey grid world."""
import numpy as np
import pytest

from config import ConfigError, EnvConfig
from env import (
    CAPTURE, DOWN, LEFT, RIGHT, STOP, UP,
    InvalidStateError, PredatorPrey, ScenarioFamily, TaskSpec, WorldState, capture_rule, trace_to_dict,
)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _env() -> PredatorPrey:
    return PredatorPrey.from_config(EnvConfig())


def _task(**overrides) -> TaskSpec:
    base = dict(grid_w=7, grid_h=7, n_agents=2, n_prey=1, n_obstacles=1, attack_caps=(1, 2),
                defense_caps=(3,), sight_range=3, horizon=60)
    base.update(overrides)
    return TaskSpec(**base)


def _state(task=None, agents=((0, 0), (2, 0)), prey=((1, 1),), obstacles=((6, 6),)) -> WorldState:
    task = task or _task()
    return WorldState(
        task=task,
        agent_pos=np.array(agents, dtype=np.int64).reshape(-1, 2),
        prey_pos=np.array(prey, dtype=np.int64).reshape(-1, 2),
        prey_alive=np.ones(len(prey), dtype=bool),
        obstacle_pos=np.array(obstacles, dtype=np.int64).reshape(-1, 2),
    )


class _FrozenPrey(PredatorPrey):
    """Prey never move, so transitions are fully predictable."""

    def _move_prey(self, state, rng):
        return None


def _frozen_env() -> _FrozenPrey:
    return _FrozenPrey(ScenarioFamily.from_config(EnvConfig()))


# ---------------------------------------------------------------------------
# Capture rule
# ---------------------------------------------------------------------------

class TestCaptureRule:
    def test_boundary_equality(self):
        assert capture_rule([1, 2], 3)

    def test_insufficient(self):
        assert not capture_rule([1, 1], 3)

    def test_empty_coalition(self):
        assert not capture_rule([], 1)


# ---------------------------------------------------------------------------
# Reset
# ---------------------------------------------------------------------------

class TestReset:
    def test_distinct_cells(self):
        env = _env()
        rng = np.random.default_rng(0)
        for _ in range(50):
            state, obs = env.reset(_task(), rng)
            cells = np.concatenate([state.agent_pos, state.prey_pos, state.obstacle_pos])
            assert len({tuple(c) for c in cells}) == len(cells)
            assert len(obs) == 2

    def test_forced_packing_is_permutation(self):
        env = PredatorPrey(ScenarioFamily(4, 3, 2, 4, grid_w=4, grid_h=1))
        task = _task(grid_w=4, grid_h=1, n_agents=2, n_prey=1, n_obstacles=1, attack_caps=(1, 1),
                     defense_caps=(1,))
        state, _ = env.reset(task, np.random.default_rng(1))
        xs = sorted(int(c[0]) for c in np.concatenate([state.agent_pos, state.prey_pos, state.obstacle_pos]))
        assert xs == [0, 1, 2, 3]

    def test_too_many_entities_raises(self):
        env = PredatorPrey(ScenarioFamily(4, 3, 2, 4, grid_w=2, grid_h=1))
        with pytest.raises(ConfigError):
            env.reset(_task(grid_w=2, grid_h=1), np.random.default_rng(0))

    def test_same_seed_same_placement(self):
        env = _env()
        a, _ = env.reset(_task(), np.random.default_rng(5))
        b, _ = env.reset(_task(), np.random.default_rng(5))
        assert np.array_equal(a.agent_pos, b.agent_pos) and np.array_equal(a.prey_pos, b.prey_pos)

    def test_placement_near_uniform(self):
        env = _env()
        task = _task(n_agents=1, attack_caps=(3,), n_obstacles=0)
        rng = np.random.default_rng(6)
        counts = np.zeros(49)
        n = 10_000
        for _ in range(n):
            state, _ = env.reset(task, rng)
            x, y = state.agent_pos[0]
            counts[y * 7 + x] += 1
        expected = n / 49
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        # 48 dof: p < 1e-4 above ~90
        assert chi2 < 90.0


# ---------------------------------------------------------------------------
# Step
# ---------------------------------------------------------------------------

class TestStep:
    def test_all_stop_gives_step_penalty(self):
        env = _frozen_env()
        state = _state(prey=((5, 5),))
        _, res = env.step(state, [STOP, STOP], np.random.default_rng(0))
        assert res.reward == pytest.approx(-0.05)
        assert res.captures == 0 and not res.done

    def test_obstacle_blocks(self):
        env = _frozen_env()
        state = _state(agents=((0, 0), (4, 4)), obstacles=((1, 0),), prey=((5, 5),))
        nxt, _ = env.step(state, [RIGHT, STOP], np.random.default_rng(0))
        assert tuple(nxt.agent_pos[0]) == (0, 0)

    def test_grid_edge_blocks(self):
        env = _frozen_env()
        nxt, _ = env.step(_state(prey=((5, 5),)), [UP, STOP], np.random.default_rng(0))
        assert tuple(nxt.agent_pos[0]) == (0, 0)

    def test_move_conflict_lower_index_wins(self):
        env = _frozen_env()
        state = _state(agents=((1, 2), (3, 2)), prey=((5, 5),))
        nxt, _ = env.step(state, [RIGHT, LEFT], np.random.default_rng(0))
        assert tuple(nxt.agent_pos[0]) == (2, 2)
        assert tuple(nxt.agent_pos[1]) == (3, 2)

    def test_joint_capture_wins(self):
        env = _frozen_env()
        state = _state(agents=((0, 0), (2, 0)), prey=((1, 1),))
        nxt, res = env.step(state, [CAPTURE, CAPTURE], np.random.default_rng(0))
        assert res.captures == 1
        assert res.terminated and res.done and not res.truncated
        assert nxt.win
        assert res.reward == pytest.approx(10.0 + 50.0 - 0.05)

    def test_insufficient_attack_no_capture_no_penalty(self):
        env = _frozen_env()
        state = _state(agents=((0, 0), (2, 0)), prey=((1, 1),))
        nxt, res = env.step(state, [CAPTURE, STOP], np.random.default_rng(0))
        assert res.captures == 0
        assert nxt.prey_alive[0]
        assert res.reward == pytest.approx(-0.05)

    def test_horizon_truncates_without_win(self):
        env = _frozen_env()
        state = _state(task=_task(horizon=1), prey=((5, 5),))
        nxt, res = env.step(state, [STOP, STOP], np.random.default_rng(0))
        assert res.done and res.truncated and not res.terminated
        assert not nxt.win

    def test_step_after_done_raises(self):
        env = _frozen_env()
        state = _state(task=_task(horizon=1), prey=((5, 5),))
        nxt, _ = env.step(state, [STOP, STOP], np.random.default_rng(0))
        with pytest.raises(InvalidStateError):
            env.step(nxt, [STOP, STOP], np.random.default_rng(0))

    def test_wrong_action_count_raises(self):
        with pytest.raises(ValueError):
            _frozen_env().step(_state(), [STOP], np.random.default_rng(0))

    def test_input_state_not_mutated(self):
        env = _env()
        state = _state(prey=((4, 4),))
        before = state.agent_pos.copy(), state.prey_pos.copy()
        env.step(state, [DOWN, DOWN], np.random.default_rng(0))
        assert np.array_equal(state.agent_pos, before[0]) and np.array_equal(state.prey_pos, before[1])

    def test_replay_is_bit_exact(self):
        env = _env()

        def roll(seed):
            rng = np.random.default_rng(seed)
            state, _ = env.reset(_task(), rng)
            trace = []
            while not state.done:
                state, res = env.step(state, rng.integers(0, 6, size=2), rng)
                trace.append((state.agent_pos.tolist(), state.prey_pos.tolist(), res.reward))
            return trace

        assert roll(11) == roll(11)

    def test_prey_count_non_increasing_and_win_beats_loss(self):
        env = _env()
        rng = np.random.default_rng(12)
        for _ in range(20):
            state, _ = env.reset(_task(defense_caps=(1,)), rng)
            alive, total = int(state.prey_alive.sum()), 0.0
            while not state.done:
                state, res = env.step(state, rng.integers(0, 6, size=2), rng)
                assert int(state.prey_alive.sum()) <= alive
                alive = int(state.prey_alive.sum())
                total += res.reward
            # single prey: a loss earns only step penalties
            if state.win:
                assert total > 0.0
            else:
                assert total < 0.0


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

class TestObserve:
    def test_full_sight_sees_everything(self):
        env = _env()
        state = _state(task=_task(sight_range=12), obstacles=((6, 6),))
        obs = env.observe(state, 0)
        expected = np.zeros(9, dtype=bool)
        expected[[0, 1, 4, 7]] = True
        np.testing.assert_array_equal(obs.visibility_mask, expected)

    def test_self_row(self):
        obs = _env().observe(_state(), 1)
        row = obs.entity_features[1]
        assert obs.visibility_mask[1]
        assert row[0] == 0.0 and row[1] == 0.0
        assert row[6] == 1.0
        assert obs.self_index == 1

    def test_sight_boundary(self):
        env = _env()
        task = _task(sight_range=2)
        near = env.observe(_state(task=task, prey=((2, 2),), obstacles=((3, 0),)), 0)
        assert near.visibility_mask[4]          # prey at distance 2
        assert not near.visibility_mask[7]      # obstacle at distance 3

    def test_capture_availability(self):
        env = _env()
        obs = env.observe(_state(prey=((1, 1),)), 0)
        assert obs.available_actions[CAPTURE]
        far = env.observe(_state(prey=((5, 5),)), 0)
        assert not far.available_actions[CAPTURE]
        assert far.available_actions[:5].all()

    def test_captured_prey_disappears(self):
        env = _frozen_env()
        nxt, res = env.step(_state(task=_task(n_prey=2, defense_caps=(1, 1)), prey=((1, 1), (5, 5))),
                            [CAPTURE, STOP], np.random.default_rng(0))
        assert res.captures == 1
        assert not env.observe(nxt, 0).visibility_mask[4]
        assert not env.global_state(nxt).entity_mask[4]

    def test_placeholder(self):
        obs = _env().placeholder_observation(3)
        assert obs.visibility_mask.sum() == 1 and obs.visibility_mask[3]
        assert obs.available_actions.tolist() == [False, False, False, False, True, False]

    def test_global_state_layout(self):
        env = _env()
        gs = env.global_state(_state())
        assert gs.entity_features.shape == (9, 8)
        np.testing.assert_array_equal(np.flatnonzero(gs.entity_mask), [0, 1, 4, 7])
        assert gs.entity_features[4, 3] == 1.0      # prey flag
        assert gs.entity_features[7, 4] == 1.0      # obstacle flag


class TestTrace:
    def test_trace_to_dict(self):
        env = _env()
        state, _ = env.reset(_task(), np.random.default_rng(0))
        d = trace_to_dict([state])
        assert d["task"]["n_agents"] == 2
        assert len(d["steps"]) == 1 and d["steps"][0]["t"] == 0

    def test_empty(self):
        assert trace_to_dict([]) == {"task": None, "steps": []}
