"""Tests for episode collection, evaluation, the training loop and checkpoints."""
import os

import numpy as np
import pandas as pd
import pytest
import torch

from config import RunConfig
from env import PredatorPrey, TaskSpec, sample_task
from numerics import InvalidInputError
from trainer import (
    CheckpointError,
    OPTLearner,
    Trainer,
    area_under_curve,
    collect_episode,
    evaluate,
    evaluate_random,
    load_checkpoint,
    read_checkpoint,
    replay_q_values,
    save_checkpoint,
)
from trainer.runner import METRIC_COLUMNS


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _setup(cfg, seed=0):
    torch.manual_seed(seed)
    env = PredatorPrey.from_config(cfg.env)
    return env, OPTLearner(cfg, env.n_features, env.n_actions)


def _task(horizon=8) -> TaskSpec:
    return TaskSpec(grid_w=7, grid_h=7, n_agents=2, n_prey=1, n_obstacles=1, attack_caps=(1, 2),
                    defense_caps=(2,), sight_range=3, horizon=horizon)


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------

class TestCollectEpisode:
    def test_one_step_horizon(self, tiny_config):
        env, learner = _setup(tiny_config)
        ep = collect_episode(env, learner.agent, _task(horizon=1), 1.0, np.random.default_rng(0))
        assert ep.length == 1
        assert ep.obs_features.shape[0] == 2
        assert ep.actions.shape == (1, 4)

    def test_absent_slots_are_padded(self, tiny_config):
        env, learner = _setup(tiny_config)
        ep = collect_episode(env, learner.agent, _task(), 0.5, np.random.default_rng(1))
        assert ep.agent_mask.tolist() == [True, True, False, False]
        assert np.all(ep.actions[:, 2:] == 4)
        assert np.all(ep.obs_mask[:, 2].sum(-1) == 1)

    def test_greedy_is_deterministic(self, tiny_config):
        env, learner = _setup(tiny_config)
        a = collect_episode(env, learner.agent, _task(), 0.0, np.random.default_rng(2))
        b = collect_episode(env, learner.agent, _task(), 0.0, np.random.default_rng(2))
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.obs_features, b.obs_features)
        assert np.array_equal(a.rewards, b.rewards)

    def test_states_match_environment(self, tiny_config):
        env, learner = _setup(tiny_config)
        ep = collect_episode(env, learner.agent, _task(), 0.3, np.random.default_rng(3), record_states=True)
        assert len(ep.states) == ep.length + 1
        for t, state in enumerate(ep.states):
            gs = env.global_state(state)
            assert np.array_equal(gs.entity_features, ep.state_features[t])
            assert np.array_equal(gs.entity_mask, ep.state_mask[t])

    def test_replayed_q_values_are_bit_exact(self, tiny_config):
        env, learner = _setup(tiny_config)
        ep = collect_episode(env, learner.agent, _task(), 0.2, np.random.default_rng(4))
        np.testing.assert_array_equal(replay_q_values(learner.agent, ep), ep.q_values)

    @pytest.mark.parametrize("seed", [6, 7, 8])
    def test_only_a_win_terminates(self, tiny_config, seed):
        env, learner = _setup(tiny_config)
        ep = collect_episode(env, learner.agent, _task(horizon=5), 1.0, np.random.default_rng(seed))
        # an episode cut at the horizon keeps terminated False so its last target bootstraps
        assert ep.terminated.tolist() == [False] * (ep.length - 1) + [ep.win]
        if not ep.win:
            assert ep.length == 5

    def test_random_policy(self, tiny_config):
        env, _ = _setup(tiny_config)
        ep = collect_episode(env, None, _task(), 0.0, np.random.default_rng(5))
        assert ep.length >= 1
        assert np.all(ep.q_values == 0)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

class TestEvaluate:
    def test_keys_and_ranges(self, tiny_config):
        env, learner = _setup(tiny_config)
        res = evaluate(learner.agent, env, tiny_config.env, "unseen_both", 3, np.random.default_rng(0))
        assert set(res) == {"win_rate", "mean_return"}
        assert 0.0 <= res["win_rate"] <= 1.0

    def test_zero_episodes_raises(self, tiny_config):
        env, learner = _setup(tiny_config)
        with pytest.raises(InvalidInputError):
            evaluate(learner.agent, env, tiny_config.env, "train", 0, np.random.default_rng(0))

    def test_random_baseline_is_seeded(self, tiny_config):
        env, _ = _setup(tiny_config)
        a = evaluate_random(env, tiny_config.env, "train", 4, np.random.default_rng(9))
        b = evaluate_random(env, tiny_config.env, "train", 4, np.random.default_rng(9))
        assert a == b


class TestAreaUnderCurve:
    def test_matches_trapezoid_oracle(self):
        steps = [0, 100, 300, 600]
        wins = [0.0, 0.5, 0.25, 1.0]
        oracle = (100 * 0.25 + 200 * 0.375 + 300 * 0.625) / 600
        assert area_under_curve(steps, wins) == pytest.approx(oracle)

    def test_constant_curve(self):
        assert area_under_curve([0, 10, 20], [0.4, 0.4, 0.4]) == pytest.approx(0.4)

    def test_degenerate(self):
        assert area_under_curve([], []) == 0.0
        assert area_under_curve([5], [0.7]) == 0.7


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

class TestTrainer:
    def test_run_writes_artifacts(self, tiny_config, tmp_path):
        out = tmp_path / "run"
        Trainer(tiny_config, str(out)).run()
        assert (out / "config.yaml").exists()
        assert (out / "checkpoints" / "final.pt").exists()
        assert any(p.name.startswith("step_") for p in (out / "checkpoints").iterdir())
        metrics = pd.read_csv(out / "metrics.csv")
        assert list(metrics.columns) == METRIC_COLUMNS
        assert metrics["step"].iloc[0] == 0
        assert metrics["step"].is_monotonic_increasing
        assert (metrics["variant"] == "full").all()

    def test_one_row_per_evaluation_and_split(self, tiny_config, tmp_path):
        tiny_config.train.eval_splits = ["train", "unseen_scale"]
        trainer = Trainer(tiny_config, str(tmp_path / "run"))
        trainer.run()
        metrics = pd.read_csv(trainer.metrics_path)
        assert len(metrics) == 2 * trainer._n_evals
        assert set(metrics["eval_split"]) == {"train", "unseen_scale"}

    def test_identical_runs_identical_metrics(self, tiny_config, tmp_path):
        a = Trainer(tiny_config, str(tmp_path / "a"))
        a.run()
        b = Trainer(RunConfig.from_dict(tiny_config.to_dict()), str(tmp_path / "b"))
        b.run()
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_losses_finite(self, tiny_config, tmp_path):
        trainer = Trainer(tiny_config, str(tmp_path / "run"))
        trainer.run()
        metrics = pd.read_csv(trainer.metrics_path)
        trained = metrics.dropna(subset=["td_loss"])
        assert len(trained) > 0
        assert np.isfinite(trained[["td_loss", "cd_loss", "cmi_loss", "total_loss"]].to_numpy()).all()

    def test_parallel_collectors(self, tiny_config, tmp_path):
        tiny_config.train.n_collectors = 2
        trainer = Trainer(tiny_config, str(tmp_path / "run"))
        trainer.run()
        assert trainer.env_steps >= tiny_config.train.total_steps
        assert trainer._pool is None


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

class TestCheckpoint:
    def test_round_trip_reproduces_evaluation(self, tiny_config, tmp_path):
        trainer = Trainer(tiny_config, str(tmp_path / "run"))
        trainer.run()
        path = trainer.checkpoint_path("final")
        learner, cfg, payload = load_checkpoint(path, 8, 6)
        assert cfg.to_dict() == tiny_config.to_dict()
        assert payload["env_steps"] == trainer.env_steps

        env = PredatorPrey.from_config(cfg.env)
        before = evaluate(trainer.learner.agent, env, cfg.env, "train", 3, np.random.default_rng(1))
        after = evaluate(learner.agent, env, cfg.env, "train", 3, np.random.default_rng(1))
        assert before == after
        for a, b in zip(trainer.learner.mixer.parameters(), learner.mixer.parameters()):
            assert torch.equal(a, b)

    def test_version_mismatch(self, tiny_config, tmp_path):
        env, learner = _setup(tiny_config)
        path = save_checkpoint(str(tmp_path / "c.pt"), learner, tiny_config, 0, 0)
        payload = torch.load(path, weights_only=False)
        payload["format_version"] = 99
        torch.save(payload, path)
        with pytest.raises(CheckpointError, match="version"):
            read_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            read_checkpoint(str(tmp_path / "nope.pt"))

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"not a torch file")
        with pytest.raises(CheckpointError):
            read_checkpoint(str(path))
