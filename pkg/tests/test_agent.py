"""Unit tests for the utility network and epsilon-greedy exploration."""
import inspect

import numpy as np
import pytest
import torch

from agent import UtilityNetwork, epsilon_schedule, mask_unavailable, select_action, select_actions
from config import ModelConfig
from numerics import InvalidInputError


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _model(**overrides) -> ModelConfig:
    base = dict(n_layers=2, n_prototypes=3, d_x=8, d_h=6, d_ff=8)
    base.update(overrides)
    return ModelConfig(**base)


def _obs(b=3, m=5, d_e=8, seed=0):
    gen = torch.Generator().manual_seed(seed)
    feats = torch.randn(b, m, d_e, generator=gen)
    mask = torch.rand(b, m, generator=gen) > 0.3
    self_index = torch.arange(b) % m
    mask[torch.arange(b), self_index] = True
    return feats, mask, self_index


# ---------------------------------------------------------------------------
# Utility network
# ---------------------------------------------------------------------------

class TestUtilityNetwork:
    def test_output_shapes(self):
        torch.manual_seed(0)
        net = UtilityNetwork(d_e=8, n_actions=6, model=_model())
        feats, mask, idx = _obs()
        out = net(feats, mask, idx, net.init_hidden(3))
        assert out.q.shape == (3, 6)
        assert out.hidden.shape == (3, 6)
        assert out.cd.shape == (3,) and out.cmi.shape == (3,)
        assert len(out.omegas) == len(out.attention) == 2
        assert out.attention[0].shape == (3, 3, 5, 5)
        assert torch.all(out.cmi >= -1e-6)

    def test_zero_parameters_give_constant_q(self):
        net = UtilityNetwork(d_e=8, n_actions=6, model=_model())
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        feats, mask, idx = _obs()
        q = net(feats, mask, idx, net.init_hidden(3)).q
        assert torch.all(q == q[0, 0])
        assert int(select_action(q[0].numpy(), np.ones(6, bool), 0.0, np.random.default_rng(0))) == 0

    def test_deterministic_given_inputs(self):
        torch.manual_seed(1)
        net = UtilityNetwork(d_e=8, n_actions=6, model=_model())
        feats, mask, idx = _obs()
        h = net.init_hidden(3)
        a = net(feats, mask, idx, h)
        b = net(feats, mask, idx, h)
        assert torch.equal(a.q, b.q) and torch.equal(a.hidden, b.hidden)

    def test_hidden_state_changes_q(self):
        torch.manual_seed(2)
        net = UtilityNetwork(d_e=8, n_actions=6, model=_model())
        feats, mask, idx = _obs()
        a = net(feats, mask, idx, net.init_hidden(3)).q
        b = net(feats, mask, idx, torch.ones(3, 6)).q
        assert not torch.allclose(a, b)

    def test_invisible_entities_do_not_matter(self):
        torch.manual_seed(3)
        net = UtilityNetwork(d_e=8, n_actions=6, model=_model())
        feats, mask, idx = _obs(b=1)
        changed = feats.clone()
        changed[~mask] = 99.0
        h = net.init_hidden(1)
        assert torch.allclose(net(feats, mask, idx, h).q, net(changed, mask, idx, h).q, atol=1e-6)

    def test_non_self_entity_order_is_irrelevant(self):
        torch.manual_seed(4)
        net = UtilityNetwork(d_e=8, n_actions=6, model=_model()).double()
        feats, mask, _ = _obs(b=1, m=6)
        feats = feats.double()
        idx = torch.tensor([0])
        mask[0, 0] = True
        perm = torch.tensor([0, 4, 2, 5, 1, 3])       # self row stays first
        h = net.init_hidden(1, dtype=torch.float64)
        with torch.no_grad():
            a = net(feats, mask, idx, h).q
            b = net(feats[:, perm], mask[:, perm], idx, h).q
        assert torch.allclose(a, b, atol=1e-10)

    def test_unroll_matches_stepwise_forward(self):
        torch.manual_seed(5)
        net = UtilityNetwork(d_e=8, n_actions=6, model=_model()).double()
        gen = torch.Generator().manual_seed(5)
        feats = torch.randn(2, 4, 5, 8, generator=gen, dtype=torch.float64)
        mask = torch.rand(2, 4, 5, generator=gen) > 0.3
        idx = torch.tensor([[0, 0, 0, 0], [3, 3, 3, 3]])
        mask[0, :, 0] = True
        mask[1, :, 3] = True

        with torch.no_grad():
            seq = net.unroll(feats, mask, idx)
            h = net.init_hidden(2, dtype=torch.float64)
            for t in range(4):
                out = net(feats[:, t], mask[:, t], idx[:, t], h)
                h = out.hidden
                assert torch.allclose(seq.q[:, t], out.q, atol=1e-12)
                assert torch.allclose(seq.hidden[:, t], out.hidden, atol=1e-12)
                assert torch.allclose(seq.cd[:, t], out.cd, atol=1e-12)
                assert torch.allclose(seq.cmi[:, t], out.cmi, atol=1e-12)

    def test_acts_from_local_observation_alone(self):
        from config import EnvConfig
        from env import N_ACTIONS, N_FEATURES, PredatorPrey, sample_task

        env_cfg = EnvConfig()
        env = PredatorPrey.from_config(env_cfg)
        rng = np.random.default_rng(0)
        _, observations = env.reset(sample_task("train", env_cfg, rng), rng)
        own = observations[0]

        torch.manual_seed(6)
        net = UtilityNetwork(d_e=N_FEATURES, n_actions=N_ACTIONS, model=_model())
        assert list(inspect.signature(net.forward).parameters) == ["features", "mask", "self_index", "h_prev"]
        out = net(
            torch.as_tensor(own.entity_features, dtype=torch.float32)[None],
            torch.as_tensor(own.visibility_mask)[None],
            torch.tensor([own.self_index]),
            net.init_hidden(1),
        )
        assert out.q.shape == (1, N_ACTIONS)
        action = select_action(out.q[0].detach().numpy(), own.available_actions, 0.0, rng)
        assert own.available_actions[action]

    def test_prototype_count_audit(self):
        net = UtilityNetwork(d_e=8, n_actions=6, model=_model(n_prototypes=2, n_layers=1))
        assert net.stack.layers[0].w_q.shape == (2, 8, 8)
        assert net.posterior.head.out_features == 2


# ---------------------------------------------------------------------------
# Exploration
# ---------------------------------------------------------------------------

class TestEpsilonSchedule:
    def test_start(self):
        assert epsilon_schedule(0) == 1.0

    def test_end(self):
        assert epsilon_schedule(50_000) == pytest.approx(0.05)
        assert epsilon_schedule(10**7) == pytest.approx(0.05)

    def test_midpoint(self):
        assert epsilon_schedule(25_000) == pytest.approx(0.525)

    def test_negative_step_raises(self):
        with pytest.raises(ValueError):
            epsilon_schedule(-1)


class TestSelectAction:
    def test_greedy(self):
        assert select_action([1.0, 3.0, 2.0], [True] * 3, 0.0, np.random.default_rng(0)) == 1

    def test_masked_argmax(self):
        assert select_action([5.0, 9.0, 2.0], [True, False, True], 0.0, np.random.default_rng(0)) == 0

    def test_ties_go_to_lowest_index(self):
        assert select_action([2.0, 7.0, 7.0], [True] * 3, 0.0, np.random.default_rng(0)) == 1

    def test_no_available_action_raises(self):
        with pytest.raises(InvalidInputError):
            select_action([1.0, 2.0], [False, False], 0.0, np.random.default_rng(0))

    def test_uniform_when_epsilon_one(self):
        rng = np.random.default_rng(0)
        available = np.array([True, False, True, True, False, True])
        draws = np.array([select_action(np.zeros(6), available, 1.0, rng) for _ in range(10_000)])
        assert set(np.unique(draws)) == {0, 2, 3, 5}
        counts = np.bincount(draws, minlength=6)[available]
        expected = 10_000 / 4
        sigma = np.sqrt(10_000 * 0.25 * 0.75)
        assert np.all(np.abs(counts - expected) <= 3 * sigma)

    def test_positive_affine_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            q = rng.normal(size=6)
            avail = rng.random(6) > 0.3
            avail[0] = True
            a = select_action(q, avail, 0.0, rng)
            b = select_action(3.7 * q - 12.0, avail, 0.0, rng)
            assert a == b

    def test_select_actions_rowwise(self):
        q = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = select_actions(q, np.ones((2, 2), bool), 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(out, [1, 0])


class TestMaskUnavailable:
    def test_fills_negative_infinity(self):
        q = torch.tensor([[1.0, 2.0, 3.0]])
        out = mask_unavailable(q, torch.tensor([[True, True, False]]))
        assert int(out.argmax()) == 1
        assert out[0, 2] == float("-inf")
