import math

import numpy as np
import pytest
import torch

from riskmbrl.actor_critic import (AgentConfig, SACAgent, agent_update, load_agent, save_agent,
                                   select_action, squashed_log_prob, value_estimate)
from riskmbrl.data import NormStats


def random_batch(rng, n=64, s_dim=3):
    return {
        "states": rng.normal(size=(n, s_dim)),
        "actions": rng.uniform(-1, 1, size=(n, 1)),
        "rewards": rng.normal(size=n),
        "next_states": rng.normal(size=(n, s_dim)),
        "terminals": rng.random(n) < 0.1,
    }


def double_agent(seed=0):
    agent = SACAgent(3, 1, AgentConfig(hidden=8, n_layers=2, seed=seed))
    for module in agent.modules().values():
        module.double()
    with torch.no_grad():
        agent.log_alpha.data = agent.log_alpha.data.double()
    return agent


def test_squashed_log_prob_matches_change_of_variables():
    # density of tanh(u) at a = tanh(u): N(u) / (1 - a^2)
    u = torch.tensor([[-2.0], [0.0], [0.7], [15.0]], dtype=torch.float64)
    mean = torch.tensor([[0.1]], dtype=torch.float64).expand_as(u)
    log_std = torch.tensor([[-0.3]], dtype=torch.float64).expand_as(u)
    sd = math.exp(-0.3)
    ref = [-0.5 * ((x - 0.1) / sd) ** 2 - math.log(sd) - 0.5 * math.log(2 * math.pi)
           - math.log(1 - math.tanh(x) ** 2) for x in (-2.0, 0.0, 0.7)]
    out = squashed_log_prob(u, mean, log_std)
    np.testing.assert_allclose(out[:3].numpy(), ref, rtol=1e-12)
    assert torch.isfinite(out[3])  # stable where 1 - tanh^2 underflows


def test_squashed_log_prob_gradcheck():
    g = torch.Generator().manual_seed(0)
    u, m, ls = (torch.randn(5, 2, generator=g, dtype=torch.float64, requires_grad=True) for _ in range(3))
    assert torch.autograd.gradcheck(squashed_log_prob, (u, m, ls), eps=1e-6, atol=1e-9, rtol=1e-4)


def test_critic_loss_gradcheck(rng):
    agent = double_agent()
    obs, actions, rewards, next_obs, not_done = agent._tensors(random_batch(rng, 6))
    obs, actions, next_obs = obs.double(), actions.double(), next_obs.double()
    rewards, not_done = rewards.double(), not_done.double()
    actions.requires_grad_(True)

    def loss(a):
        agent.generator.manual_seed(0)  # fixed next-action sample per call
        return agent.critic_loss(obs, a, rewards, next_obs, not_done)

    assert torch.autograd.gradcheck(loss, (actions,), eps=1e-6, atol=1e-9, rtol=1e-4)


def test_fresh_agent_deterministic_action_is_zero(rng):
    agent = SACAgent(3, 1)
    a = agent.select_action(rng.normal(size=(10, 3)), deterministic=True)
    np.testing.assert_array_equal(a, 0.0)


def test_actions_in_bounds_and_deterministic_repeatable(rng):
    agent = SACAgent(3, 1, AgentConfig(seed=3))
    for _ in range(20):
        agent.update(random_batch(rng))
    s = rng.normal(size=(50, 3)) * 10
    a = select_action(agent, s)
    assert a.shape == (50, 1) and np.all(np.abs(a) <= 1)
    np.testing.assert_array_equal(agent.select_action(s, True), agent.select_action(s, True))


def test_update_reduces_critic_loss_on_fixed_target(rng):
    agent = SACAgent(3, 1, AgentConfig(critic_lr=1e-3, seed=1))
    batch = random_batch(rng, 256)
    batch["terminals"][:] = True  # target = reward, no bootstrapping
    first = agent_update(agent, batch)["critic_loss"]
    for _ in range(300):
        last = agent.update(batch)["critic_loss"]
    assert last < 0.5 * first


def test_temperature_moves_toward_target_entropy(rng):
    agent = SACAgent(3, 1, AgentConfig(alpha_lr=1e-2))
    batch = random_batch(rng)
    stats = [agent.update(batch) for _ in range(30)]
    # a fresh policy has entropy well above -1, so alpha shrinks
    assert stats[-1]["alpha"] < stats[0]["alpha"]


def test_value_estimate_shape(rng):
    agent = SACAgent(3, 1)
    v = value_estimate(agent, rng.normal(size=(17, 3)))
    assert v.shape == (17,) and np.all(np.isfinite(v))


def test_nan_batch_raises(rng):
    agent = SACAgent(3, 1)
    batch = random_batch(rng)
    batch["rewards"][0] = np.nan
    with pytest.raises(FloatingPointError, match="critic"):
        agent.update(batch)


def test_checkpoint_round_trip(rng, tmp_path):
    agent = SACAgent(3, 1, AgentConfig(seed=5), NormStats(np.array([1.0, 2.0, 3.0]), np.array([2.0, 2.0, 2.0])))
    for _ in range(10):
        agent.update(random_batch(rng))
    save_agent(agent, tmp_path / "a.npz")
    clone = load_agent(tmp_path / "a.npz")
    assert clone.weights_checksum() == agent.weights_checksum()
    batch = random_batch(rng)
    # identical continuation: optimiser moments and sampler state were restored
    s1, s2 = agent.update(batch), clone.update(batch)
    assert s1 == s2
    assert clone.weights_checksum() == agent.weights_checksum()


def test_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(discount=1.5)
    with pytest.raises(ValueError):
        AgentConfig(tau=0.0)
