"""Soft actor-critic with twin critics and automatic entropy tuning.

The agent consumes plain numpy batches (dicts with ``states``, ``actions``,
``rewards``, ``next_states``, ``terminals``) and exposes the value
estimate the rollout generator ranks candidate successors with.

Agent checkpoints (``.npz``) mirror the model checkpoints: ``config`` (JSON),
``obs_mean``/``obs_std``, ``param/<module>/<name>`` for every network,
``optim/<name>/...`` for the Adam states and ``rng_state`` for the torch
generator used to sample actions.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import NormStats, savez_stable

__all__ = [
    "AgentConfig",
    "SACAgent",
    "squashed_log_prob",
    "agent_update",
    "value_estimate",
    "select_action",
    "save_agent",
    "load_agent",
]

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


@dataclass
class AgentConfig:
    critic_lr: float = 3e-4
    actor_lr: float = 1e-4
    alpha_lr: float = 3e-4
    discount: float = 0.99
    tau: float = 5e-3
    target_entropy: float | None = None  # None means -dim(A)
    batch_size: int = 256
    hidden: int = 64
    n_layers: int = 2
    init_temperature: float = 1.0
    reward_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.critic_lr, self.actor_lr, self.alpha_lr) <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.init_temperature <= 0:
            raise ValueError("temperature must be positive")


def mlp(in_dim: int, out_dim: int, hidden: int, n_layers: int) -> nn.Sequential:
    layers, last = [], in_dim
    for _ in range(n_layers):
        layers += [nn.Linear(last, hidden), nn.ReLU()]
        last = hidden
    layers.append(nn.Linear(last, out_dim))
    return nn.Sequential(*layers)


def squashed_log_prob(pre_tanh: torch.Tensor, mean: torch.Tensor, log_std: torch.Tensor) -> torch.Tensor:
    """Log-density of ``tanh(u)`` for ``u ~ N(mean, exp(log_std)^2)``, summed over action dims."""
    normal = -0.5 * ((pre_tanh - mean) / log_std.exp()) ** 2 - log_std - 0.5 * math.log(2.0 * math.pi)
    # log(1 - tanh(u)^2) written stably
    correction = 2.0 * (math.log(2.0) - pre_tanh - F.softplus(-2.0 * pre_tanh))
    return (normal - correction).sum(-1)


class SACAgent:
    def __init__(self, state_dim: int, action_dim: int, config: AgentConfig = AgentConfig(),
                 obs_stats: NormStats | None = None):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.config = config
        self.obs_stats = obs_stats or NormStats.identity(state_dim)
        self.target_entropy = -float(action_dim) if config.target_entropy is None else config.target_entropy

        torch.manual_seed(config.seed)
        h, n = config.hidden, config.n_layers
        self.policy = mlp(state_dim, 2 * action_dim, h, n)
        # zero mean head: a fresh agent's deterministic action is exactly 0
        with torch.no_grad():
            head = self.policy[-1]
            head.weight[:action_dim].zero_()
            head.bias[:action_dim].zero_()
        self.q1 = mlp(state_dim + action_dim, 1, h, n)
        self.q2 = mlp(state_dim + action_dim, 1, h, n)
        self.q1_target = copy.deepcopy(self.q1)
        self.q2_target = copy.deepcopy(self.q2)
        for p in list(self.q1_target.parameters()) + list(self.q2_target.parameters()):
            p.requires_grad_(False)
        self.log_alpha = nn.Parameter(torch.tensor(math.log(config.init_temperature)))

        self.policy_opt = torch.optim.Adam(self.policy.parameters(), lr=config.actor_lr)
        self.critic_opt = torch.optim.Adam(list(self.q1.parameters()) + list(self.q2.parameters()),
                                           lr=config.critic_lr)
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=config.alpha_lr)
        self.generator = torch.Generator().manual_seed(config.seed + 1)
        self.n_updates = 0

    # -- networks ---------------------------------------------------------
    @property
    def alpha(self) -> torch.Tensor:
        return self.log_alpha.exp()

    def _obs(self, states) -> torch.Tensor:
        dtype = self.policy[0].weight.dtype
        return torch.as_tensor(self.obs_stats.apply(np.asarray(states, dtype=float)), dtype=dtype)

    def policy_params(self, obs: torch.Tensor):
        out = self.policy(obs)
        mean, log_std = out[..., : self.action_dim], out[..., self.action_dim:]
        return mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, obs: torch.Tensor, generator: torch.Generator | None = None):
        """Reparameterised action sample and its log-probability."""
        mean, log_std = self.policy_params(obs)
        noise = torch.randn(mean.shape, generator=generator or self.generator, dtype=mean.dtype)
        pre_tanh = mean + log_std.exp() * noise
        return torch.tanh(pre_tanh), squashed_log_prob(pre_tanh, mean, log_std)

    def q_values(self, obs: torch.Tensor, actions: torch.Tensor, target: bool = False):
        x = torch.cat([obs, actions], dim=-1)
        if target:
            return self.q1_target(x).squeeze(-1), self.q2_target(x).squeeze(-1)
        return self.q1(x).squeeze(-1), self.q2(x).squeeze(-1)

    # -- acting -------------------------------------------------------------
    def select_action(self, states, deterministic: bool = False) -> np.ndarray:
        """Squashed mean (deterministic) or a policy sample, shape (B, A)."""
        obs = self._obs(np.atleast_2d(states))
        with torch.no_grad():
            if deterministic:
                action = torch.tanh(self.policy_params(obs)[0])
            else:
                action, _ = self.sample(obs)
        return action.double().numpy()

    def value_estimate(self, states) -> np.ndarray:
        """``min_i Q_target_i(s, a) - alpha * log pi(a|s)`` at one fresh ``a ~ pi(.|s)``."""
        obs = self._obs(np.atleast_2d(states))
        with torch.no_grad():
            action, log_prob = self.sample(obs)
            q1, q2 = self.q_values(obs, action, target=True)
            value = torch.min(q1, q2) - self.alpha * log_prob
        return value.double().numpy()

    # -- learning -------------------------------------------------------------
    def _tensors(self, batch: dict):
        dtype = self.policy[0].weight.dtype
        obs = self._obs(batch["states"])
        next_obs = self._obs(batch["next_states"])
        actions = torch.as_tensor(np.asarray(batch["actions"]).reshape(len(obs), -1), dtype=dtype)
        rewards = torch.as_tensor(batch["rewards"], dtype=dtype) * self.config.reward_scale
        not_done = 1.0 - torch.as_tensor(batch["terminals"], dtype=dtype)
        return obs, actions, rewards, next_obs, not_done

    def critic_loss(self, obs, actions, rewards, next_obs, not_done) -> torch.Tensor:
        with torch.no_grad():
            next_action, next_log_prob = self.sample(next_obs)
            tq1, tq2 = self.q_values(next_obs, next_action, target=True)
            soft_value = torch.min(tq1, tq2) - self.alpha * next_log_prob
            target = rewards + self.config.discount * not_done * soft_value
        q1, q2 = self.q_values(obs, actions)
        return F.mse_loss(q1, target) + F.mse_loss(q2, target)

    def actor_loss(self, obs):
        action, log_prob = self.sample(obs)
        q1, q2 = self.q_values(obs, action)
        loss = (self.alpha.detach() * log_prob - torch.min(q1, q2)).mean()
        return loss, log_prob

    def soft_update(self, tau: float | None = None):
        tau = self.config.tau if tau is None else tau
        with torch.no_grad():
            for net, target in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
                for p, tp in zip(net.parameters(), target.parameters()):
                    tp.mul_(1.0 - tau).add_(p, alpha=tau)

    def update(self, batch: dict) -> dict:
        """One SAC step: critics, actor, temperature, then Polyak averaging."""
        if len(batch["rewards"]) == 0:
            raise ValueError("empty batch")
        obs, actions, rewards, next_obs, not_done = self._tensors(batch)

        critic_loss = self.critic_loss(obs, actions, rewards, next_obs, not_done)
        self._check_finite("critic", critic_loss, batch)
        self.critic_opt.zero_grad()
        critic_loss.backward()
        self.critic_opt.step()

        actor_loss, log_prob = self.actor_loss(obs)
        self._check_finite("actor", actor_loss, batch)
        self.policy_opt.zero_grad()
        actor_loss.backward()
        self.policy_opt.step()

        entropy = -log_prob.detach()
        alpha_loss = (self.log_alpha * (entropy - self.target_entropy)).mean()
        self.alpha_opt.zero_grad()
        alpha_loss.backward()
        self.alpha_opt.step()

        self.soft_update()
        self.n_updates += 1
        return {
            "critic_loss": critic_loss.item(),
            "actor_loss": actor_loss.item(),
            "alpha_loss": alpha_loss.item(),
            "alpha": self.alpha.item(),
            "entropy": entropy.mean().item(),
        }

    @staticmethod
    def _check_finite(name, loss, batch):
        if not torch.isfinite(loss):
            raise FloatingPointError(
                f"non-finite {name} loss; offending batch: "
                + json.dumps({k: np.asarray(v).tolist()[:8] for k, v in batch.items()}))

    # -- persistence ------------------------------------------------------------
    def modules(self) -> dict:
        return {"policy": self.policy, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}

    def optimizers(self) -> dict:
        return {"policy": self.policy_opt, "critic": self.critic_opt, "alpha": self.alpha_opt}

    def weights_checksum(self) -> str:
        h = hashlib.sha256()
        for name, module in self.modules().items():
            for key, tensor in module.state_dict().items():
                h.update(f"{name}/{key}".encode())
                h.update(tensor.detach().cpu().numpy().tobytes())
        h.update(self.log_alpha.detach().numpy().tobytes())
        return h.hexdigest()


def agent_update(agent: SACAgent, batch: dict, cfg: AgentConfig | None = None) -> dict:
    return agent.update(batch)


def value_estimate(agent: SACAgent, states) -> np.ndarray:
    return agent.value_estimate(states)


def select_action(agent: SACAgent, states, deterministic: bool = False) -> np.ndarray:
    return agent.select_action(states, deterministic)


def save_agent(agent: SACAgent, path) -> Path:
    path = Path(path)
    arrays = {
        "config": np.array(json.dumps({"agent_config": asdict(agent.config), "state_dim": agent.state_dim,
                                       "action_dim": agent.action_dim, "n_updates": agent.n_updates},
                                      sort_keys=True)),
        "obs_mean": agent.obs_stats.mean,
        "obs_std": agent.obs_stats.std,
        "log_alpha": agent.log_alpha.detach().numpy().copy(),
        "rng_state": agent.generator.get_state().numpy(),
    }
    for name, module in agent.modules().items():
        for key, tensor in module.state_dict().items():
            arrays[f"param/{name}/{key}"] = tensor.detach().cpu().numpy()
    for name, opt in agent.optimizers().items():
        state = opt.state_dict()
        arrays[f"optim/{name}/param_groups"] = np.array(json.dumps(state["param_groups"]))
        for idx, slots in state["state"].items():
            for slot, value in slots.items():
                arrays[f"optim/{name}/state/{idx}/{slot}"] = torch.as_tensor(value).numpy()
    return savez_stable(path, **arrays)


def load_agent(path) -> SACAgent:
    with np.load(Path(path)) as z:
        meta = json.loads(str(z["config"]))
        agent = SACAgent(meta["state_dim"], meta["action_dim"], AgentConfig(**meta["agent_config"]),
                         NormStats(z["obs_mean"], z["obs_std"]))
        for name, module in agent.modules().items():
            prefix = f"param/{name}/"
            module.load_state_dict({k[len(prefix):]: torch.as_tensor(z[k]) for k in z.files if k.startswith(prefix)})
        with torch.no_grad():
            agent.log_alpha.copy_(torch.as_tensor(z["log_alpha"]))
        for name, opt in agent.optimizers().items():
            prefix = f"optim/{name}/state/"
            state: dict = {}
            for key in z.files:
                if key.startswith(prefix):
                    idx, slot = key[len(prefix):].split("/")
                    state.setdefault(int(idx), {})[slot] = torch.as_tensor(z[key])
            groups = json.loads(str(z[f"optim/{name}/param_groups"]))
            opt.load_state_dict({"state": state, "param_groups": groups})
        agent.generator.set_state(torch.as_tensor(z["rng_state"]))
        agent.n_updates = meta["n_updates"]
    return agent
