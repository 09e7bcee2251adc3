"""Desk-scale domains: Currency Exchange, the one-step illustrative MDP, and
random tabular MDPs for the DP oracles.

Environments are stateless specs; all stepping functions are vectorised
over a batch of states and take the random generator explicitly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import OfflineDataset
from .tabular import TabularMDP

log = logging.getLogger(__name__)

__all__ = [
    "OUParams",
    "CurrencyState",
    "CurrencyExchange",
    "currency_step",
    "currency_behavior_policy",
    "generate_currency_dataset",
    "IllustrativeEnvSpec",
    "IllustrativeEnv",
    "illustrative_sample",
    "generate_illustrative_dataset",
    "random_tabular_mdp",
    "make_env",
    "ENV_IDS",
]


@dataclass(frozen=True)
class OUParams:
    """Exchange-rate process and episode settings for Currency Exchange."""

    theta: float = 0.05
    mu: float = 1.5
    sigma: float = 0.2
    p0_mean: float = 1.0
    p0_std: float = 0.05
    dt: float = 1.0
    horizon: int = 50
    initial_amount: float = 100.0

    def __post_init__(self):
        if self.theta < 0 or self.sigma < 0 or self.p0_std < 0:
            raise ValueError("theta, sigma and p0_std must be non-negative")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def stationary_std(self) -> float:
        return self.sigma / math.sqrt(2.0 * self.theta)


@dataclass(frozen=True)
class CurrencyState:
    t: int
    m: float
    p: float

    def as_array(self) -> np.ndarray:
        return np.array([self.t, self.m, self.p], dtype=float)


class CurrencyExchange:
    """Convert ``initial_amount`` of currency A into B before the deadline.

    State ``(t, m, p)``: timestep, currency A left, exchange rate. A positive
    action converts that fraction of ``m`` at rate ``p``; a non-positive
    action converts nothing. Currency still held at the deadline is lost.
    """

    env_id = "currency"
    state_dim = 3
    action_dim = 1

    def __init__(self, params: OUParams = OUParams()):
        self.params = params

    @property
    def horizon(self) -> int:
        return self.params.horizon

    def reset(self, n: int, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        states = np.zeros((n, 3))
        states[:, 1] = p.initial_amount
        states[:, 2] = np.maximum(p.p0_mean + p.p0_std * rng.standard_normal(n), 0.0)
        return states

    def step(self, states: np.ndarray, actions: np.ndarray, rng: np.random.Generator):
        """Advance a batch of states; returns ``(next_states, rewards, terminals)``."""
        p = self.params
        states = np.asarray(states, dtype=float)
        actions = np.asarray(actions, dtype=float).reshape(len(states))
        if np.any(np.abs(actions) > 1.0):
            log.warning("clipping %d actions into [-1, 1]", int(np.sum(np.abs(actions) > 1.0)))
            actions = np.clip(actions, -1.0, 1.0)
        t, m, rate = states[:, 0], states[:, 1], states[:, 2]
        converted = np.maximum(actions, 0.0) * m
        rewards = converted * rate
        noise = rng.standard_normal(len(states))
        new_rate = rate + p.theta * (p.mu - rate) * p.dt + p.sigma * math.sqrt(p.dt) * noise
        next_states = np.stack([t + 1.0, m - converted, np.maximum(new_rate, 0.0)], axis=1)
        return next_states, rewards, self.is_terminal(next_states)

    def is_terminal(self, states: np.ndarray) -> np.ndarray:
        """Deadline rule; tolerant of model-predicted, non-integer timesteps."""
        return np.asarray(states)[..., 0] >= self.params.horizon - 0.5

    @staticmethod
    def behavior_actions(n: int, rng: np.random.Generator) -> np.ndarray:
        convert = rng.random(n) < 0.2
        fraction = 1.0 - rng.random(n)  # Uniform(0, 1]
        return np.where(convert, fraction, -1.0)


def currency_step(state: CurrencyState, action: float, params: OUParams, rng):
    """Single-state wrapper around :meth:`CurrencyExchange.step`."""
    if state.t >= params.horizon:
        raise ValueError("episode already finished")
    nxt, reward, terminal = CurrencyExchange(params).step(state.as_array()[None], np.array([action]), rng)
    t, m, p = nxt[0]
    return CurrencyState(int(round(t)), float(m), float(p)), float(reward[0]), bool(terminal[0])


def currency_behavior_policy(state, rng) -> float:
    """Data-collection policy: convert a Uniform(0, 1] fraction w.p. 0.2, else nothing."""
    return float(CurrencyExchange.behavior_actions(1, rng)[0])


def generate_currency_dataset(n_episodes: int, params: OUParams = OUParams(), seed: int = 0) -> OfflineDataset:
    """Roll the behaviour policy for ``n_episodes`` full episodes (episode-major order)."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = CurrencyExchange(params)
    rng = np.random.default_rng(seed)
    horizon = params.horizon
    states = env.reset(n_episodes, rng)
    cols = {k: [] for k in ("s", "a", "r", "s2", "d")}
    for _ in range(horizon):
        actions = env.behavior_actions(n_episodes, rng)
        nxt, rewards, terminals = env.step(states, actions, rng)
        cols["s"].append(states)
        cols["a"].append(actions)
        cols["r"].append(rewards)
        cols["s2"].append(nxt)
        cols["d"].append(terminals)
        states = nxt

    def flat(key):
        arr = np.stack(cols[key], axis=1)  # (episodes, horizon, ...)
        return arr.reshape(n_episodes * horizon, *arr.shape[2:])

    return OfflineDataset(flat("s"), flat("a")[:, None], flat("r"), flat("s2"), flat("d"),
                          env_id="currency", seed=seed,
                          meta={"n_episodes": n_episodes, "horizon": horizon})


@dataclass(frozen=True)
class IllustrativeEnvSpec:
    """One-step MDP: ``s' ~ N(mean(a), noise(a)^2)`` and reward ``s'``.

    The default shape has an in-data action near 0.4 with a high mean and
    a noise spike, a quiet action near -0.35, and no data beyond 0.6.
    Subclass and override :meth:`mean` / :meth:`noise` for other curves.
    """

    mean_offset: float = 0.25
    mean_amplitude: float = 0.4
    mean_frequency: float = 2.2
    noise_base: float = 0.05
    spike_height: float = 0.5
    spike_center: float = 0.4
    spike_width: float = 0.15
    data_low: float = -0.85
    data_high: float = 0.6
    n_data: int = 2000

    def mean(self, a):
        return self.mean_offset + self.mean_amplitude * np.sin(self.mean_frequency * np.asarray(a, dtype=float))

    def noise(self, a):
        a = np.asarray(a, dtype=float)
        return self.noise_base + self.spike_height * np.exp(-(((a - self.spike_center) / self.spike_width) ** 2))


def illustrative_sample(spec: IllustrativeEnvSpec, action, rng):
    """Draw ``(s', reward)``; ``reward == s'``."""
    s_next = spec.mean(action) + spec.noise(action) * rng.standard_normal(np.shape(action))
    return s_next, s_next


class IllustrativeEnv:
    """Gym-like wrapper of :class:`IllustrativeEnvSpec` (state is a constant 0)."""

    env_id = "illustrative"
    state_dim = 1
    action_dim = 1
    horizon = 1

    def __init__(self, spec: IllustrativeEnvSpec = IllustrativeEnvSpec()):
        self.spec = spec

    def reset(self, n: int, rng) -> np.ndarray:
        return np.zeros((n, 1))

    def step(self, states, actions, rng):
        actions = np.asarray(actions, dtype=float).reshape(len(states))
        s_next, reward = illustrative_sample(self.spec, actions, rng)
        return s_next[:, None], reward, np.ones(len(states), dtype=bool)

    def is_terminal(self, states) -> np.ndarray:
        return np.ones(np.shape(states)[:-1], dtype=bool)


def generate_illustrative_dataset(spec: IllustrativeEnvSpec = IllustrativeEnvSpec(), seed: int = 0) -> OfflineDataset:
    rng = np.random.default_rng(seed)
    actions = rng.uniform(spec.data_low, spec.data_high, size=spec.n_data)
    s_next, rewards = illustrative_sample(spec, actions, rng)
    return OfflineDataset(np.zeros((spec.n_data, 1)), actions[:, None], rewards, s_next[:, None],
                          np.ones(spec.n_data, dtype=bool), env_id="illustrative", seed=seed)


def random_tabular_mdp(n_states: int, n_actions: int, sparsity: float = 0.0, seed: int = 0,
                       discount: float = 0.5) -> TabularMDP:
    """Dirichlet transition rows and Uniform(0, 1) rewards.

    ``sparsity`` is the fraction of successors with zero probability in each
    row; at 1.0 every row is deterministic.
    """
    if n_states < 1 or n_actions < 1:
        raise ValueError("need at least one state and one action")
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError("sparsity must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    k = max(1, int(round((1.0 - sparsity) * n_states)))
    transition = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            support = rng.choice(n_states, size=k, replace=False)
            transition[s, a, support] = rng.dirichlet(np.ones(k))
    transition /= transition.sum(-1, keepdims=True)
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMDP(transition, reward, 0, discount)


ENV_IDS = ("currency", "illustrative")


def make_env(env_id: str, **kwargs):
    if env_id == "currency":
        return CurrencyExchange(OUParams(**kwargs))
    if env_id == "illustrative":
        return IllustrativeEnv(IllustrativeEnvSpec(**kwargs))
    raise ValueError(f"unknown env id {env_id!r}; valid ids: {', '.join(ENV_IDS)}")
