"""Risk-averse synthetic rollouts and real/synthetic batch mixing.

Each model step draws ``m`` candidate successors from the ensemble mixture,
scores them with the critic, reweights the uniform candidate distribution
adversarially for the configured risk measure and samples one successor
from the reweighted distribution.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import OfflineDataset
from .risk_measures import RiskSpec, perturbation_rows

log = logging.getLogger(__name__)

__all__ = ["RolloutConfig", "SyntheticBuffer", "generate_rollouts", "mixed_batch", "RolloutError"]


class RolloutError(RuntimeError):
    pass


@dataclass
class RolloutConfig:
    k: int = 1
    m: int = 10
    n_rollouts: int = 1000
    risk: RiskSpec = field(default_factory=lambda: RiskSpec.cvar(0.5))
    # rank candidates by r + gamma * V(s') instead of V(s') alone
    rank_with_reward: bool = False
    retain_iterations: int = 5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.risk, str):
            self.risk = RiskSpec.parse(self.risk)
        if self.k < 1 or self.m < 1 or self.n_rollouts < 1:
            raise ValueError("k, m and n_rollouts must all be >= 1")

    @property
    def buffer_capacity(self) -> int:
        return self.n_rollouts * self.k * self.retain_iterations


class SyntheticBuffer:
    """Fixed-capacity FIFO store of model-generated transitions."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.ptr = 0
        self.size = 0
        self.n_inserted = 0

    def __len__(self) -> int:
        return self.size

    def add(self, states, actions, rewards, next_states, terminals):
        n = len(rewards)
        if n > self.capacity:
            # only the newest `capacity` records survive anyway
            states, actions, rewards, next_states, terminals = (
                x[-self.capacity:] for x in (states, actions, rewards, next_states, terminals))
            self.n_inserted += n - self.capacity
            n = self.capacity
        idx = (self.ptr + np.arange(n)) % self.capacity
        self.states[idx] = states
        self.actions[idx] = np.asarray(actions).reshape(n, -1)
        self.rewards[idx] = rewards
        self.next_states[idx] = next_states
        self.terminals[idx] = terminals
        self.ptr = int((self.ptr + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)
        self.n_inserted += n

    def ordered_indices(self) -> np.ndarray:
        """Physical indices from oldest to newest."""
        start = (self.ptr - self.size) % self.capacity
        return (start + np.arange(self.size)) % self.capacity

    def batch(self, idx) -> dict:
        return {
            "states": self.states[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_states": self.next_states[idx],
            "terminals": self.terminals[idx],
        }

    def state_dict(self) -> dict:
        return {"states": self.states, "actions": self.actions, "rewards": self.rewards,
                "next_states": self.next_states, "terminals": self.terminals,
                "counters": np.array([self.ptr, self.size, self.n_inserted], dtype=np.int64)}

    def load_state_dict(self, state: dict):
        for key in ("states", "actions", "rewards", "next_states", "terminals"):
            getattr(self, key)[...] = state[key]
        self.ptr, self.size, self.n_inserted = (int(x) for x in state["counters"])


def generate_rollouts(ens, dataset: OfflineDataset, policy, critic, cfg: RolloutConfig,
                      buffer: SyntheticBuffer, rng: np.random.Generator, terminal_fn=None,
                      discount: float = 0.99) -> dict:
    """Branch ``cfg.n_rollouts`` rollouts of up to ``cfg.k`` steps from dataset states.

    Parameters
    ----------
    ens : ensemble exposing ``sample(states, actions, m, rng)``
    policy : callable mapping a (B, S) state array to a (B, A) action sample
    critic : callable mapping a (B, S) state array to (B,) value estimates
    terminal_fn : callable flagging terminal predicted states; none if omitted

    Returns per-batch statistics; the transitions go into ``buffer``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    states = dataset.states[rng.integers(len(dataset), size=cfg.n_rollouts)]
    chosen_values, candidate_values = [], []
    n_added = 0
    ended_early = 0
    for step in range(cfg.k):
        if len(states) == 0:
            break
        actions = np.asarray(policy(states), dtype=float).reshape(len(states), -1)
        cand_states, cand_rewards = ens.sample(states, actions, cfg.m, rng)
        n_live, m = cand_rewards.shape
        flat = cand_states.reshape(n_live * m, -1)
        done = (terminal_fn(flat) if terminal_fn is not None else np.zeros(len(flat), dtype=bool)).reshape(n_live, m)
        values = np.asarray(critic(flat), dtype=float).reshape(n_live, m)
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[:5].tolist()
            raise RolloutError(f"non-finite critic values at step {step} (row, candidate): {bad}")
        values = np.where(done, 0.0, values)
        if cfg.rank_with_reward:
            values = cand_rewards + discount * values
        weights = perturbation_rows(values, cfg.risk)
        cum = np.cumsum(weights, axis=1)
        cum[:, -1] = np.inf
        pick = np.argmax(cum > rng.random(n_live)[:, None], axis=1)
        rows = np.arange(n_live)
        next_states = cand_states[rows, pick]
        rewards = cand_rewards[rows, pick]
        terminals = done[rows, pick]
        buffer.add(states, actions, rewards, next_states, terminals)
        n_added += n_live
        chosen_values.append(values[rows, pick])
        candidate_values.append(values.mean(axis=1))
        if step < cfg.k - 1:
            ended_early += int(terminals.sum())
        states = next_states[~terminals]

    chosen = np.concatenate(chosen_values)
    return {
        "mean_chosen_value": float(chosen.mean()),
        "min_chosen_value": float(chosen.min()),
        "mean_candidate_value": float(np.concatenate(candidate_values).mean()),
        "early_termination_rate": ended_early / cfg.n_rollouts,
        "n_added": n_added,
        "buffer_size": len(buffer),
        "buffer_occupancy": len(buffer) / buffer.capacity,
    }


def rollout_log_line(stats: dict, iteration: int) -> str:
    return json.dumps({"iteration": iteration, **stats}, sort_keys=True)


def mixed_batch(dataset: OfflineDataset, buffer: SyntheticBuffer, batch_size: int, f: float,
                rng: np.random.Generator) -> dict:
    """I.i.d. draws: each record is real with probability ``f``, else synthetic.

    Falls back to all-real records (with a warning) while the buffer is empty.
    The returned dict has a boolean ``from_real`` column.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if not 0.0 <= f <= 1.0:
        raise ValueError("f must lie in [0, 1]")
    from_real = rng.random(batch_size) < f
    if len(buffer) == 0 and not from_real.all():
        log.warning("synthetic buffer is empty; sampling the whole batch from real data")
        from_real[:] = True
    n_real = int(from_real.sum())
    real = dataset.batch(rng.integers(len(dataset), size=n_real))
    synth = buffer.batch(rng.integers(len(buffer), size=batch_size - n_real)) if n_real < batch_size else None
    out = {}
    for key, column in real.items():
        full = np.zeros((batch_size,) + column.shape[1:], dtype=column.dtype)
        full[from_real] = column
        if synth is not None:
            full[~from_real] = synth[key]
        out[key] = full
    out["from_real"] = from_real
    return out
