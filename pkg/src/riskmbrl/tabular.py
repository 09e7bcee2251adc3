"""Exact risk-sensitive dynamic programming on finite MDPs.

Used as ground truth for the sample-based machinery: the risk-sensitive
Bellman operator here applies the one-step risk measure exactly to each
successor distribution, and :func:`dynamic_risk_bruteforce` evaluates the
nested Markov risk directly as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .risk_measures import RiskSpec, _sorted_weights, wang_distortion

__all__ = [
    "TabularMDP",
    "ConvergenceError",
    "validate_policy",
    "one_step_risk",
    "risk_bellman_q",
    "risk_policy_evaluation",
    "risk_value_iteration",
    "dynamic_risk_bruteforce",
    "bayes_average_mdp",
]

MAX_BRUTEFORCE_HORIZON = 400


class ConvergenceError(RuntimeError):
    pass


@dataclass(eq=False)
class TabularMDP:
    """Finite MDP ``(S, A, T, R, s0, gamma)``.

    transition : array (S, A, S), rows sum to one
    reward : array (S, A)
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_state: int = 0
    discount: float = 0.9

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ValueError("transition must have shape (S, A, S)")
        if self.reward.shape != self.transition.shape[:2]:
            raise ValueError("reward must have shape (S, A)")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(-1) - 1.0) > 1e-9):
            raise ValueError("transition rows must be probability vectors")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie strictly inside (0, 1)")
        if not 0 <= self.initial_state < self.n_states:
            raise ValueError("initial_state out of range")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def reward_bound(self) -> float:
        return float(np.max(np.abs(self.reward)))


def validate_policy(mdp: TabularMDP, policy) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy must have shape (S, A)")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(-1) - 1.0) > 1e-9):
        raise ValueError("policy rows must be probability vectors")
    return policy


def one_step_risk(transition: np.ndarray, values: np.ndarray, spec: RiskSpec) -> np.ndarray:
    """Risk of ``values[s']`` under every successor row in ``transition``.

    ``transition`` has shape ``(..., S)``. All rows share the same value
    vector, so the worst-first ordering is computed once. Ties in ``values``
    share their group's mass in proportion to the base probabilities.
    """
    if spec.kind == "neutral":
        return transition @ values
    order = np.lexsort((np.arange(values.size), values))
    v_sorted = values[order]
    p_sorted = transition[..., order]
    w_sorted = _sorted_weights(p_sorted, spec)
    if values.size > 1 and np.any(v_sorted[1:] == v_sorted[:-1]):
        starts = np.flatnonzero(np.r_[True, v_sorted[1:] != v_sorted[:-1]])
        ends = np.r_[starts[1:], values.size]
        for lo, hi in zip(starts, ends):
            if hi - lo < 2:
                continue
            mass = w_sorted[..., lo:hi].sum(-1, keepdims=True)
            base = p_sorted[..., lo:hi].sum(-1, keepdims=True)
            share = np.divide(p_sorted[..., lo:hi], base,
                              out=np.full_like(p_sorted[..., lo:hi], 1.0 / (hi - lo)),
                              where=base > 0)
            w_sorted[..., lo:hi] = mass * share
    return w_sorted @ v_sorted


def risk_bellman_q(mdp: TabularMDP, values: np.ndarray, spec: RiskSpec) -> np.ndarray:
    """``Q[s, a] = R(s, a) + gamma * rho(V(s') | s' ~ T(s, a, .))``."""
    return mdp.reward + mdp.discount * one_step_risk(mdp.transition, values, spec)


def _stop_threshold(mdp: TabularMDP, tol: float) -> float:
    # a sweep change below this keeps the distance to the fixed point below tol
    return tol * (1.0 - mdp.discount) / mdp.discount


def risk_policy_evaluation(mdp: TabularMDP, policy, spec: RiskSpec, tol: float = 1e-10,
                           max_iter: int = 100_000) -> np.ndarray:
    """Fixed point of the risk-sensitive Bellman evaluation equation.

    Stochastic policies average over actions outside the risk measure:
    ``V(s) = sum_a pi(a|s) [R(s, a) + gamma * rho(V(s') | s, a)]``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    policy = validate_policy(mdp, policy)
    values = np.zeros(mdp.n_states)
    threshold = _stop_threshold(mdp, tol)
    for _ in range(max_iter):
        new = np.sum(policy * risk_bellman_q(mdp, values, spec), axis=1)
        delta = np.max(np.abs(new - values))
        values = new
        if delta <= threshold:
            return values
    raise ConvergenceError(f"no convergence after {max_iter} sweeps (last change {delta:.3e})")


def risk_value_iteration(mdp: TabularMDP, spec: RiskSpec, tol: float = 1e-10,
                         max_iter: int = 100_000):
    """Optimal risk-sensitive values and a greedy deterministic policy.

    Returns ``(values, policy)`` where ``policy`` is a one-hot ``(S, A)``
    table; ties go to the lowest action index.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    values = np.zeros(mdp.n_states)
    threshold = _stop_threshold(mdp, tol)
    for _ in range(max_iter):
        q = risk_bellman_q(mdp, values, spec)
        new = q.max(axis=1)
        delta = np.max(np.abs(new - values))
        values = new
        if delta <= threshold:
            break
    else:
        raise ConvergenceError(f"no convergence after {max_iter} sweeps (last change {delta:.3e})")
    q = risk_bellman_q(mdp, values, spec)
    policy = np.zeros((mdp.n_states, mdp.n_actions))
    policy[np.arange(mdp.n_states), np.argmax(q, axis=1)] = 1.0
    return values, policy


def _risk_direct(probs: np.ndarray, z: np.ndarray, spec: RiskSpec) -> float:
    # Primal formulas, deliberately not the envelope weights used above.
    if spec.kind == "neutral":
        return float(probs @ z)
    if spec.kind == "cvar":
        # Rockafellar-Uryasev: max_t  t - E[(t - Z)^+] / alpha, attained on the support
        support = z[probs > 0]
        return float(max(t - probs @ np.maximum(t - z, 0.0) / spec.param for t in support))
    # distorted expectation: z_min + integral of (1 - g(F(z))) above z_min
    mask = probs > 0
    zs, ps = z[mask], probs[mask]
    levels = np.unique(zs)
    cdf = np.array([ps[zs <= level].sum() for level in levels])
    total = levels[0]
    for j in range(1, levels.size):
        total += (levels[j] - levels[j - 1]) * (1.0 - wang_distortion(min(cdf[j - 1], 1.0), spec.param))
    return float(total)


def dynamic_risk_bruteforce(mdp: TabularMDP, policy, spec: RiskSpec, horizon: int) -> float:
    """Nested Markov risk from ``s0`` truncated after ``horizon`` rewards.

    Evaluates ``R(s0) + rho(gamma R(s1) + rho(gamma^2 R(s2) + ...))`` by
    recursion on (state, time), with the tail beyond the horizon set to 0.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if horizon > MAX_BRUTEFORCE_HORIZON:
        raise ValueError(f"horizon {horizon} exceeds the recursion budget of {MAX_BRUTEFORCE_HORIZON}")
    policy = validate_policy(mdp, policy)
    gamma = mdp.discount

    @lru_cache(maxsize=None)
    def nested(state: int, t: int) -> float:
        total = 0.0
        for a in range(mdp.n_actions):
            pa = policy[state, a]
            if pa == 0.0:
                continue
            term = gamma ** t * mdp.reward[state, a]
            if t + 1 < horizon:
                tail = np.array([nested(s2, t + 1) for s2 in range(mdp.n_states)])
                term += _risk_direct(mdp.transition[state, a], tail, spec)
            total += pa * term
        return total

    return nested(mdp.initial_state, 0)


def bayes_average_mdp(models) -> TabularMDP:
    """Uniform-weight average of a list of MDPs sharing shapes, s0 and gamma."""
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    first = models[0]
    for other in models[1:]:
        if other.transition.shape != first.transition.shape:
            raise ValueError("models have mismatched shapes")
        if other.initial_state != first.initial_state or not math.isclose(other.discount, first.discount):
            raise ValueError("models must share the initial state and discount")
    transition = np.mean([m.transition for m in models], axis=0)
    reward = np.mean([m.reward for m in models], axis=0)
    return TabularMDP(transition, reward, first.initial_state, first.discount)
