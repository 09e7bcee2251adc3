"""Numerical oracle suites runnable from the command line.

Each suite compares the production code against an independent route to
the same number (primal formulas, brute-force recursion, Monte Carlo or a
closed form) and returns a :class:`SuiteResult`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .ensemble import SyntheticGaussianSpec, build_synthetic_ensemble
from .envs import random_tabular_mdp
from .risk_measures import (DiscreteDistribution, RiskSpec, cvar_perturbation, gaussian_cvar,
                            static_cvar_of_samples, wang_perturbation)
from .tabular import _risk_direct, dynamic_risk_bruteforce, risk_policy_evaluation

__all__ = ["SuiteResult", "envelope_suite", "closed_form_suite", "tabular_suite", "mixture_suite",
           "run_oracle_suites"]

ENVELOPE_ALPHAS = (0.05, 0.1, 0.5, 1.0)
WANG_ETAS = (0.0, 0.1, 0.5, 0.75, 10.0)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def envelope_suite(seed: int = 0, n_dists: int = 200, inject_fault: bool = False) -> SuiteResult:
    """Envelope feasibility of the CVaR/Wang weights plus CVaR optimality.

    Optimality compares the weighted mean against the Rockafellar-Uryasev
    primal value; feasibility alone cannot tell the worst samples from the
    best ones. ``inject_fault`` sorts best-first, which must be caught.
    """
    rng = np.random.default_rng(seed)
    worst_sum = worst_cap = worst_opt = worst_wang = 0.0
    for _ in range(n_dists):
        m = int(rng.integers(2, 51))
        values = rng.normal(size=m) * rng.uniform(0.1, 10.0)
        dist = DiscreteDistribution.uniform(values)
        for alpha in ENVELOPE_ALPHAS:
            if inject_fault:
                w = cvar_perturbation(DiscreteDistribution.uniform(-values), alpha)
            else:
                w = cvar_perturbation(dist, alpha)
            worst_sum = max(worst_sum, abs(w.sum() - 1.0))
            worst_cap = max(worst_cap, float(np.max(w - 1.0 / (m * alpha))), float(-w.min()))
            primal = _risk_direct(np.full(m, 1.0 / m), values, RiskSpec.cvar(alpha))
            worst_opt = max(worst_opt, abs(float(w @ values) - primal) / (1.0 + abs(primal)))
        for eta in WANG_ETAS:
            w = wang_perturbation(dist, eta)
            worst_wang = max(worst_wang, abs(w.sum() - 1.0), float(-w.min()))
    ok = worst_sum <= 1e-9 and worst_cap <= 1e-9 and worst_opt <= 1e-9 and worst_wang <= 1e-9
    return SuiteResult("risk envelope", ok,
                       f"sum err {worst_sum:.1e}, cap excess {worst_cap:.1e}, "
                       f"primal gap {worst_opt:.1e}, wang err {worst_wang:.1e}")


@_timed
def closed_form_suite(seed: int = 0, n_cases: int = 10, n_samples: int = 1_000_000) -> SuiteResult:
    """Gaussian CVaR closed form against Monte Carlo."""
    rng = np.random.default_rng(seed)
    anchor = gaussian_cvar(0.0, 1.0, 0.5)
    ok = abs(anchor + np.sqrt(2.0 / np.pi)) <= 1e-4
    worst = 0.0
    for _ in range(n_cases):
        mu, sigma, alpha = rng.uniform(-5, 5), rng.uniform(0.1, 3.0), rng.uniform(0.05, 0.95)
        exact = gaussian_cvar(mu, sigma, alpha)
        mc = static_cvar_of_samples(mu + sigma * rng.standard_normal(n_samples), alpha)
        rel = abs(mc - exact) / max(abs(exact), 1e-12)
        worst = max(worst, rel)
    ok = ok and worst <= 0.01
    return SuiteResult("gaussian CVaR closed form", ok, f"anchor {anchor:.6f}, worst MC rel err {worst:.2e}")


@_timed
def tabular_suite(seed: int = 0, n_mdps: int = 20, horizon: int = 12) -> SuiteResult:
    """Fixed-point policy evaluation against the truncated nested recursion."""
    specs = (RiskSpec.neutral(), RiskSpec.cvar(0.5), RiskSpec.wang(0.5))
    worst_ratio = 0.0
    for i in range(n_mdps):
        mdp = random_tabular_mdp(5, 2, sparsity=0.4, seed=seed * 1000 + i, discount=0.5)
        policy = np.random.default_rng(seed * 1000 + i).dirichlet(np.ones(2), size=5)
        bound = mdp.discount ** horizon * mdp.reward_bound / (1.0 - mdp.discount) + 1e-6
        for spec in specs:
            v = risk_policy_evaluation(mdp, policy, spec)[mdp.initial_state]
            brute = dynamic_risk_bruteforce(mdp, policy, spec, horizon)
            worst_ratio = max(worst_ratio, abs(v - brute) / bound)
    return SuiteResult("tabular DP vs brute force", worst_ratio <= 1.0,
                       f"worst |gap| / bound = {worst_ratio:.3f}")


@_timed
def mixture_suite(seed: int = 0, n_draws: int = 100_000, K: float = 2.0, mu0: float = 0.0,
                sigma_A: float = 0.7, sigma_E: float = 1.1, alpha: float = 0.1) -> SuiteResult:
    """Variance and CVaR of a linear value of a mixture-drawn successor."""
    rng = np.random.default_rng(seed)
    ens = build_synthetic_ensemble(SyntheticGaussianSpec(mu0, sigma_E, sigma_A, n_members=200), rng)
    s_next, _ = ens.sample(np.zeros((1, 1)), np.zeros((1, 1)), n_draws, rng)
    values = K * s_next[0, :, 0]
    total_sd = np.sqrt(sigma_A ** 2 + sigma_E ** 2)
    var_expected = K ** 2 * total_sd ** 2
    var_rel = abs(values.var() - var_expected) / var_expected
    cvar_expected = gaussian_cvar(K * mu0, K * total_sd, alpha)
    cvar_rel = abs(static_cvar_of_samples(values, alpha) - cvar_expected) / abs(cvar_expected)
    return SuiteResult("mixture variance / CVaR", var_rel <= 0.05 and cvar_rel <= 0.03,
                       f"variance rel err {var_rel:.3%}, CVaR rel err {cvar_rel:.3%}")


def run_oracle_suites(seed: int = 0, inject_fault: bool = False, out=print) -> bool:
    results = [
        envelope_suite(seed, inject_fault=inject_fault),
        closed_form_suite(seed),
        tabular_suite(seed),
        mixture_suite(seed),
    ]
    width = max(len(r.name) for r in results)
    out(f"{'suite':<{width}}  result  time    detail")
    for r in results:
        out(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:5.1f}s  {r.detail}")
    ok = all(r.passed for r in results)
    out(f"{sum(r.passed for r in results)}/{len(results)} suites passed")
    return ok
