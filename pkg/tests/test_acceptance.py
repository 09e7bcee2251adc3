"""Acceptance gate: one test per criterion, each logging a PASS/FAIL line.

The currency runs (criteria 6 and 7) take roughly 45 minutes on one core.
"""

import time

import numpy as np
import pytest
import torch

from riskmbrl.actor_critic import AgentConfig, SACAgent, squashed_log_prob
from riskmbrl.config import ExperimentConfig
from riskmbrl.data import save_dataset
from riskmbrl.ensemble import EnsembleMLP, SyntheticGaussianSpec, build_synthetic_ensemble, gaussian_nll
from riskmbrl.envs import generate_currency_dataset, random_tabular_mdp
from riskmbrl.experiment import cmd_reproduce_fig2, cmd_train
from riskmbrl.risk_measures import (DiscreteDistribution, RiskSpec, cvar_perturbation, gaussian_cvar,
                                    static_cvar_of_samples, wang_perturbation)
from riskmbrl.tabular import dynamic_risk_bruteforce, risk_policy_evaluation

CURRENCY_SEEDS = (0, 1, 2)


def test_criterion_1_risk_envelope(criterion_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_sum = worst_cap = worst_wang = 0.0
    for _ in range(200):
        m = int(rng.integers(2, 51))
        dist = DiscreteDistribution.uniform(rng.normal(size=m) * rng.uniform(0.1, 10))
        for alpha in (0.05, 0.1, 0.5, 1.0):
            w = cvar_perturbation(dist, alpha)
            worst_sum = max(worst_sum, abs(w.sum() - 1))
            worst_cap = max(worst_cap, float(np.max(w)) - 1 / (m * alpha))
        for eta in (0.0, 0.1, 0.5, 0.75, 10.0):
            worst_wang = max(worst_wang, abs(wang_perturbation(dist, eta).sum() - 1))
    elapsed = time.perf_counter() - t0
    ok = worst_sum <= 1e-9 and worst_cap <= 1e-9 and worst_wang <= 1e-9 and elapsed < 5
    criterion_log(1, ok, f"sum err {worst_sum:.1e}, cap excess {worst_cap:.1e}, wang sum err {worst_wang:.1e}, "
                         f"{elapsed:.2f}s")
    assert ok


def test_criterion_2_gaussian_cvar(criterion_log):
    t0 = time.perf_counter()
    anchor = gaussian_cvar(0, 1, 0.5)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        mu, sigma, alpha = rng.uniform(-5, 5), rng.uniform(0.1, 3), rng.uniform(0.05, 0.95)
        exact = gaussian_cvar(mu, sigma, alpha)
        mc = static_cvar_of_samples(mu + sigma * rng.standard_normal(1_000_000), alpha)
        worst = max(worst, abs(mc - exact) / abs(exact))
    elapsed = time.perf_counter() - t0
    ok = abs(anchor - (-0.79788)) <= 1e-4 and worst < 0.01 and elapsed < 30
    criterion_log(2, ok, f"CVaR_0.5 N(0,1) = {anchor:.6f}, worst MC rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_tabular_oracle(criterion_log):
    t0 = time.perf_counter()
    h, worst_ratio = 12, 0.0
    for i in range(20):
        mdp = random_tabular_mdp(5, 2, sparsity=0.4, seed=100 + i, discount=0.5)
        policy = np.random.default_rng(100 + i).dirichlet(np.ones(2), size=5)
        bound = 0.5 ** h * mdp.reward_bound / (1 - 0.5) + 1e-6
        for spec in (RiskSpec.neutral(), RiskSpec.cvar(0.5), RiskSpec.wang(0.5)):
            gap = abs(risk_policy_evaluation(mdp, policy, spec)[0] - dynamic_risk_bruteforce(mdp, policy, spec, h))
            worst_ratio = max(worst_ratio, gap / bound)
    elapsed = time.perf_counter() - t0
    ok = worst_ratio <= 1.0 and elapsed < 60
    criterion_log(3, ok, f"worst gap / bound {worst_ratio:.3f} over 60 cases, {elapsed:.1f}s")
    assert ok


def test_criterion_4_mixture_uncertainty(criterion_log):
    t0 = time.perf_counter()
    K, sigma_A, sigma_E = 2.0, 0.7, 1.1
    rng = np.random.default_rng(11)
    ens = build_synthetic_ensemble(SyntheticGaussianSpec(0.0, sigma_E, sigma_A, n_members=200), rng)
    s_next, _ = ens.sample(np.zeros((1, 1)), np.zeros((1, 1)), 100_000, rng)
    v = K * s_next[0, :, 0]
    var_target = K ** 2 * (sigma_A ** 2 + sigma_E ** 2)
    cvar_target = gaussian_cvar(0.0, K * np.sqrt(sigma_A ** 2 + sigma_E ** 2), 0.1)
    var_rel = abs(v.var() - var_target) / var_target
    cvar_rel = abs(static_cvar_of_samples(v, 0.1) - cvar_target) / abs(cvar_target)
    elapsed = time.perf_counter() - t0
    ok = var_rel <= 0.05 and cvar_rel <= 0.03 and elapsed < 10
    criterion_log(4, ok, f"variance {v.var():.3f} vs {var_target:.3f} ({var_rel:.2%}), "
                         f"CVaR rel err {cvar_rel:.2%}, {elapsed:.1f}s")
    assert ok


def test_criterion_5_one_step_sweep(criterion_log):
    t0 = time.perf_counter()
    lines, n_good = [], 0
    for seed in range(5):
        res = cmd_reproduce_fig2(ExperimentConfig(seed=seed, single_thread=True))
        lo, hi = res["data_range"]
        a = res["neutral_argmax"] >= 0.9
        b = lo <= res["cvar_argmax"] <= hi
        safe, noisy = res["safe_action"], res["noisy_action"]
        c = safe["cvar"] > noisy["cvar"] and safe["neutral"] < noisy["neutral"]
        n_good += a and b and c
        lines.append(f"seed {seed}: neutral argmax {res['neutral_argmax']:.2f} [{'ok' if a else 'x'}], "
                     f"CVaR argmax {res['cvar_argmax']:.2f} [{'ok' if b else 'x'}], "
                     f"ordering [{'ok' if c else 'x'}]")
    elapsed = time.perf_counter() - t0
    ok = n_good >= 4 and elapsed < 600
    criterion_log(5, ok, f"{n_good}/5 seeds with 3/3 properties, {elapsed:.0f}s; " + "; ".join(lines))
    assert ok


@pytest.fixture(scope="module")
def currency_runs(tmp_path_factory):
    """Both arms for each seed; each seed fits one ensemble shared by its two arms."""
    root = tmp_path_factory.mktemp("currency")
    data_path = save_dataset(generate_currency_dataset(1000, seed=0), root / "dataset.npz")
    t0 = time.perf_counter()
    results = {"cvar": [], "neutral": []}
    for seed in CURRENCY_SEEDS:
        for arm, risk in (("cvar", "cvar:0.5"), ("neutral", "neutral")):
            cfg = ExperimentConfig(seed=seed, single_thread=True).with_overrides({
                "out_dir": str(root / f"{arm}_{seed}"),
                "data.path": str(data_path),
                "model.path": str(root / f"model_{seed}.npz"),
                "rollout.risk": risk,
            })
            results[arm].append(cmd_train(cfg))
    results["seconds"] = time.perf_counter() - t0
    return results


def _arm_means(runs):
    return {arm: (float(np.mean([r["normalized_mean"] for r in runs[arm]])),
                  float(np.mean([r["normalized_cvar"] for r in runs[arm]]))) for arm in ("cvar", "neutral")}


def test_criterion_6_ablation_gap(currency_runs, criterion_log):
    m = _arm_means(currency_runs)
    gap = m["cvar"][1] - m["neutral"][1]
    per_seed = ", ".join(f"seed {s}: {c['normalized_cvar']:.1f} vs {n['normalized_cvar']:.1f}"
                         for s, c, n in zip(CURRENCY_SEEDS, currency_runs["cvar"], currency_runs["neutral"]))
    hours = currency_runs["seconds"] / 3600
    ok = gap >= 15 and hours < 2
    criterion_log(6, ok, f"normalized CVaR_0.1 risk-averse {m['cvar'][1]:.1f} vs neutral {m['neutral'][1]:.1f} "
                         f"(gap {gap:.1f}); {per_seed}; {hours:.2f} h")
    assert ok


def test_criterion_7_mean_tradeoff(currency_runs, criterion_log):
    m = _arm_means(currency_runs)
    ok = m["neutral"][0] > m["cvar"][0] and m["neutral"][1] < m["cvar"][1]
    criterion_log(7, ok, f"mean: neutral {m['neutral'][0]:.1f} vs risk-averse {m['cvar'][0]:.1f}; "
                         f"CVaR: neutral {m['neutral'][1]:.1f} vs risk-averse {m['cvar'][1]:.1f}")
    assert ok


def _max_rel_fd_error(fn, inputs, eps=1e-6):
    """Largest |analytic - central difference| / max(1, |central difference|) over all input entries."""
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = fn(*inputs)
    grads = torch.autograd.grad(out, inputs)
    worst = 0.0
    for x, g in zip(inputs, grads):
        flat = x.detach().view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = fn(*inputs).item()
            flat[i] = orig - eps
            down = fn(*inputs).item()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            worst = max(worst, abs(g.view(-1)[i].item() - fd) / max(1.0, abs(fd)))
    return worst


def test_criterion_8_gradients_and_determinism(tmp_path, criterion_log):
    t0 = time.perf_counter()
    g = torch.Generator().manual_seed(0)
    f64 = dict(generator=g, dtype=torch.float64)

    net = EnsembleMLP(3, 4, 3, hidden=8, n_layers=2).double()
    x, y = torch.randn(3, 6, 4, **f64), torch.randn(3, 6, 3, **f64)
    err_nll = _max_rel_fd_error(lambda inp: gaussian_nll(*net(inp), y).sum(), [x])
    err_nll = max(err_nll, _max_rel_fd_error(lambda m, lv: gaussian_nll(m, lv, y).sum(),
                                             [torch.randn(3, 6, 3, **f64), torch.randn(3, 6, 3, **f64)]))

    agent = SACAgent(3, 1, AgentConfig(hidden=8))
    for module in agent.modules().values():
        module.double()
    agent.log_alpha.data = agent.log_alpha.data.double()
    obs, nxt = torch.randn(8, 3, **f64), torch.randn(8, 3, **f64)
    rew, nd = torch.randn(8, **f64), torch.ones(8, dtype=torch.float64)

    def critic(a):
        agent.generator.manual_seed(1)
        return agent.critic_loss(obs, a, rew, nxt, nd)

    err_critic = _max_rel_fd_error(critic, [torch.rand(8, 1, **f64) * 2 - 1])
    err_logp = _max_rel_fd_error(lambda u, m, ls: squashed_log_prob(u, m, ls).sum(),
                                 [torch.randn(5, 2, **f64) for _ in range(3)])
    grads_ok = max(err_nll, err_critic, err_logp) < 1e-4

    overrides = {"data.n_episodes": 20, "model.epochs": 3, "model.hidden": 16, "model.n_layers": 2,
                 "rollout.n_rollouts": 100, "train.n_iter": 5, "train.updates_per_iter": 20,
                 "train.eval_every": 2, "train.final_eval_iters": 2, "eval.n_episodes": 20}
    logs = []
    for name in ("run_a", "run_b"):
        cfg = ExperimentConfig(seed=3, single_thread=True).with_overrides({**overrides, "out_dir": str(tmp_path / name)})
        cmd_train(cfg)
        logs.append((tmp_path / name / "metrics.jsonl").read_text())
    same = logs[0] == logs[1] and len(logs[0]) > 0
    elapsed = time.perf_counter() - t0
    ok = grads_ok and same and elapsed < 300
    criterion_log(8, ok, f"max rel FD error: NLL {err_nll:.1e}, critic {err_critic:.1e}, log-prob {err_logp:.1e}; "
                         f"metric logs identical: {same}; {elapsed:.0f}s")
    assert ok
