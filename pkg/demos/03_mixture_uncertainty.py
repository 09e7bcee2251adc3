"""Sampling successors from an ensemble mixes both kinds of uncertainty.

Each member is Gaussian with spread sigma_A (aleatoric); member means are
themselves spread by sigma_E (epistemic). Drawing a member and then a
successor gives total variance sigma_A^2 + sigma_E^2, so a CVaR over
those draws penalises model disagreement and intrinsic noise alike.

Run: python3 demos/03_mixture_uncertainty.py
"""
import numpy as np

from riskmbrl.ensemble import SyntheticGaussianSpec, build_synthetic_ensemble
from riskmbrl.risk_measures import gaussian_cvar, static_cvar_of_samples

K = 2.0
rng = np.random.default_rng(0)
print(f"{'sigma_A':>8} {'sigma_E':>8} {'var':>8} {'target':>8} {'CVaR':>8} {'target':>8}")
for sigma_A, sigma_E in [(1.0, 0.0), (0.0, 1.0), (0.7, 1.1), (1.1, 0.7)]:
    ens = build_synthetic_ensemble(SyntheticGaussianSpec(0.0, sigma_E, sigma_A, n_members=200), rng)
    s_next, _ = ens.sample(np.zeros((1, 1)), np.zeros((1, 1)), 100_000, rng)
    v = K * s_next[0, :, 0]
    sd = np.hypot(sigma_A, sigma_E)
    print(f"{sigma_A:8.2f} {sigma_E:8.2f} {v.var():8.3f} {K**2 * sd**2:8.3f} "
          f"{static_cvar_of_samples(v, 0.1):8.3f} {gaussian_cvar(0.0, K * sd, 0.1):8.3f}")
