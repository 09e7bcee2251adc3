"""How CVaR and Wang reweight a set of sampled successor values.

Run: python3 demos/01_risk_perturbations.py
"""
import numpy as np

from riskmbrl.risk_measures import (DiscreteDistribution, RiskSpec, cvar_perturbation, risk_value,
                                    wang_perturbation)

np.set_printoptions(precision=3, suppress=True)
rng = np.random.default_rng(0)

# Ten equally likely successor values, say V(s') under ten model draws.
values = np.sort(rng.normal(1.0, 1.0, size=10))
dist = DiscreteDistribution.uniform(values)
print("values         ", values)
print("base weights   ", np.full(10, 0.1))

# CVaR at 0.3 spends the whole budget on the worst 30% of outcomes.
w = cvar_perturbation(dist, 0.3)
print("CVaR 0.3       ", w)

# Wang shifts mass smoothly toward the bad end; no sample drops to zero.
w_wang = wang_perturbation(dist, 0.75)
print("Wang 0.75      ", w_wang)

for spec in (RiskSpec.neutral(), RiskSpec.cvar(0.3), RiskSpec.wang(0.75)):
    print(f"{str(spec):<12} value = {risk_value(dist, spec):+.4f}")

# Smaller alpha means more pessimism, all the way down to the minimum.
for alpha in (1.0, 0.5, 0.2, 0.1, 0.05):
    print(f"alpha={alpha:<5} CVaR = {risk_value(dist, RiskSpec.cvar(alpha)):+.4f}")
print("min value      ", values.min())
