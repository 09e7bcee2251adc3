"""Risk-sensitive value iteration on a small random MDP.

The fixed-point solver is compared against the brute-force nested
recursion, and the optimal policies for each risk measure are printed.

Run: python3 demos/02_tabular_dynamic_risk.py
"""
import numpy as np

from riskmbrl.envs import random_tabular_mdp
from riskmbrl.risk_measures import RiskSpec
from riskmbrl.tabular import dynamic_risk_bruteforce, risk_policy_evaluation, risk_value_iteration

mdp = random_tabular_mdp(5, 2, sparsity=0.4, seed=22, discount=0.5)
specs = [RiskSpec.neutral(), RiskSpec.cvar(0.5), RiskSpec.cvar(0.1), RiskSpec.wang(0.75)]

uniform = np.full((mdp.n_states, mdp.n_actions), 0.5)
print("uniform random policy, value at s0")
for spec in specs:
    fixed = risk_policy_evaluation(mdp, uniform, spec)[mdp.initial_state]
    brute = dynamic_risk_bruteforce(mdp, uniform, spec, horizon=12)
    print(f"  {str(spec):<10} fixed point {fixed:.6f}   nested recursion (h=12) {brute:.6f}")

print("\noptimal deterministic policies")
for spec in specs:
    values, policy = risk_value_iteration(mdp, spec)
    print(f"  {str(spec):<10} actions {policy.argmax(1)}  V(s0) = {values[mdp.initial_state]:.4f}")
