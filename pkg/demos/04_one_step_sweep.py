"""Neutral vs CVaR action values on the one-step illustrative problem.

An ensemble is fitted on actions in the data range only; the sweep then
shows where each objective would act. Takes about 40 s on one core.

Run: python3 demos/04_one_step_sweep.py [seed]
"""
import sys

import numpy as np

from riskmbrl.config import ExperimentConfig
from riskmbrl.experiment import cmd_reproduce_fig2

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
res = cmd_reproduce_fig2(ExperimentConfig(seed=seed, single_thread=True))

grid = np.array(res["grid"])
print(f"data range {res['data_range']}")
print(f"{'a':>6} {'true mean':>10} {'neutral':>9} {'CVaR':>9}")
for i in range(0, len(grid), 20):
    print(f"{grid[i]:6.2f} {res['true_mean'][i]:10.3f} {res['neutral_value'][i]:9.3f} {res['cvar_value'][i]:9.3f}")
print(f"neutral argmax {res['neutral_argmax']:.2f}, CVaR argmax {res['cvar_argmax']:.2f}")
for key in ("safe_action", "noisy_action"):
    p = res[key]
    print(f"{key:<13} a={p['action']:+.2f}  neutral {p['neutral']:+.3f}  CVaR {p['cvar']:+.3f}")
