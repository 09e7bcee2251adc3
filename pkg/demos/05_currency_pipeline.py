"""End-to-end run on the currency exchange task at a reduced budget.

Generates data, fits the dynamics ensemble, trains with risk-averse
rollouts and then with neutral ones on the same model, and prints the
normalised mean and CVaR_0.1 of each. The full-size runs behind the
acceptance tests use 300 x 100 updates; this uses 40 x 100 and takes
about 4 minutes on one core.

Run: python3 demos/05_currency_pipeline.py [out_dir]
"""
import sys
from pathlib import Path

from riskmbrl.config import ExperimentConfig
from riskmbrl.experiment import cmd_gen_data, cmd_train

root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_runs")
base = ExperimentConfig(seed=0, single_thread=True).with_overrides({
    "train.n_iter": 40, "train.eval_every": 10, "train.final_eval_iters": 3, "train.checkpoint_every": 20,
    "model.path": str(root / "model.npz"),
})

data = root / "dataset.npz"
if not data.exists():
    cmd_gen_data(base.with_overrides({"data.path": str(data)}))

for risk in ("cvar:0.5", "neutral"):
    cfg = base.with_overrides({"data.path": str(data), "rollout.risk": risk, "out_dir": str(root / risk.replace(":", "_"))})
    summary = cmd_train(cfg)
    print(f"{risk:<9} normalised mean {summary['normalized_mean']:6.1f}   "
          f"normalised CVaR_0.1 {summary['normalized_cvar']:6.1f}")
