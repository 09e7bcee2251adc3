"""Policy evaluation, static-risk metrics, score normalisation and reports.

Report file schema (one JSON object, keys in this order)::

    env_id, seed, config_digest, n_episodes, alpha,
    mean, cvar, normalized_mean, normalized_cvar,
    anchors {random_score, expert_score},
    histogram {bin_edges[41], counts[40]},
    returns [n_episodes floats]

A companion ``<stem>_returns.csv`` holds ``episode,return`` rows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .risk_measures import static_cvar_of_samples

__all__ = [
    "NormalizationAnchors",
    "CURRENCY_ANCHORS",
    "EvalReport",
    "normalize_score",
    "run_episodes",
    "evaluate_policy",
    "aggregate_reports",
    "emit_report",
    "load_report",
    "REPORT_SCHEMA",
]

HISTOGRAM_BINS = 40


@dataclass(frozen=True)
class NormalizationAnchors:
    random_score: float
    expert_score: float

    def __post_init__(self):
        if self.expert_score == self.random_score:
            raise ValueError("normalisation anchors must differ")


CURRENCY_ANCHORS = NormalizationAnchors(0.0, 135.0)


def normalize_score(raw, anchors: NormalizationAnchors):
    """Affine map sending the random score to 0 and the expert score to 100."""
    return 100.0 * (np.asarray(raw, dtype=float) - anchors.random_score) / (
        anchors.expert_score - anchors.random_score) if np.ndim(raw) else \
        100.0 * (float(raw) - anchors.random_score) / (anchors.expert_score - anchors.random_score)


@dataclass
class EvalReport:
    returns: list
    alpha: float = 0.1
    anchors: NormalizationAnchors = CURRENCY_ANCHORS
    seed: int = 0
    env_id: str = "currency"
    config_digest: str = ""
    mean: float = field(init=False)
    cvar: float = field(init=False)

    def __post_init__(self):
        self.returns = [float(x) for x in self.returns]
        if not self.returns:
            raise ValueError("an evaluation report needs at least one episode")
        self.mean = float(np.mean(self.returns))
        self.cvar = static_cvar_of_samples(self.returns, self.alpha)

    @property
    def n_episodes(self) -> int:
        return len(self.returns)

    @property
    def normalized_mean(self) -> float:
        return normalize_score(self.mean, self.anchors)

    @property
    def normalized_cvar(self) -> float:
        return normalize_score(self.cvar, self.anchors)

    def histogram(self, bins: int = HISTOGRAM_BINS):
        lo, hi = min(self.returns), max(self.returns)
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(self.returns, bins=bins, range=(lo, hi))
        return counts, edges

    def to_dict(self) -> dict:
        counts, edges = self.histogram()
        return {
            "env_id": self.env_id,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "n_episodes": self.n_episodes,
            "alpha": self.alpha,
            "mean": self.mean,
            "cvar": self.cvar,
            "normalized_mean": self.normalized_mean,
            "normalized_cvar": self.normalized_cvar,
            "anchors": asdict(self.anchors),
            "histogram": {"bin_edges": edges.tolist(), "counts": counts.tolist()},
            "returns": self.returns,
        }


REPORT_SCHEMA = {
    "type": "object",
    "required": ["env_id", "seed", "config_digest", "n_episodes", "alpha", "mean", "cvar",
                 "normalized_mean", "normalized_cvar", "anchors", "histogram", "returns"],
    "properties": {
        "env_id": {"type": "string"},
        "seed": {"type": "integer"},
        "config_digest": {"type": "string"},
        "n_episodes": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "mean": {"type": "number"},
        "cvar": {"type": "number"},
        "normalized_mean": {"type": "number"},
        "normalized_cvar": {"type": "number"},
        "anchors": {
            "type": "object",
            "required": ["random_score", "expert_score"],
            "properties": {"random_score": {"type": "number"}, "expert_score": {"type": "number"}},
        },
        "histogram": {
            "type": "object",
            "required": ["bin_edges", "counts"],
            "properties": {
                "bin_edges": {"type": "array", "items": {"type": "number"},
                              "minItems": HISTOGRAM_BINS + 1, "maxItems": HISTOGRAM_BINS + 1},
                "counts": {"type": "array", "items": {"type": "integer", "minimum": 0},
                           "minItems": HISTOGRAM_BINS, "maxItems": HISTOGRAM_BINS},
            },
        },
        "returns": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    },
}


def run_episodes(env, act, n_episodes: int, rng: np.random.Generator, max_steps: int | None = None) -> np.ndarray:
    """Run ``n_episodes`` in lockstep; ``act`` maps a (B, S) state batch to actions."""
    states = env.reset(n_episodes, rng)
    returns = np.zeros(n_episodes)
    live = np.ones(n_episodes, dtype=bool)
    limit = max_steps or getattr(env, "horizon", 1000)
    for _ in range(limit):
        if not live.any():
            break
        idx = np.flatnonzero(live)
        actions = np.asarray(act(states[idx]), dtype=float).reshape(len(idx), -1)
        nxt, rewards, terminals = env.step(states[idx], actions, rng)
        returns[idx] += rewards
        states[idx] = nxt
        live[idx[terminals]] = False
    return returns


def evaluate_policy(env, agent, n_episodes: int = 200, seed: int = 0, alpha: float = 0.1,
                    anchors: NormalizationAnchors = CURRENCY_ANCHORS, config_digest: str = "") -> EvalReport:
    """Roll the agent's deterministic policy; the agent is only read, never updated."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    returns = run_episodes(env, lambda s: agent.select_action(s, deterministic=True), n_episodes, rng)
    return EvalReport(np.sort(returns).tolist(), alpha, anchors, seed, env.env_id, config_digest)


def aggregate_reports(reports) -> dict:
    """Per-evaluation CVaR then averaged, plus metrics of the pooled returns."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    pooled = EvalReport([r for rep in reports for r in rep.returns], reports[0].alpha, reports[0].anchors,
                        reports[0].seed, reports[0].env_id, reports[0].config_digest)
    return {
        "n_evaluations": len(reports),
        "mean": float(np.mean([r.mean for r in reports])),
        "cvar": float(np.mean([r.cvar for r in reports])),
        "normalized_mean": float(np.mean([r.normalized_mean for r in reports])),
        "normalized_cvar": float(np.mean([r.normalized_cvar for r in reports])),
        "pooled_mean": pooled.mean,
        "pooled_cvar": pooled.cvar,
    }


def emit_report(report: EvalReport, path) -> Path:
    """Write the JSON report and a companion CSV of per-episode returns."""
    if report.n_episodes == 0:
        raise ValueError("refusing to emit a report with zero episodes")
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    with open(path.with_name(path.stem + "_returns.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "return"])
        for i, ret in enumerate(report.returns):
            writer.writerow([i, repr(ret)])
    return path


def load_report(path) -> EvalReport:
    data = json.loads(Path(path).read_text())
    return EvalReport(data["returns"], data["alpha"], NormalizationAnchors(**data["anchors"]),
                      data["seed"], data["env_id"], data["config_digest"])
