"""End-to-end experiment commands: data generation, training, evaluation and
the one-step illustrative sweep.

A training run directory looks like::

    manifest.json          written once, before the first update
    config.ini             resolved configuration
    dataset.npz            unless [data] path points elsewhere
    model.npz              fitted ensemble (or the one named by [model] path)
    metrics.jsonl          one JSON object per iteration, append-only
    checkpoints/agent_iterNNNNN.npz, checkpoints/trainer_iterNNNNN.npz
    eval/iterNNNNN.json (+ _returns.csv)
    agent_final.npz, summary.json
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
import subprocess
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .actor_critic import SACAgent, load_agent, save_agent
from .config import ExperimentConfig
from .data import NormStats, OfflineDataset, load_dataset, save_dataset, savez_stable
from .ensemble import _EnsembleSampler, fit_ensemble, load_ensemble, save_ensemble
from .envs import generate_currency_dataset, generate_illustrative_dataset, make_env
from .evaluation import NormalizationAnchors, aggregate_reports, emit_report, evaluate_policy, load_report
from .risk_measures import RiskSpec, perturbation_rows
from .rollouts import SyntheticBuffer, generate_rollouts, mixed_batch

log = logging.getLogger(__name__)

__all__ = ["RunError", "RunPaths", "cmd_gen_data", "cmd_train", "cmd_evaluate", "cmd_reproduce_fig2",
           "fig2_sweep", "read_metrics"]


class RunError(RuntimeError):
    """A command could not complete; the message says why."""


@dataclasses.dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def manifest(self): return self.root / "manifest.json"
    @property
    def config(self): return self.root / "config.ini"
    @property
    def metrics(self): return self.root / "metrics.jsonl"
    @property
    def checkpoints(self): return self.root / "checkpoints"
    @property
    def eval_dir(self): return self.root / "eval"
    @property
    def final_agent(self): return self.root / "agent_final.npz"
    @property
    def summary(self): return self.root / "summary.json"

    def agent_ckpt(self, it: int) -> Path:
        return self.checkpoints / f"agent_iter{it:05d}.npz"

    def trainer_ckpt(self, it: int) -> Path:
        return self.checkpoints / f"trainer_iter{it:05d}.npz"

    def eval_report(self, it: int) -> Path:
        return self.eval_dir / f"iter{it:05d}.json"


def _git_stamp() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _setup_threads(cfg: ExperimentConfig):
    if cfg.single_thread:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def _dataset_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.data.path) if cfg.data.path else Path(cfg.out_dir) / "dataset.npz"


def _generate(cfg: ExperimentConfig) -> OfflineDataset:
    if cfg.env.env_id == "currency":
        return generate_currency_dataset(cfg.data.n_episodes, cfg.currency, seed=cfg.data.seed)
    return generate_illustrative_dataset(cfg.illustrative, seed=cfg.data.seed)


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(cfg: ExperimentConfig, overwrite: bool = False) -> Path:
    """Write the behaviour dataset and a small manifest next to it."""
    path = _dataset_path(cfg)
    if path.exists() and not overwrite:
        raise RunError(f"{path} already exists; pass --overwrite to replace it")
    path.parent.mkdir(parents=True, exist_ok=True)
    data = _generate(cfg)
    save_dataset(data, path)
    manifest = {
        "kind": "dataset",
        "version": __version__,
        "git": _git_stamp(),
        "env_id": cfg.env.env_id,
        "env_params": cfg.env_kwargs(),
        "seed": cfg.data.seed,
        "n_records": len(data),
        "dataset": str(path),
    }
    path.with_name(path.stem + "_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    log.info("wrote %d records to %s", len(data), path)
    return path


# ---------------------------------------------------------------------------
# train


def _write_manifest(cfg: ExperimentConfig, paths: RunPaths, dataset: Path, model: Path):
    manifest = {
        "kind": "train",
        "version": __version__,
        "git": _git_stamp(),
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "config": cfg.to_dict(),
        "files": {
            "config": paths.config.name,
            "dataset": str(dataset),
            "model": str(model),
            "metrics": paths.metrics.name,
            "checkpoint_dir": paths.checkpoints.name,
            "checkpoint_patterns": ["agent_iter{iteration:05d}.npz", "trainer_iter{iteration:05d}.npz"],
            "eval_dir": paths.eval_dir.name,
            "eval_patterns": ["iter{iteration:05d}.json", "iter{iteration:05d}_returns.csv"],
            "final_agent": paths.final_agent.name,
            "summary": paths.summary.name,
        },
    }
    paths.config.write_text(cfg.to_ini())
    paths.manifest.write_text(json.dumps(manifest, indent=2) + "\n")


def _eval_seed(seed: int, it: int) -> int:
    return int(np.random.SeedSequence([seed, it, 7]).generate_state(1)[0])


def _save_trainer(path: Path, it: int, buffer: SyntheticBuffer, rng: np.random.Generator):
    savez_stable(path, iteration=np.int64(it), rng=np.array(json.dumps(rng.bit_generator.state)),
                 **{f"buffer/{k}": v for k, v in buffer.state_dict().items()})


def _load_trainer(path: Path, buffer: SyntheticBuffer, rng: np.random.Generator) -> int:
    with np.load(path) as z:
        buffer.load_state_dict({k[len("buffer/"):]: z[k] for k in z.files if k.startswith("buffer/")})
        rng.bit_generator.state = json.loads(str(z["rng"]))
        return int(z["iteration"])


def _latest_checkpoint(paths: RunPaths) -> int:
    its = [int(m.group(1)) for p in paths.checkpoints.glob("trainer_iter*.npz")
           if (m := re.fullmatch(r"trainer_iter(\d+)\.npz", p.name))
           and paths.agent_ckpt(int(m.group(1))).exists()]
    return max(its, default=0)


def _truncate_metrics(path: Path, last_iteration: int):
    if not path.exists():
        return
    keep = [line for line in path.read_text().splitlines()
            if line.strip() and json.loads(line)["iteration"] <= last_iteration]
    path.write_text("".join(line + "\n" for line in keep))


def read_metrics(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def _load_or_fit_model(cfg: ExperimentConfig, data: OfflineDataset, path: Path):
    mcfg = cfg.model_config()
    if path.exists():
        ens = load_ensemble(path)
        if (ens.state_dim, ens.action_dim) != (data.state_dim, data.action_dim):
            raise RunError(f"model {path} has dims {(ens.state_dim, ens.action_dim)}, dataset has "
                           f"{(data.state_dim, data.action_dim)}")
        log.info("loaded ensemble from %s", path)
        return ens
    t0 = time.time()
    ens = fit_ensemble(data, mcfg)
    log.info("fitted ensemble in %.1fs; holdout nll %s; elites %s", time.time() - t0,
             np.round(ens.holdout_nll, 3).tolist(), ens.elites)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_ensemble(ens, path)
    return ens


def cmd_train(cfg: ExperimentConfig, resume: bool = False) -> dict:
    """Fit (or load) the model, then alternate risk-averse rollouts and agent updates."""
    _setup_threads(cfg)
    paths = RunPaths(Path(cfg.out_dir))
    env = make_env(cfg.env.env_id, **cfg.env_kwargs())
    data_path = _dataset_path(cfg)
    model_path = Path(cfg.model.path) if cfg.model.path else paths.root / "model.npz"

    if paths.manifest.exists():
        if not resume:
            raise RunError(f"{paths.root} already holds a run; pass --resume to continue it")
        old = json.loads(paths.manifest.read_text())
        if old["config_digest"] != cfg.digest():
            raise RunError("cannot resume: the configuration differs from the manifest's")
    paths.root.mkdir(parents=True, exist_ok=True)

    if not data_path.exists():
        if cfg.data.path:
            raise RunError(f"dataset not found: {data_path}")
        save_dataset(_generate(cfg), data_path)
    data = load_dataset(data_path)
    if data.env_id != cfg.env.env_id:
        raise RunError(f"dataset env {data.env_id!r} does not match config env {cfg.env.env_id!r}")
    if not paths.manifest.exists():
        _write_manifest(cfg, paths, data_path, model_path)

    ens = _load_or_fit_model(cfg, data, model_path)
    rcfg = cfg.rollout_config()
    acfg = cfg.agent_config()
    anchors = NormalizationAnchors(cfg.eval.random_score, cfg.eval.expert_score)
    buffer = SyntheticBuffer(rcfg.buffer_capacity, data.state_dim, data.action_dim)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))

    start = 0
    if resume:
        start = _latest_checkpoint(paths)
    if start > 0:
        agent = load_agent(paths.agent_ckpt(start))
        _load_trainer(paths.trainer_ckpt(start), buffer, rng)
        _truncate_metrics(paths.metrics, start)
        log.info("resumed from iteration %d", start)
    else:
        agent = SACAgent(data.state_dim, data.action_dim, acfg, NormStats.fit(data.states))
        if paths.metrics.exists():
            paths.metrics.unlink()
    paths.checkpoints.mkdir(exist_ok=True)
    paths.eval_dir.mkdir(exist_ok=True)

    tc = cfg.train
    final_from = tc.n_iter - tc.final_eval_iters + 1
    for it in range(start + 1, tc.n_iter + 1):
        stats = generate_rollouts(ens, data, agent.select_action, agent.value_estimate, rcfg, buffer, rng,
                                  terminal_fn=env.is_terminal, discount=acfg.discount)
        losses = []
        for _ in range(tc.updates_per_iter):
            batch = mixed_batch(data, buffer, acfg.batch_size, tc.real_ratio, rng)
            try:
                losses.append(agent.update(batch))
            except FloatingPointError as exc:
                raise RunError(f"iteration {it}: {exc}") from exc
        record = {"iteration": it, **{f"rollout/{k}": v for k, v in stats.items()}}
        if losses:
            for key in losses[0]:
                record[f"agent/{key}"] = float(np.mean([row[key] for row in losses]))
        if it == 1 or it % tc.eval_every == 0 or it >= final_from:
            report = evaluate_policy(env, agent, cfg.eval.n_episodes, _eval_seed(cfg.seed, it),
                                     cfg.eval.alpha, anchors, cfg.digest())
            emit_report(report, paths.eval_report(it))
            record.update({"eval/mean": report.mean, "eval/cvar": report.cvar,
                           "eval/normalized_mean": report.normalized_mean,
                           "eval/normalized_cvar": report.normalized_cvar})
        with open(paths.metrics, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        if it % tc.checkpoint_every == 0 or it == tc.n_iter:
            save_agent(agent, paths.agent_ckpt(it))
            _save_trainer(paths.trainer_ckpt(it), it, buffer, rng)
        if it == 1 or it % tc.eval_every == 0:
            log.info("iter %d: %s", it, {k: round(v, 3) for k, v in record.items()
                                          if k.startswith("eval/") or k == "agent/critic_loss"})

    save_agent(agent, paths.final_agent)
    reports = [load_report(paths.eval_report(it)) for it in range(max(1, final_from), tc.n_iter + 1)]
    summary = {"config_digest": cfg.digest(), "seed": cfg.seed, "risk": str(rcfg.risk),
               "ablate_ensemble": tc.ablate_ensemble, **aggregate_reports(reports)}
    paths.summary.write_text(json.dumps(summary, indent=2) + "\n")
    return summary


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(cfg: ExperimentConfig, checkpoint, out=None) -> Path:
    _setup_threads(cfg)
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise RunError(f"checkpoint not found: {checkpoint}")
    env = make_env(cfg.env.env_id, **cfg.env_kwargs())
    agent = load_agent(checkpoint)
    if (agent.state_dim, agent.action_dim) != (env.state_dim, env.action_dim):
        raise RunError(f"checkpoint dims (state {agent.state_dim}, action {agent.action_dim}) do not match "
                       f"env {env.env_id!r} (state {env.state_dim}, action {env.action_dim})")
    anchors = NormalizationAnchors(cfg.eval.random_score, cfg.eval.expert_score)
    report = evaluate_policy(env, agent, cfg.eval.n_episodes, cfg.seed, cfg.eval.alpha, anchors, cfg.digest())
    out = Path(out) if out else Path(cfg.out_dir) / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    return emit_report(report, out)


# ---------------------------------------------------------------------------
# one-step illustrative sweep


class _PointView(_EnsembleSampler):
    """Elite-averaged mean with zero spread: removes both kinds of uncertainty."""

    def __init__(self, ens):
        self.ens = ens
        self.state_dim = ens.state_dim
        self.elites = [0]

    def member_moments(self, states, actions):
        mean, _ = self.ens.member_moments(states, actions)
        mean = mean.mean(axis=0, keepdims=True)
        return mean, np.zeros_like(mean)


def fig2_sweep(ens, grid, m: int, alpha: float, seed: int) -> dict:
    """Neutral and CVaR value of each action from ``m`` sampled successors.

    The same random stream is reused for every action so the two curves are
    smooth in ``a`` (common random numbers).
    """
    risk = RiskSpec.cvar(alpha)
    neutral, cvar = np.empty(len(grid)), np.empty(len(grid))
    for i, a in enumerate(grid):
        rng = np.random.default_rng(seed)
        _, rewards = ens.sample(np.zeros((1, 1)), np.array([[a]]), m, rng)
        neutral[i] = rewards.mean()
        cvar[i] = float(perturbation_rows(rewards, risk)[0] @ rewards[0])
    return {"neutral": neutral, "cvar": cvar}


def cmd_reproduce_fig2(cfg: ExperimentConfig, out=None) -> dict:
    """Fit an ensemble on the one-step dataset and sweep the action grid."""
    _setup_threads(cfg)
    spec = cfg.illustrative
    fc = cfg.fig2
    data = generate_illustrative_dataset(spec, seed=cfg.seed)
    mcfg = dataclasses.replace(cfg.model_config(), epochs=fc.epochs, batch_size=fc.batch_size)
    ens = fit_ensemble(data, mcfg)
    sampler = _PointView(ens) if fc.zero_uncertainty else ens
    grid = np.linspace(-1.0, 1.0, fc.grid_points)
    sweep = fig2_sweep(sampler, grid, fc.m, fc.alpha, cfg.seed)
    probes = fig2_sweep(sampler, [fc.safe_action, fc.noisy_action], fc.m, fc.alpha, cfg.seed)
    result = {
        "seed": cfg.seed,
        "alpha": fc.alpha,
        "m": fc.m,
        "data_range": [spec.data_low, spec.data_high],
        "grid": grid.tolist(),
        "neutral_value": sweep["neutral"].tolist(),
        "cvar_value": sweep["cvar"].tolist(),
        "true_mean": spec.mean(grid).tolist(),
        "neutral_argmax": float(grid[np.argmax(sweep["neutral"])]),
        "cvar_argmax": float(grid[np.argmax(sweep["cvar"])]),
        "safe_action": {"action": fc.safe_action, "neutral": float(probes["neutral"][0]),
                        "cvar": float(probes["cvar"][0])},
        "noisy_action": {"action": fc.noisy_action, "neutral": float(probes["neutral"][1]),
                         "cvar": float(probes["cvar"][1])},
        "zero_uncertainty": fc.zero_uncertainty,
    }
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(result, indent=2) + "\n")
    return result
