"""Ensemble of Gaussian dynamics models: the learned belief over transitions.

Every member maps ``concat(s, a)`` to a diagonal Gaussian over
``concat(s', r)``. Members are stored as one batched network so they train
side by side, but they share no parameters: each has its own
initialisation, its own minibatch order and (through Adam's elementwise
updates) its own optimiser state.

Checkpoint layout (``.npz``): ``config`` (JSON string with the model
config, layer sizes, dims and the activation), ``param/<name>`` arrays for
every network tensor, ``input_mean``, ``input_std``, ``target_mean``,
``target_std``, ``elites`` and ``holdout_nll``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import NormStats, OfflineDataset, normalize_inputs, savez_stable

log = logging.getLogger(__name__)

__all__ = [
    "ModelConfig",
    "EnsembleLinear",
    "EnsembleMLP",
    "gaussian_nll",
    "GaussianEnsemble",
    "ConstantGaussianEnsemble",
    "SyntheticGaussianSpec",
    "fit_ensemble",
    "sample_successors",
    "build_synthetic_ensemble",
    "save_ensemble",
    "load_ensemble",
]

_ACTIVATIONS = {"silu": F.silu, "relu": F.relu, "tanh": torch.tanh}


@dataclass
class ModelConfig:
    n_members: int = 7
    n_elites: int = 5
    hidden: int = 64
    n_layers: int = 4
    activation: str = "silu"
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    max_holdout: int = 1000
    holdout_fraction: float = 0.1
    logvar_min: float = -10.0
    logvar_max: float = 2.0
    seed: int = 0


class EnsembleLinear(nn.Module):
    """``E`` independent affine maps applied to an ``(E, B, in)`` batch."""

    def __init__(self, n_members: int, in_dim: int, out_dim: int, generator: torch.Generator | None = None):
        super().__init__()
        bound = 1.0 / math.sqrt(in_dim)
        self.weight = nn.Parameter(torch.empty(n_members, in_dim, out_dim).uniform_(-bound, bound, generator=generator))
        self.bias = nn.Parameter(torch.empty(n_members, 1, out_dim).uniform_(-bound, bound, generator=generator))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.baddbmm(self.bias, x, self.weight)


class EnsembleMLP(nn.Module):
    def __init__(self, n_members: int, in_dim: int, out_dim: int, hidden: int = 64, n_layers: int = 4,
                 activation: str = "silu", logvar_bounds=(-10.0, 2.0), seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        sizes = [in_dim] + [hidden] * n_layers
        self.layers = nn.ModuleList(EnsembleLinear(n_members, i, o, gen) for i, o in zip(sizes[:-1], sizes[1:]))
        self.head = EnsembleLinear(n_members, sizes[-1], 2 * out_dim, gen)
        self.activation = activation
        self.out_dim = out_dim
        self.n_members = n_members
        self.register_buffer("logvar_min", torch.tensor(float(logvar_bounds[0])))
        self.register_buffer("logvar_max", torch.tensor(float(logvar_bounds[1])))

    def forward(self, x: torch.Tensor):
        """``x``: (E, B, in) -> mean, log-variance, each (E, B, out)."""
        act = _ACTIVATIONS[self.activation]
        for layer in self.layers:
            x = act(layer(x))
        mean, logvar = self.head(x).split(self.out_dim, dim=-1)
        # soft clamp into [logvar_min, logvar_max]
        logvar = self.logvar_max - F.softplus(self.logvar_max - logvar)
        logvar = self.logvar_min + F.softplus(logvar - self.logvar_min)
        # the two softplus stages can overshoot the upper bound by a hair
        return mean, torch.minimum(logvar, self.logvar_max)


def gaussian_nll(mean: torch.Tensor, logvar: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-member diagonal Gaussian NLL, averaged over batch and dimensions -> (E,)."""
    nll = 0.5 * (logvar + (target - mean) ** 2 * torch.exp(-logvar) + math.log(2.0 * math.pi))
    return nll.mean(dim=(-2, -1))


class _EnsembleSampler:
    """Mixture sampling shared by learned and synthetic ensembles."""

    state_dim: int
    elites: list

    def member_moments(self, states: np.ndarray, actions: np.ndarray):
        """Mean and std of ``concat(s', r)`` for each elite: arrays (E, B, state_dim + 1)."""
        raise NotImplementedError

    def sample(self, states: np.ndarray, actions: np.ndarray, m: int, rng: np.random.Generator):
        """``m`` draws from the elite mixture for each of ``B`` state-action pairs.

        Each draw picks a uniform elite, then samples its Gaussian; next state
        and reward come from the same draw. Returns ``(next_states (B, m, S),
        rewards (B, m))``.
        """
        if not self.elites:
            raise RuntimeError("ensemble is untrained (no elites)")
        if m < 1:
            raise ValueError("m must be >= 1")
        states = np.atleast_2d(np.asarray(states, dtype=float))
        actions = np.asarray(actions, dtype=float).reshape(len(states), -1)
        mean, std = self.member_moments(states, actions)
        n_batch = len(states)
        which = rng.integers(len(self.elites), size=(n_batch, m))
        eps = rng.standard_normal((n_batch, m, mean.shape[-1]))
        rows = np.arange(n_batch)[:, None]
        draws = mean[which, rows] + std[which, rows] * eps
        return draws[..., : self.state_dim], draws[..., self.state_dim]


class GaussianEnsemble(_EnsembleSampler):
    """Trained ensemble. Predicts ``s' - s`` and ``r`` in standardised units."""

    def __init__(self, net: EnsembleMLP, state_dim: int, action_dim: int, input_stats: NormStats,
                 target_stats: NormStats, config: ModelConfig, elites=(), holdout_nll=None):
        self.net = net
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.input_stats = input_stats
        self.target_stats = target_stats
        self.config = config
        self.elites = list(elites)
        self.holdout_nll = np.asarray(holdout_nll if holdout_nll is not None else [], dtype=float)
        self.history: dict = {}

    @property
    def n_members(self) -> int:
        return self.net.n_members

    def _forward_all(self, states: np.ndarray, actions: np.ndarray):
        x = self.input_stats.apply(np.concatenate([states, actions], axis=1))
        dtype = self.net.head.weight.dtype
        xt = torch.as_tensor(x, dtype=dtype).unsqueeze(0).expand(self.n_members, -1, -1)
        with torch.no_grad():
            mean, logvar = self.net(xt)
        return mean.double().numpy(), logvar.double().numpy()

    def member_moments(self, states, actions, members=None):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        actions = np.asarray(actions, dtype=float).reshape(len(states), -1)
        mean, logvar = self._forward_all(states, actions)
        idx = self.elites if members is None else list(members)
        mean, logvar = mean[idx], logvar[idx]
        scale = self.target_stats.std
        mu = mean * scale + self.target_stats.mean
        mu[..., : self.state_dim] += states
        std = np.exp(0.5 * logvar) * scale
        return mu, std


@dataclass
class SyntheticGaussianSpec:
    """Ensemble of constant Gaussians with member means ~ N(mu0, sigma_E^2)."""

    mu0: float = 0.0
    sigma_E: float = 1.0
    sigma_A: float = 1.0
    n_members: int = 200
    stratified: bool = True

    def __post_init__(self):
        if self.sigma_E < 0 or self.sigma_A < 0:
            raise ValueError("sigmas must be non-negative")
        if self.n_members < 1:
            raise ValueError("n_members must be >= 1")


class ConstantGaussianEnsemble(_EnsembleSampler):
    """Members that ignore (s, a): member ``i`` is N(means[i], stds[i]^2) over (s', r)."""

    def __init__(self, means: np.ndarray, stds: np.ndarray, state_dim: int):
        self.means = np.asarray(means, dtype=float)
        self.stds = np.asarray(stds, dtype=float)
        self.state_dim = state_dim
        self.elites = list(range(len(self.means)))

    def member_moments(self, states, actions):
        n_batch = len(np.atleast_2d(states))
        shape = (len(self.elites), n_batch, self.means.shape[1])
        mu = np.broadcast_to(self.means[self.elites][:, None, :], shape)
        sd = np.broadcast_to(self.stds[self.elites][:, None, :], shape)
        return mu, sd


def build_synthetic_ensemble(spec: SyntheticGaussianSpec, rng: np.random.Generator) -> ConstantGaussianEnsemble:
    """Constant 1-D members with means drawn from N(mu0, sigma_E^2) and std sigma_A.

    With ``spec.stratified`` the means are a Latin-hypercube draw: member ``i``
    takes the normal quantile of a uniform point inside the i-th of ``N``
    equal-probability strata. A uniformly chosen member still has mean
    distributed exactly N(mu0, sigma_E^2), but the finite ensemble is a
    far less noisy stand-in for that distribution than i.i.d. draws.
    Rewards are fixed at 0.
    """
    from .risk_measures import normal_ppf

    n = spec.n_members
    if spec.stratified:
        u = (np.arange(n) + rng.random(n)) / n
        z = np.asarray(normal_ppf(u), dtype=float).reshape(n)
        z = z[rng.permutation(n)]
    else:
        z = rng.standard_normal(n)
    means = np.zeros((n, 2))
    stds = np.zeros((n, 2))
    means[:, 0] = spec.mu0 + spec.sigma_E * z
    stds[:, 0] = spec.sigma_A
    return ConstantGaussianEnsemble(means, stds, state_dim=1)


def sample_successors(ens: _EnsembleSampler, state, action, m: int = 10, rng: np.random.Generator | None = None):
    """``m`` i.i.d. ``(next_state, reward)`` draws for one state-action pair."""
    if rng is None:
        raise ValueError("an explicit random generator is required")
    s_next, r = ens.sample(np.asarray(state, dtype=float)[None], np.asarray(action, dtype=float)[None], m, rng)
    return s_next[0], r[0]


def _targets(data: OfflineDataset) -> np.ndarray:
    return np.concatenate([data.next_states - data.states, data.rewards[:, None]], axis=1)


def _nll_on(net: EnsembleMLP, x: torch.Tensor, y: torch.Tensor, chunk: int = 8192) -> np.ndarray:
    total = torch.zeros(net.n_members, dtype=torch.float64)
    with torch.no_grad():
        for lo in range(0, len(x), chunk):
            xb = x[lo: lo + chunk].unsqueeze(0).expand(net.n_members, -1, -1)
            yb = y[lo: lo + chunk].unsqueeze(0).expand(net.n_members, -1, -1)
            mean, logvar = net(xb)
            total += gaussian_nll(mean, logvar, yb).double() * len(xb)
    return (total / len(x)).numpy()


def fit_ensemble(data: OfflineDataset, config: ModelConfig = ModelConfig()) -> GaussianEnsemble:
    """Maximum-likelihood training of every member, then elite selection.

    A holdout of ``min(max_holdout, holdout_fraction * n)`` records is kept
    aside; normalisation stats come from the training split only. Elites are
    the ``n_elites`` members with the lowest holdout NLL.
    """
    if config.n_elites > config.n_members or config.n_elites < 1:
        raise ValueError("need 1 <= n_elites <= n_members")
    n = len(data)
    n_holdout = min(config.max_holdout, int(config.holdout_fraction * n))
    if n - n_holdout < 10 or n_holdout < 1:
        raise ValueError(f"dataset of {n} records is too small for ensemble training")

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    train, hold = data.subset(perm[n_holdout:]), data.subset(perm[:n_holdout])
    input_stats = normalize_inputs(train)
    target_stats = NormStats.fit(_targets(train))

    x_train = torch.as_tensor(input_stats.apply(train.inputs()), dtype=torch.float32)
    y_train = torch.as_tensor(target_stats.apply(_targets(train)), dtype=torch.float32)
    x_hold = torch.as_tensor(input_stats.apply(hold.inputs()), dtype=torch.float32)
    y_hold = torch.as_tensor(target_stats.apply(_targets(hold)), dtype=torch.float32)

    net = EnsembleMLP(config.n_members, x_train.shape[1], y_train.shape[1], config.hidden, config.n_layers,
                      config.activation, (config.logvar_min, config.logvar_max), seed=config.seed)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8)

    history = {"train_nll": [_nll_on(net, x_train, y_train)], "holdout_nll": [_nll_on(net, x_hold, y_hold)]}
    n_train = len(x_train)
    bs = min(config.batch_size, n_train)
    n_batches = max(1, n_train // bs)
    for epoch in range(config.epochs):
        order = torch.as_tensor(np.stack([rng.permutation(n_train) for _ in range(config.n_members)]))
        running = torch.zeros(config.n_members, dtype=torch.float64)
        for b in range(n_batches):
            idx = order[:, b * bs: (b + 1) * bs]
            mean, logvar = net(x_train[idx])
            member_loss = gaussian_nll(mean, logvar, y_train[idx])
            loss = member_loss.sum()
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite ensemble loss at epoch {epoch}, batch {b}: per-member {member_loss.tolist()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += member_loss.detach().double()
        # training NLL per epoch is the mean minibatch loss; the final entry is recomputed exactly below
        history["train_nll"].append((running / n_batches).numpy())
        history["holdout_nll"].append(_nll_on(net, x_hold, y_hold))
        log.debug("epoch %d holdout nll %s", epoch, np.round(history["holdout_nll"][-1], 4))

    if config.epochs > 0:
        history["train_nll"][-1] = _nll_on(net, x_train, y_train)
    holdout = history["holdout_nll"][-1]
    elites = sorted(np.argsort(holdout, kind="stable")[: config.n_elites].tolist())
    ens = GaussianEnsemble(net, data.state_dim, data.action_dim, input_stats, target_stats, config,
                           elites, holdout)
    ens.history = {k: np.array(v) for k, v in history.items()}
    return ens


def save_ensemble(ens: GaussianEnsemble, path) -> Path:
    path = Path(path)
    meta = {
        "model_config": asdict(ens.config),
        "state_dim": ens.state_dim,
        "action_dim": ens.action_dim,
        "in_dim": ens.net.layers[0].weight.shape[1],
        "out_dim": ens.net.out_dim,
    }
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in ens.net.state_dict().items()}
    return savez_stable(path, config=np.array(json.dumps(meta, sort_keys=True)),
                        input_mean=ens.input_stats.mean, input_std=ens.input_stats.std,
                        target_mean=ens.target_stats.mean, target_std=ens.target_stats.std,
                        elites=np.asarray(ens.elites, dtype=np.int64), holdout_nll=ens.holdout_nll, **arrays)


def load_ensemble(path) -> GaussianEnsemble:
    with np.load(Path(path)) as z:
        meta = json.loads(str(z["config"]))
        cfg = ModelConfig(**meta["model_config"])
        net = EnsembleMLP(cfg.n_members, meta["in_dim"], meta["out_dim"], cfg.hidden, cfg.n_layers,
                          cfg.activation, (cfg.logvar_min, cfg.logvar_max), seed=cfg.seed)
        state = {k[len("param/"):]: torch.as_tensor(z[k]) for k in z.files if k.startswith("param/")}
        net.load_state_dict(state)
        return GaussianEnsemble(net, meta["state_dim"], meta["action_dim"],
                                NormStats(z["input_mean"], z["input_std"]),
                                NormStats(z["target_mean"], z["target_std"]), cfg,
                                z["elites"].tolist(), z["holdout_nll"])
