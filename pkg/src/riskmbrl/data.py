"""Offline transition datasets, input normalisation and dataset files.

Text dataset layout (``.txt``)::

    # riskmbrl-dataset v1 state_dim=S action_dim=A count=N env=ID seed=K
    s_1 .. s_S  a_1 .. a_A  r  s'_1 .. s'_S  terminal

one record per line, whitespace separated, floats printed with 17
significant digits and ``terminal`` as 0/1. The binary variant (``.npz``)
stores the same columns as named arrays plus a ``meta`` JSON string.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TransitionRecord",
    "OfflineDataset",
    "NormStats",
    "normalize_inputs",
    "save_dataset",
    "load_dataset",
    "savez_stable",
]

_MAGIC = "riskmbrl-dataset v1"


@dataclass(frozen=True, eq=False)
class TransitionRecord:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass(eq=False)
class OfflineDataset:
    """Column-oriented store of ``(s, a, r, s', terminal)`` transitions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    env_id: str = "unknown"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.actions = np.asarray(self.actions, dtype=float).reshape(len(self.states), -1)
        self.rewards = np.asarray(self.rewards, dtype=float).reshape(-1)
        self.next_states = np.asarray(self.next_states, dtype=float).reshape(self.states.shape)
        self.terminals = np.asarray(self.terminals, dtype=bool).reshape(-1)
        n = len(self.states)
        if not (len(self.actions) == len(self.rewards) == len(self.terminals) == n):
            raise ValueError("dataset columns have inconsistent lengths")
        for name in ("states", "actions", "rewards", "next_states"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    def __len__(self) -> int:
        return len(self.rewards)

    def __getitem__(self, i: int) -> TransitionRecord:
        return TransitionRecord(self.states[i], self.actions[i], float(self.rewards[i]),
                                self.next_states[i], bool(self.terminals[i]))

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def subset(self, idx) -> OfflineDataset:
        return OfflineDataset(self.states[idx], self.actions[idx], self.rewards[idx],
                              self.next_states[idx], self.terminals[idx],
                              self.env_id, self.seed, dict(self.meta))

    def batch(self, idx) -> dict:
        return {
            "states": self.states[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_states": self.next_states[idx],
            "terminals": self.terminals[idx],
        }

    def inputs(self) -> np.ndarray:
        return np.concatenate([self.states, self.actions], axis=1)


@dataclass(eq=False)
class NormStats:
    """Per-dimension affine standardisation ``(x - mean) / std``.

    Dimensions whose standard deviation is below ``1e-8`` pass through
    untouched (mean 0, std 1).
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> NormStats:
        x = np.asarray(x, dtype=float)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        flat = std < 1e-8
        mean = np.where(flat, 0.0, mean)
        std = np.where(flat, 1.0, std)
        return cls(mean, std)

    @classmethod
    def identity(cls, dim: int) -> NormStats:
        return cls(np.zeros(dim), np.ones(dim))

    def apply(self, x):
        return (x - self.mean) / self.std

    def invert(self, z):
        return z * self.std + self.mean


def normalize_inputs(data: OfflineDataset) -> NormStats:
    """Standardisation stats for the model inputs ``concat(s, a)``."""
    if len(data) < 2:
        raise ValueError("need at least two records to estimate normalisation stats")
    return NormStats.fit(data.inputs())


def savez_stable(path, **arrays) -> Path:
    """Like ``np.savez`` but byte-reproducible: fixed entry timestamps and order."""
    path = Path(path)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())
    return path


def _header(data: OfflineDataset) -> str:
    return (f"# {_MAGIC} state_dim={data.state_dim} action_dim={data.action_dim} "
            f"count={len(data)} env={data.env_id} seed={data.seed}")


def save_dataset(data: OfflineDataset, path) -> Path:
    """Write ``data`` as text (``.txt``/``.dat``) or binary (``.npz``)."""
    path = Path(path)
    if path.suffix == ".npz":
        meta = {"env_id": data.env_id, "seed": data.seed, "meta": data.meta}
        return savez_stable(path, states=data.states, actions=data.actions, rewards=data.rewards,
                            next_states=data.next_states, terminals=data.terminals,
                            meta=np.array(json.dumps(meta, sort_keys=True)))
    table = np.concatenate([data.states, data.actions, data.rewards[:, None],
                            data.next_states, data.terminals[:, None].astype(float)], axis=1)
    fmt = ["%.17g"] * (table.shape[1] - 1) + ["%d"]
    np.savetxt(path, table, fmt=fmt, header=_header(data)[2:], comments="# ")
    return path


def load_dataset(path) -> OfflineDataset:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            return OfflineDataset(z["states"], z["actions"], z["rewards"], z["next_states"],
                                  z["terminals"], meta["env_id"], meta["seed"], meta["meta"])
    with open(path) as fh:
        header = fh.readline().strip()
    if not header.startswith("# " + _MAGIC):
        raise ValueError(f"{path} is not a dataset file")
    fields = dict(item.split("=", 1) for item in header.split()[3:])
    s_dim, a_dim, count = int(fields["state_dim"]), int(fields["action_dim"]), int(fields["count"])
    table = np.loadtxt(path, comments="#", ndmin=2)
    if table.shape != (count, 2 * s_dim + a_dim + 2):
        raise ValueError(f"{path}: table shape {table.shape} does not match header")
    cols = np.cumsum([s_dim, a_dim, 1, s_dim])
    states, actions, rewards, next_states, terminals = np.split(table, cols, axis=1)
    return OfflineDataset(states, actions, rewards[:, 0], next_states, terminals[:, 0] > 0.5,
                          fields["env"], int(fields["seed"]))
