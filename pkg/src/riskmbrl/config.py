"""Experiment configuration: nested dataclasses serialised as INI text.

Each section maps to one dataclass; values are JSON literals so types
survive the round trip. Unknown sections or keys are rejected. Any key can
be overridden through an environment variable named
``RISKMBRL__<SECTION>__<KEY>`` (case-insensitive), e.g.
``RISKMBRL__TRAIN__N_ITER=50``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .actor_critic import AgentConfig
from .ensemble import ModelConfig
from .envs import ENV_IDS, IllustrativeEnvSpec, OUParams
from .risk_measures import RiskSpec
from .rollouts import RolloutConfig

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "ENV_PREFIX"]

ENV_PREFIX = "RISKMBRL__"


class ConfigError(ValueError):
    pass


@dataclass
class EnvSection:
    env_id: str = "currency"

    def __post_init__(self):
        if self.env_id not in ENV_IDS:
            raise ConfigError(f"unknown env id {self.env_id!r}; valid ids: {', '.join(ENV_IDS)}")


@dataclass
class DataSection:
    path: str = ""  # empty: <out_dir>/dataset.npz
    n_episodes: int = 1000
    seed: int = 0


@dataclass
class RolloutSection:
    k: int = 1
    m: int = 10
    n_rollouts: int = 1000
    risk: str = "cvar:0.5"
    rank_with_reward: bool = False
    retain_iterations: int = 5

    def __post_init__(self):
        RiskSpec.parse(self.risk)


@dataclass
class ModelSection(ModelConfig):
    path: str = ""  # pre-fitted ensemble to load instead of fitting


@dataclass
class TrainSection:
    n_iter: int = 300
    updates_per_iter: int = 100
    real_ratio: float = 0.5
    eval_every: int = 25
    final_eval_iters: int = 5
    checkpoint_every: int = 25
    ablate_ensemble: bool = False


@dataclass
class EvalSection:
    n_episodes: int = 200
    alpha: float = 0.1
    random_score: float = 0.0
    expert_score: float = 135.0


@dataclass
class Fig2Section:
    grid_points: int = 201
    m: int = 1000
    alpha: float = 0.1
    safe_action: float = -0.35
    noisy_action: float = 0.4
    epochs: int = 400
    batch_size: int = 64
    zero_uncertainty: bool = False


# section name -> (attribute, class); seeds are stripped because the
# top-level seed drives every component
_SECTIONS = {
    "env": ("env", EnvSection),
    "currency": ("currency", OUParams),
    "illustrative": ("illustrative", IllustrativeEnvSpec),
    "data": ("data", DataSection),
    "model": ("model", ModelSection),
    "rollout": ("rollout", RolloutSection),
    "agent": ("agent", AgentConfig),
    "train": ("train", TrainSection),
    "eval": ("eval", EvalSection),
    "fig2": ("fig2", Fig2Section),
}
_TOP = ("seed", "out_dir", "single_thread")
_SKIP = {"model": {"seed"}, "agent": {"seed"}}


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    single_thread: bool = False
    env: EnvSection = field(default_factory=EnvSection)
    currency: OUParams = field(default_factory=OUParams)
    illustrative: IllustrativeEnvSpec = field(default_factory=IllustrativeEnvSpec)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    rollout: RolloutSection = field(default_factory=RolloutSection)
    agent: AgentConfig = field(default_factory=AgentConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    fig2: Fig2Section = field(default_factory=Fig2Section)

    # ---- derived component configs -------------------------------------

    def model_config(self) -> ModelConfig:
        kw = {f.name: getattr(self.model, f.name) for f in dataclasses.fields(ModelConfig)}
        kw["seed"] = self.seed
        if self.train.ablate_ensemble:
            kw["n_members"] = kw["n_elites"] = 1
        return ModelConfig(**kw)

    def rollout_config(self) -> RolloutConfig:
        return RolloutConfig(**dataclasses.asdict(self.rollout), seed=self.seed)

    def agent_config(self) -> AgentConfig:
        return dataclasses.replace(self.agent, seed=self.seed)

    def env_kwargs(self) -> dict:
        spec = self.currency if self.env.env_id == "currency" else self.illustrative
        return dataclasses.asdict(spec)

    # ---- serialisation -------------------------------------------------

    def to_dict(self) -> dict:
        out = {key: getattr(self, key) for key in _TOP}
        for name, (attr, _) in _SECTIONS.items():
            section = dataclasses.asdict(getattr(self, attr))
            out[name] = {k: v for k, v in section.items() if k not in _SKIP.get(name, ())}
        return out

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        d = self.to_dict()
        parser["run"] = {k: json.dumps(d[k]) for k in _TOP}
        for name in _SECTIONS:
            parser[name] = {k: json.dumps(v) for k, v in d[name].items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        kwargs = {}
        for key, value in d.items():
            if key in _TOP:
                kwargs[key] = value
            elif key in _SECTIONS:
                attr, klass = _SECTIONS[key]
                valid = {f.name for f in dataclasses.fields(klass)} - _SKIP.get(key, set())
                unknown = set(value) - valid
                if unknown:
                    raise ConfigError(f"unknown key(s) in [{key}]: {', '.join(sorted(unknown))}")
                try:
                    kwargs[attr] = klass(**value)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"invalid [{key}] section: {exc}") from exc
            else:
                raise ConfigError(f"unknown config section or key {key!r}")
        return cls(**kwargs)

    @classmethod
    def from_ini(cls, text: str) -> ExperimentConfig:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        d: dict = {}
        for name in parser.sections():
            values = {k: _decode(name, k, v) for k, v in parser[name].items()}
            if name == "run":
                d.update(values)
            else:
                d[name] = values
        return cls.from_dict(d)

    def with_overrides(self, overrides: dict) -> ExperimentConfig:
        """Apply ``{"section.key": value}`` (or top-level ``"seed"``) overrides."""
        d = self.to_dict()
        for dotted, value in overrides.items():
            if isinstance(value, str):
                value = _decode("override", dotted, value)
            if "." not in dotted:
                if dotted not in _TOP:
                    raise ConfigError(f"unknown top-level key {dotted!r}")
                d[dotted] = value
                continue
            section, key = dotted.split(".", 1)
            if section not in d or not isinstance(d[section], dict):
                raise ConfigError(f"unknown config section {section!r}")
            if key not in d[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            d[section][key] = value
        return ExperimentConfig.from_dict(d)


def _decode(section: str, key: str, raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        # bare strings are accepted for convenience
        if raw and raw[0] not in "[{\"" and not raw[0].isdigit():
            return raw
        raise ConfigError(f"[{section}] {key}: cannot parse value {raw!r}") from None


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.upper().startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX):].lower().split("__")
        out[".".join(parts)] = value
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> ExperimentConfig:
    """Defaults, then the file at ``path``, then env vars, then explicit overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cfg = ExperimentConfig.from_ini(path.read_text())
    merged = {**env_overrides(environ), **(overrides or {})}
    if merged:
        cfg = cfg.with_overrides(merged)
    return cfg
