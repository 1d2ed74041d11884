"""Run configuration: typed sections, INI-style text format, validation.

A config file is a set of ``[section]`` blocks with ``key = value`` lines.
Missing keys take their defaults, unknown keys are rejected, and
``parse_config_text(serialize_config(cfg)) == cfg`` holds for every valid
config.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field
from pathlib import Path

FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Raised for unknown keys, type mismatches and invariant violations."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class WorldConfig:
    size: int = 16
    n_agents: int = 3
    sensor_k: tuple[int, ...] = (7, 7, 7)
    obstacle_density: float = 0.10
    timeout: int = 100
    # "no_move" for training, "deactivate" for evaluation
    collision_mode: str = "no_move"
    max_generation_attempts: int = 1000


@dataclass(frozen=True)
class RewardConfig:
    terminal: float = 10.0
    progress: float = 1.0
    discovery: float = 0.1
    visit: float = 0.05
    collision: float = 0.5


@dataclass(frozen=True)
class DisturbanceConfig:
    """Environmental disturbances. A zero value disables the effect."""

    comm_delay_steps: int = 0
    dropout_prob: float = 0.0
    dropout_min_agents: int = 1
    wind_prob: float = 0.0


@dataclass(frozen=True)
class ObservationConfig:
    near_j: int = 5
    far_m: int = 8


@dataclass(frozen=True)
class NetworkConfig:
    embed_dim: int = 64
    encoder_activation: str = "tanh"
    actor_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (128, 128)
    q_hidden: tuple[int, ...] = (64, 64)
    iac_hidden: tuple[int, ...] = (64, 64)
    # init range multiplier for policy output layers; small values start near uniform
    policy_out_scale: float = 0.01


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0


@dataclass(frozen=True)
class TrainConfig:
    """Shared by the actor-critic trainers (EMAC and IAC)."""

    gamma: float = 0.99
    entropy_coeff: float = 0.01
    # "full": sum over the action distribution; "taken": at the sampled action
    entropy_mode: str = "full"
    normalize_advantages: bool = False
    triplet_margin: float = 0.2
    triplet_time_buffer: int = 5
    triplet_weight: float = 0.1
    # "hinge" or "soft" (log(1 + exp(x)))
    triplet_form: str = "hinge"
    actor_grad_to_encoder: bool = True
    n_envs: int = 8
    max_episodes: int = 15000
    eval_interval: int = 100
    eval_trials: int = 40


@dataclass(frozen=True)
class IqlConfig:
    replay_capacity: int = 50000
    batch_size: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5
    target_sync: int = 500
    use_replay: bool = True
    learning_starts: int = 500


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    eval_collision_mode: str = "deactivate"
    world: WorldConfig = field(default_factory=WorldConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    disturbances: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    iql: IqlConfig = field(default_factory=IqlConfig)


_SECTIONS = [f.name for f in dataclasses.fields(RunConfig) if f.default_factory is not dataclasses.MISSING]
_TOP_LEVEL = [f.name for f in dataclasses.fields(RunConfig) if f.name not in _SECTIONS]


def validate(cfg: RunConfig) -> RunConfig:
    w = cfg.world
    if w.size < 2:
        raise ConfigError("world.size", "must be >= 2")
    if w.n_agents < 1:
        raise ConfigError("world.n_agents", "must be >= 1")
    if len(w.sensor_k) != w.n_agents:
        raise ConfigError("world.sensor_k", f"expected {w.n_agents} entries, got {len(w.sensor_k)}")
    for k in w.sensor_k:
        if k < 3 or k % 2 == 0:
            raise ConfigError("world.sensor_k", f"sensor_k must be odd and >= 3, got {k}")
    if not 0.0 <= w.obstacle_density < 1.0:
        raise ConfigError("world.obstacle_density", "must be in [0, 1)")
    if w.timeout < 1:
        raise ConfigError("world.timeout", "must be >= 1")
    for key, mode in (("world.collision_mode", w.collision_mode),
                      ("eval_collision_mode", cfg.eval_collision_mode)):
        if mode not in ("no_move", "deactivate"):
            raise ConfigError(key, f"unknown collision mode {mode!r}")
    d = cfg.disturbances
    for key in ("dropout_prob", "wind_prob"):
        p = getattr(d, key)
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"disturbances.{key}", "probability must be in [0, 1]")
    if d.comm_delay_steps < 0:
        raise ConfigError("disturbances.comm_delay_steps", "must be >= 0")
    if d.dropout_min_agents < 1:
        raise ConfigError("disturbances.dropout_min_agents", "must be >= 1")
    o = cfg.observation
    if o.near_j < 1 or o.near_j % 2 == 0:
        raise ConfigError("observation.near_j", "must be odd and >= 1")
    if not 1 <= o.far_m <= 2 * w.size:
        raise ConfigError("observation.far_m", f"must satisfy 1 <= m <= 2M = {2 * w.size}")
    if cfg.network.encoder_activation not in ("relu", "tanh", "identity"):
        raise ConfigError("network.encoder_activation", "must be relu, tanh or identity")
    t = cfg.train
    if not 0.0 <= t.gamma < 1.0:
        raise ConfigError("train.gamma", "must be in [0, 1)")
    if t.entropy_mode not in ("full", "taken"):
        raise ConfigError("train.entropy_mode", "must be 'full' or 'taken'")
    if t.triplet_form not in ("hinge", "soft"):
        raise ConfigError("train.triplet_form", "must be 'hinge' or 'soft'")
    if t.n_envs < 1:
        raise ConfigError("train.n_envs", "must be >= 1")
    if not 0.0 < cfg.iql.eps_fraction <= 1.0:
        raise ConfigError("iql.eps_fraction", "must be in (0, 1]")
    return cfg


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        if typing.get_origin(typ) is tuple:
            (inner, _) = typing.get_args(typ)
            return tuple(_parse_value(key, part, inner) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None
    raise ConfigError(key, f"unsupported type {typ}")


def _build_section(cls, name: str, items: dict[str, str]):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}" if name else key, "unknown key")
        values[key] = _parse_value(f"{name}.{key}" if name else key, raw, hints[key])
    return cls(**values)


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc)) from None
    top = dict(parser["run"])
    version = top.pop("version", str(FORMAT_VERSION))
    if version.strip() != str(FORMAT_VERSION):
        raise ConfigError("version", f"unsupported config version {version}")
    for key in top:
        if key not in _TOP_LEVEL:
            raise ConfigError(key, "unknown key")
    base = _build_section(RunConfig, "", top)
    kwargs = {}
    for section in parser.sections():
        if section == "run":
            continue
        if section not in _SECTIONS:
            raise ConfigError(section, "unknown section")
        cls = type(getattr(base, section))
        kwargs[section] = _build_section(cls, section, dict(parser[section]))
    return validate(dataclasses.replace(base, **kwargs))


def parse_config(path: str | Path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"version = {FORMAT_VERSION}"]
    for name in _TOP_LEVEL:
        lines.append(f"{name} = {_format_value(getattr(cfg, name))}")
    for name in _SECTIONS:
        lines.append("")
        lines.append(f"[{name}]")
        section = getattr(cfg, name)
        for f in dataclasses.fields(section):
            lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def replace(cfg: RunConfig, **sections) -> RunConfig:
    """Return a copy with per-section overrides: ``replace(cfg, world={"size": 8})``."""
    kwargs = {}
    for name, value in sections.items():
        if isinstance(value, dict):
            kwargs[name] = dataclasses.replace(getattr(cfg, name), **value)
        else:
            kwargs[name] = value
    return validate(dataclasses.replace(cfg, **kwargs))


def paper_preset() -> RunConfig:
    """16x16, three k=7 agents, 100-step timeout, 15,000 episodes."""
    return validate(RunConfig())


def desk_preset() -> RunConfig:
    """Small-grid preset for CI-sized runs: 8x8, two k=5 agents, 3,000 episodes, E=4.

    The training settings were tuned for this budget; see the README.
    """
    return replace(
        RunConfig(),
        world={"size": 8, "n_agents": 2, "sensor_k": (5, 5), "timeout": 100},
        network={"encoder_activation": "identity"},
        train={"n_envs": 4, "max_episodes": 3000, "gamma": 0.95, "entropy_coeff": 0.015,
               "triplet_weight": 0.01, "normalize_advantages": True, "eval_trials": 20},
    )


PRESETS = {"paper": paper_preset, "desk": desk_preset}
