"""Evaluation trials and the experiment drivers built on them."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import config as config_mod
from .config import RunConfig
from .observe import Observer
from .sim import Action, World, generate_world, step
from .trainer import EmacModel, act

EVAL_SEED_BASE = 1


def evaluation_seeds(n: int, base: int = EVAL_SEED_BASE) -> list[int]:
    """Evaluation seeds; always below the training seed range."""
    return list(range(base, base + n))


# ---------------------------------------------------------------- policies


class Policy:
    """Interface for anything that can drive a team through an episode."""

    name = "policy"

    def begin(self, world: World) -> None:
        pass

    def select(self, world: World, observations, rng: np.random.Generator) -> list[Action]:
        raise NotImplementedError


class EmacPolicy(Policy):
    name = "emac"

    def __init__(self, model: EmacModel, greedy: bool = True):
        self.model = model
        self.greedy = greedy

    def select(self, world, observations, rng):
        return act(self.model, observations, rng, greedy=self.greedy)


class NoMovePolicy(Policy):
    name = "no_move"

    def select(self, world, observations, rng):
        return [Action.NO_MOVE] * world.n_agents


class RandomPolicy(Policy):
    name = "random"

    def select(self, world, observations, rng):
        return [Action(int(a)) for a in rng.integers(0, len(Action), size=world.n_agents)]


# ---------------------------------------------------------------- trials


@dataclass
class TrialRecord:
    seed: int
    completion: int
    coverage: float
    completed: bool


@dataclass
class TrialStats:
    condition: str
    timeout: int
    records: list[TrialRecord] = field(default_factory=list)

    @property
    def completions(self) -> np.ndarray:
        return np.array([r.completion for r in self.records], dtype=float)

    @property
    def mean_completion(self) -> float:
        return float(self.completions.mean())

    @property
    def std_completion(self) -> float:
        return float(self.completions.std())

    @property
    def mean_coverage(self) -> float:
        return float(np.mean([r.coverage for r in self.records]))

    @property
    def completed_fraction(self) -> float:
        return float(np.mean([r.completed for r in self.records]))

    @property
    def n_trials(self) -> int:
        return len(self.records)

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.records]

    def summary(self) -> dict:
        return {
            "condition": self.condition,
            "mean_completion": self.mean_completion,
            "std_completion": self.std_completion,
            "mean_coverage": self.mean_coverage,
            "trials": self.n_trials,
        }

    def records_jsonl(self) -> str:
        return "".join(
            json.dumps({"condition": self.condition, **dataclasses.asdict(r)}) + "\n" for r in self.records
        )


def run_episode(policy: Policy, world: World, cfg: RunConfig, rng: np.random.Generator,
                on_step: Callable | None = None) -> World:
    observer = Observer(cfg.observation, world.factors.comm_delay_steps)
    obs = observer.reset(world)
    policy.begin(world)
    done = False
    while not done:
        actions = policy.select(world, obs, rng)
        _, reward, done, info = step(world, actions)
        if on_step is not None:
            on_step(world, actions, reward, info)
        obs = observer.update(world)
    return world


def run_trials(policy: Policy, cfg: RunConfig, n_trials: int, seeds=None, condition: str | None = None,
               collision_mode: str | None = None, log_dir: str | Path | None = None,
               policy_seed: int = 0) -> TrialStats:
    """Run ``n_trials`` fresh worlds. Unfinished episodes count as the timeout."""
    from .episode_log import EpisodeRecorder

    seeds = list(seeds) if seeds is not None else evaluation_seeds(n_trials)
    if len(seeds) != n_trials:
        raise ValueError("need one seed per trial")
    mode = collision_mode or cfg.eval_collision_mode
    stats = TrialStats(condition or policy.name, cfg.world.timeout)
    for seed in seeds:
        rng = np.random.default_rng([policy_seed, seed])
        world = generate_world(seed, cfg.world, cfg.rewards, cfg.disturbances, collision_mode=mode)
        recorder = None
        if log_dir is not None:
            recorder = EpisodeRecorder(world, algo=policy.name, extra=getattr(policy, "log_extra", None))
        run_episode(policy, world, cfg, rng, on_step=recorder.on_step if recorder else None)
        done = bool(world.coverage.all())
        stats.records.append(TrialRecord(
            seed=int(seed),
            completion=world.t if done else cfg.world.timeout,
            coverage=world.coverage_fraction,
            completed=done,
        ))
        if recorder is not None:
            Path(log_dir).mkdir(parents=True, exist_ok=True)
            recorder.log.save(Path(log_dir) / f"{stats.condition}_seed{seed}.log")
    return stats


# ---------------------------------------------------------------- tables


@dataclass
class Table:
    title: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    stats: list[TrialStats] = field(default_factory=list)

    def to_tsv(self) -> str:
        def fmt(v):
            return f"{v:.2f}" if isinstance(v, float) else str(v)
        lines = ["\t".join(self.columns)]
        lines += ["\t".join(fmt(v) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"

    def save(self, out_dir: str | Path, stem: str) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.tsv").write_text(self.to_tsv())
        (out / f"{stem}_trials.jsonl").write_text("".join(s.records_jsonl() for s in self.stats))


Trainer = Callable[[RunConfig], Policy]


def baseline_comparison(cfg: RunConfig, policies: dict[str, Policy], n_trials: int = 100,
                        seeds=None) -> Table:
    """Completion time and coverage per method on shared evaluation seeds."""
    seeds = seeds or evaluation_seeds(n_trials)
    table = Table("Comparison against baselines", ["algorithm", "completion_steps", "coverage"])
    for name, policy in policies.items():
        stats = run_trials(policy, cfg, n_trials, seeds, condition=name)
        table.stats.append(stats)
        table.rows.append([name, stats.mean_completion, stats.mean_coverage])
    return table


def scalability_sweep(kind: str, base: RunConfig, trainer: Trainer, values=None, n_trials: int = 100,
                      sensor_k: int | None = None) -> Table:
    """Train and evaluate one model per team size (``agents``) or grid size (``environment``)."""
    k = sensor_k or base.world.sensor_k[0]
    if kind == "agents":
        values = values or [2, 4, 8]
        size = 22 if values == [2, 4, 8] else base.world.size
        cfgs = [config_mod.replace(base, world={"size": size, "n_agents": n, "sensor_k": (k,) * n})
                for n in values]
        column = "agents"
    elif kind == "environment":
        values = values or [16, 20, 24, 28, 32]
        cfgs = [config_mod.replace(base, world={"size": m}) for m in values]
        column = "environment"
    else:
        raise ValueError(f"unknown sweep kind {kind!r}")
    table = Table(f"{column} scalability", [column, "completion_steps"])
    for value, cfg in zip(values, cfgs):
        stats = run_trials(trainer(cfg), cfg, n_trials, condition=f"{column}={value}")
        table.stats.append(stats)
        table.rows.append([value, stats.mean_completion])
    return table


def robustness_conditions(dropout=(1, 2), delays=(1, 2, 4), winds=(0.1, 0.2, 0.4), sizes=(20, 24, 28, 32)):
    """``(factor, setting, config overrides)`` rows; dropout drops all but ``n - x`` agents."""
    rows = [("baseline", "-", {})]
    rows += [("agent dropout", f"{x} agent{'s' if x > 1 else ''}", {"drop": x}) for x in dropout]
    rows += [("communication delay", f"{d} step{'s' if d > 1 else ''}",
              {"disturbances": {"comm_delay_steps": d}}) for d in delays]
    rows += [("wind turbulence", f"{int(p * 100)}% prob", {"disturbances": {"wind_prob": p}}) for p in winds]
    rows += [("coverage area change", f"{m}x{m}", {"world": {"size": m}}) for m in sizes]
    return rows


def robustness_sweep(policy: Policy, cfg: RunConfig, n_trials: int = 100, conditions=None,
                     dropout_prob: float = 0.05) -> Table:
    """Evaluate one fixed policy under each disturbance; nothing is retrained between rows."""
    conditions = conditions if conditions is not None else robustness_conditions()
    seeds = evaluation_seeds(n_trials)
    table = Table("Robustness", ["factor", "setting", "completion_steps"])
    for factor, setting, overrides in conditions:
        overrides = dict(overrides)
        drop = overrides.pop("drop", None)
        if drop is not None:
            n = cfg.world.n_agents
            overrides["disturbances"] = {"dropout_prob": dropout_prob,
                                         "dropout_min_agents": max(n - drop, 1)}
        if "world" in overrides and "size" in overrides["world"]:
            m = overrides["world"]["size"]
            timeout = max(cfg.world.timeout, cfg.world.timeout * m * m // cfg.world.size ** 2)
            overrides["world"] = {**overrides["world"], "timeout": timeout}
        cond_cfg = config_mod.replace(cfg, **overrides) if overrides else cfg
        stats = run_trials(policy, cond_cfg, n_trials, seeds, condition=f"{factor}:{setting}")
        table.stats.append(stats)
        table.rows.append([factor, setting, stats.mean_completion])
    return table


HETEROGENEOUS_TEAMS = {
    "small,small,small": (7, 7, 7),
    "small,small,large": (7, 7, 9),
    "small,large,large": (7, 9, 9),
    "large,large,large": (9, 9, 9),
}


def heterogeneous_experiment(base: RunConfig, trainer: Trainer, teams: dict | None = None,
                             size: int = 20, n_trials: int = 100) -> Table:
    """Train and evaluate each team composition with identical hyperparameters."""
    teams = teams or HETEROGENEOUS_TEAMS
    table = Table("Heterogeneous teams", ["team", "composition", "completion_steps"])
    for idx, (name, ks) in enumerate(teams.items(), start=1):
        cfg = config_mod.replace(base, world={"size": size, "n_agents": len(ks), "sensor_k": tuple(ks)})
        stats = run_trials(trainer(cfg), cfg, n_trials, condition=name)
        table.stats.append(stats)
        table.rows.append([idx, name, stats.mean_completion])
    return table
