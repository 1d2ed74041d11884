"""Line-delimited JSON episode logs.

The first line is a header (format version, seed, world/reward/disturbance
settings, obstacle and start cells); each following line is one step with
per-agent position, intended and executed action, reward components and
active flag, plus the covered-cell count and coverage fraction. Replaying
the intended actions through a world regenerated from the header
reproduces every logged state.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .config import DisturbanceConfig, RewardConfig, WorldConfig
from .sim import Action, World, generate_world, step

LOG_VERSION = 1


class LogFormatError(ValueError):
    pass


@dataclass
class EpisodeLog:
    header: dict
    steps: list[dict] = field(default_factory=list)

    def lines(self) -> list[str]:
        return [json.dumps(self.header)] + [json.dumps(s) for s in self.steps]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> EpisodeLog:
        raw = [line for line in Path(path).read_text().splitlines() if line.strip()]
        if not raw:
            raise LogFormatError(f"{path}: empty log")
        header = json.loads(raw[0])
        if header.get("type") != "header" or header.get("version") != LOG_VERSION:
            raise LogFormatError(f"{path}: missing header or unsupported version")
        return cls(header, [json.loads(line) for line in raw[1:]])

    @property
    def size(self) -> int:
        return self.header["world"]["size"]

    def paths(self) -> list[list[tuple[int, int]]]:
        """Per-agent visited cells, starting with the start cell."""
        out = [[tuple(p)] for p in self.header["start"]]
        for s in self.steps:
            for i, a in enumerate(s["agents"]):
                out[i].append(tuple(a["pos"]))
        return out

    def world_configs(self) -> tuple[WorldConfig, RewardConfig, DisturbanceConfig]:
        w = dict(self.header["world"])
        w["sensor_k"] = tuple(w["sensor_k"])
        return (WorldConfig(**w), RewardConfig(**self.header["rewards"]),
                DisturbanceConfig(**self.header["disturbances"]))


def _header(world: World, algo: str, extra: dict | None) -> dict:
    header = {
        "type": "header",
        "version": LOG_VERSION,
        "algo": algo,
        "seed": world.seed,
        "collision_mode": world.collision_mode,
        "world": dataclasses.asdict(world.config),
        "rewards": dataclasses.asdict(world.rewards),
        "disturbances": dataclasses.asdict(world.factors),
        "obstacles": [[int(r), int(c)] for r, c in zip(*world.terrain.nonzero())],
        "start": [list(a.position) for a in world.agents],
        "initial_covered": int(world.coverage.sum()),
    }
    if extra:
        header.update(extra)
    return header


class EpisodeRecorder:
    """``on_step`` callback that appends one log line per environment step."""

    def __init__(self, world: World, algo: str = "unknown", extra: dict | None = None):
        self.log = EpisodeLog(_header(world, algo, extra(world) if callable(extra) else extra))

    def on_step(self, world: World, actions, reward, info) -> None:
        agents = []
        for i, a in enumerate(world.agents):
            agents.append({
                "pos": list(a.position),
                "action": Action(int(info["intended"][i])).name,
                "executed": Action(int(info["executed"][i])).name,
                "reward": reward.components(i),
                "active": a.active,
            })
        self.log.steps.append({
            "type": "step",
            "t": world.t,
            "agents": agents,
            "covered": int(world.coverage.sum()),
            "coverage": world.coverage_fraction,
        })


def replay(log: EpisodeLog) -> World:
    """Re-run the logged actions and check every step; raises on any mismatch."""
    wcfg, rcfg, dcfg = log.world_configs()
    world = generate_world(log.header["seed"], wcfg, rcfg, dcfg, collision_mode=log.header["collision_mode"])
    if [list(a.position) for a in world.agents] != log.header["start"]:
        raise LogFormatError("start positions differ from the regenerated world")
    for s in log.steps:
        actions = [Action[a["action"]] for a in s["agents"]]
        step(world, actions)
        if world.t != s["t"]:
            raise LogFormatError(f"step counter {world.t} != logged {s['t']}")
        if int(world.coverage.sum()) != s["covered"] or world.coverage_fraction != s["coverage"]:
            raise LogFormatError(f"t={s['t']}: coverage {world.coverage_fraction} != logged {s['coverage']}")
        for a, rec in zip(world.agents, s["agents"]):
            if list(a.position) != rec["pos"] or a.active != rec["active"]:
                raise LogFormatError(f"t={s['t']}: agent {a.id} state differs from log")
    return world
