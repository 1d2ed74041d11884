"""Command-line entry point: ``emac {train,eval,bench,render,gradcheck}``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod

log = logging.getLogger("emac")

ALGOS = ("emac", "iql", "iac")
EXPERIMENTS = ("trials", "robustness", "scalability-agents", "scalability-environment", "heterogeneous")


def load_config(args) -> config_mod.RunConfig:
    if args.config:
        cfg = config_mod.parse_config(args.config)
    else:
        cfg = config_mod.PRESETS[args.preset or "desk"]()
    if getattr(args, "seed", None) is not None:
        cfg = config_mod.validate(config_mod.dataclasses.replace(cfg, seed=args.seed))
    if getattr(args, "episodes", None) is not None:
        cfg = config_mod.replace(cfg, train={"max_episodes": args.episodes})
    return cfg


def trainer_for(algo: str):
    if algo == "emac":
        from .trainer import train
        return train
    if algo == "iql":
        from .baselines.iql import iql_train
        return iql_train
    from .baselines.iac import iac_train
    return iac_train


def policy_for(model):
    algo = getattr(model, "algo", "emac")
    if algo == "emac":
        from .evaluation import EmacPolicy
        return EmacPolicy(model)
    if algo == "iql":
        from .baselines.iql import IqlPolicy
        return IqlPolicy(model)
    from .baselines.iac import IacPolicy
    return IacPolicy(model)


def named_policy(name: str):
    from .evaluation import NoMovePolicy, RandomPolicy
    if name == "nrl":
        from .baselines.nrl import NrlPolicy
        return NrlPolicy()
    return {"random": RandomPolicy, "no_move": NoMovePolicy}[name]()


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    cfg = load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(config_mod.serialize_config(cfg))
    started = time.time()
    model, curve = trainer_for(args.algo)(cfg, out_dir=out, progress_every=args.progress)
    save_checkpoint(model, out / f"{args.algo}.ckpt")
    (out / f"{args.algo}_curve.tsv").write_text(curve.to_tsv())
    (out / f"{args.algo}_eval.tsv").write_text(curve.eval_tsv())
    print(f"trained {args.algo} for {cfg.train.max_episodes} episodes in {time.time() - started:.1f}s; "
          f"mean length first 100 {curve.window_mean(True):.2f}, last 100 {curve.window_mean(False):.2f}")
    print(f"wrote {out / f'{args.algo}.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    from . import evaluation as ev
    from .checkpoint import load_checkpoint

    cfg = load_config(args)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        if not (args.config or args.preset):
            cfg = model.config
        policy = policy_for(model)
    else:
        policy = named_policy(args.policy)
    if args.collision_mode:
        cfg = config_mod.validate(config_mod.dataclasses.replace(cfg, eval_collision_mode=args.collision_mode))

    out = Path(args.out) if args.out else None
    if args.experiment == "trials":
        stats = ev.run_trials(policy, cfg, args.trials, log_dir=args.log_dir)
        summary = stats.summary()
        print("\t".join(summary))
        print("\t".join(f"{v:.3f}" if isinstance(v, float) else str(v) for v in summary.values()))
        if out:
            out.mkdir(parents=True, exist_ok=True)
            (out / "trials.jsonl").write_text(stats.records_jsonl())
        return 0
    if args.experiment == "robustness":
        table = ev.robustness_sweep(policy, cfg, args.trials)
    elif args.experiment.startswith("scalability"):
        algo = args.algo
        train = trainer_for(algo)
        table = ev.scalability_sweep(args.experiment.split("-")[1], cfg,
                                     lambda c: policy_for(train(c)[0]), n_trials=args.trials)
    else:
        train = trainer_for(args.algo)
        table = ev.heterogeneous_experiment(cfg, lambda c: policy_for(train(c)[0]), n_trials=args.trials)
    print(table.to_tsv(), end="")
    if out:
        table.save(out, args.experiment)
    return 0


def cmd_bench(args) -> int:
    from .sim import N_ACTIONS, generate_world, step
    cfg = load_config(args)
    rng = np.random.default_rng(0)
    world = generate_world(1, cfg.world, cfg.rewards, cfg.disturbances)
    steps = 0
    started = time.perf_counter()
    while steps < args.steps:
        _, _, done, _ = step(world, rng.integers(0, N_ACTIONS, size=world.n_agents).tolist())
        steps += 1
        if done:
            world = generate_world(steps + 1, cfg.world, cfg.rewards, cfg.disturbances)
    elapsed = time.perf_counter() - started
    print(f"{steps} steps in {elapsed:.3f}s: {steps / elapsed:.0f} steps/s "
          f"({cfg.world.size}x{cfg.world.size}, {cfg.world.n_agents} agents)")
    return 0


def cmd_render(args) -> int:
    from .render import render_paths
    path = render_paths(args.log, args.out, show_partition=not args.no_partition)
    print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_all
    results = run_all(args.instances, args.seed)
    for r in results:
        print(r.line())
    worst = max(r.max_rel_error for r in results)
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emac", description="Multi-agent coverage path planning workbench.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", help="config file; overrides --preset")
        p.add_argument("--preset", choices=sorted(config_mod.PRESETS), help="built-in config (default: desk)")

    p = sub.add_parser("train", help="train a model and write checkpoint and curve files")
    config_args(p)
    p.add_argument("--algo", choices=ALGOS, default="emac")
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int, help="override train.max_episodes")
    p.add_argument("--out", default="runs")
    p.add_argument("--progress", type=int, default=100, help="log every N episodes (0 = quiet)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a built-in policy")
    config_args(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--policy", choices=("nrl", "random", "no_move"))
    p.add_argument("--experiment", choices=EXPERIMENTS, default="trials")
    p.add_argument("--algo", choices=ALGOS, default="emac", help="trainer for experiments that retrain")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--collision-mode", choices=("no_move", "deactivate"))
    p.add_argument("--log-dir", help="write one episode log per trial here")
    p.add_argument("--out", help="directory for result tables")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time simulator steps per second")
    config_args(p)
    p.add_argument("--steps", type=int, default=20000)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="draw an episode log as SVG")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-partition", action="store_true", help="omit the partition underlay")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "train" and args.progress:
        logging.getLogger("emac").setLevel(logging.INFO)
    try:
        return args.func(args)
    except (config_mod.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"emac: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
