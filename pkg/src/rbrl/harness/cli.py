"""Command-line entry point: ``rbrl <command> ...``.

Every command runs offline with ``--backend scripted``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import tomli

from ..agent import ReplayMismatch, evaluate, group_episodes, read_jsonl, replay_episode
from ..embedding import make_embedder
from ..sac import SacAgent
from .compare import compare_logs, format_table
from .config import ConfigError, RunConfig
from .metrics import ewma, read_series
from .plot import render_svg
from .run import agent_config, build_runner, env_factory, make_gateway, train
from .survey import export_survey

log = logging.getLogger("rbrl")

OVERRIDES = ("env", "variant", "backend", "total_timesteps", "output_dir", "num_envs", "num_rules",
             "rule_reward_coef", "gamma")


def load_config(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        data = tomli.loads(Path(args.config).read_text())
    for name in OVERRIDES:
        val = getattr(args, name, None)
        if val is not None:
            data[name] = val
    if getattr(args, "seeds", None):
        data["seeds"] = args.seeds
    return RunConfig.from_dict(data)


def cmd_train(args) -> int:
    cfg = load_config(args)
    dirs = train(cfg, resume=args.resume)
    for d in dirs:
        print(d)
    return 0


def cmd_eval(args) -> int:
    run = Path(args.run)
    cfg = RunConfig.load(run / "config.toml")
    if args.backend:
        cfg.backend = args.backend
        cfg.validate()
    seed = json.loads((run / "manifest.json").read_text()).get("seed", cfg.seeds[0])
    agent = None
    if cfg.variant in ("rbrl", "tbrl"):
        agent, _ = SacAgent.load(run / "checkpoint.npz")
    elif cfg.variant == "ppo":
        raise ConfigError("eval supports the language agents; PPO returns are in metrics.csv")
    runner = build_runner(cfg, seed, None, agent=agent)
    try:
        result = evaluate(runner, args.episodes, greedy=not args.sampled)
    finally:
        runner.close()
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_ewma(args) -> int:
    steps, vals = read_series(args.input, args.column)
    smooth = ewma(vals, args.half_life)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["step", args.column, f"{args.column}_ewma"])
        for s, v, y in zip(steps, vals, smooth):
            writer.writerow([repr(float(s)), repr(float(v)), repr(float(y))])
    finally:
        if args.output:
            out.close()
    return 0


def _groups(args) -> dict:
    groups = {}
    specs = args.group or []
    if args.csvs:
        specs.append("series=" + ",".join(args.csvs))
    if not specs:
        raise ConfigError("plot needs CSV files (positional) or --group label=a.csv,b.csv")
    for spec in specs:
        label, _, files = spec.partition("=")
        curves = []
        for f in files.split(","):
            steps, vals = read_series(f, args.column)
            if args.half_life:
                vals = ewma(vals, args.half_life)
            curves.append((steps, vals))
        groups[label] = curves
    return groups


def cmd_plot(args) -> int:
    svg = render_svg(_groups(args), title=args.title or args.column, ylabel=args.column)
    Path(args.output).write_text(svg)
    print(args.output)
    return 0


def cmd_compare(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.backend = args.backend or cfg.backend
    cfg.validate()
    gateway = make_gateway(cfg, args.seed)
    result = compare_logs(read_jsonl(args.log_a), read_jsonl(args.log_b), gateway, args.limit)
    print(format_table(result))
    if args.json:
        Path(args.json).write_text(json.dumps(result, indent=2) + "\n")
    return 0


def cmd_export_survey(args) -> int:
    text, key = export_survey(read_jsonl(args.log_a), read_jsonl(args.log_b), args.n, args.seed)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    if args.key_output:
        Path(args.key_output).write_text(json.dumps(key, indent=2) + "\n")
    return 0


def cmd_replay(args) -> int:
    run = Path(args.run)
    cfg = RunConfig.load(run / "config.toml")
    if cfg.backend != "scripted":
        raise ConfigError("replay re-executes logs against the scripted backend only")
    seed = json.loads((run / "manifest.json").read_text()).get("seed", cfg.seeds[0])
    episodes = group_episodes(read_jsonl(run / "episodes.jsonl"))
    if args.episode:
        idx, _, ep = args.episode.partition(":")
        episodes = {k: v for k, v in episodes.items() if k == (int(idx), int(ep))}
        if not episodes:
            raise ConfigError(f"no episode {args.episode} in the log")
    acfg = agent_config(cfg, seed)
    embedder = make_embedder(cfg.embedding_config())
    gateway = make_gateway(cfg, seed)
    make = env_factory(cfg)
    steps = 0
    try:
        for (idx, _), recs in sorted(episodes.items()):
            steps += replay_episode(recs, acfg, make(idx), gateway, embedder)
    except ReplayMismatch as exc:
        print(f"replay mismatch: {exc}", file=sys.stderr)
        return 1
    print(f"replayed {len(episodes)} episodes, {steps} steps: identical")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbrl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an agent for every seed")
    t.add_argument("--config", help="TOML run config; flags below override it")
    t.add_argument("--env", choices=("uganda", "mimic", "vitals", "heat", "toy"))
    t.add_argument("--variant", choices=("rbrl", "tbrl", "rules-llm-only", "cot", "random-rule", "ppo"))
    t.add_argument("--backend", choices=("scripted", "remote"))
    t.add_argument("--seeds", type=int, nargs="+")
    t.add_argument("--total-timesteps", type=int)
    t.add_argument("--output-dir")
    t.add_argument("--num-envs", type=int)
    t.add_argument("--num-rules", type=int)
    t.add_argument("--rule-reward-coef", type=float)
    t.add_argument("--gamma", type=float)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained run directory (one seed)")
    e.add_argument("run")
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--sampled", action="store_true", help="sample rules instead of greedy selection")
    e.add_argument("--backend", choices=("scripted", "remote"))
    e.set_defaults(fn=cmd_eval)

    w = sub.add_parser("ewma", help="smooth one metrics column")
    w.add_argument("input")
    w.add_argument("--column", default="env_reward")
    w.add_argument("--half-life", type=float, default=100.0)
    w.add_argument("--output")
    w.set_defaults(fn=cmd_ewma)

    pl = sub.add_parser("plot", help="SVG of mean +- standard error across seeds")
    pl.add_argument("csvs", nargs="*")
    pl.add_argument("--group", action="append", help="label=a.csv,b.csv (repeatable)")
    pl.add_argument("--column", default="env_reward")
    pl.add_argument("--half-life", type=float, default=0.0, help="EWMA smoothing before averaging (0: off)")
    pl.add_argument("--title")
    pl.add_argument("--output", default="plot.svg")
    pl.set_defaults(fn=cmd_plot)

    c = sub.add_parser("compare", help="judge explanations of two episode logs pairwise")
    c.add_argument("log_a")
    c.add_argument("log_b")
    c.add_argument("--backend", choices=("scripted", "remote"))
    c.add_argument("--config", help="run config holding [remote] settings for the judge")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--limit", type=int)
    c.add_argument("--json", help="write the full result as JSON")
    c.set_defaults(fn=cmd_compare)

    s = sub.add_parser("export-survey", help="blinded survey document from two episode logs")
    s.add_argument("log_a")
    s.add_argument("log_b")
    s.add_argument("-n", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output")
    s.add_argument("--key-output", help="where to write the (unblinding) answer key")
    s.set_defaults(fn=cmd_export_survey)

    r = sub.add_parser("replay", help="re-execute a run's episode log and check it matches")
    r.add_argument("run", help="seed directory containing config.toml and episodes.jsonl")
    r.add_argument("--episode", help="ENV_IDX:EPISODE to replay a single episode")
    r.set_defaults(fn=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
