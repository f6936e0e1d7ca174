"""Build runners from a RunConfig and lay out run directories."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from ..agent import AgentConfig, Runner
from ..embedding import make_embedder
from ..envs import make_env
from ..language.backends import RemoteBackend, ScriptedBackend
from ..language.gateway import LanguageGateway
from ..language.prompts import template_hash
from ..ppo import train_ppo
from .config import RunConfig


def make_backend(cfg: RunConfig, seed: int):
    if cfg.backend == "scripted":
        opts = cfg.scripted
        return ScriptedBackend(seed, world_kwargs=opts.get("world", {}), corrupt=opts.get("corrupt", {}),
                               fail=opts.get("fail", {}))
    return RemoteBackend(**cfg.remote)


def make_gateway(cfg: RunConfig, seed: int) -> LanguageGateway:
    return LanguageGateway(make_backend(cfg, seed), seed=seed)


def env_factory(cfg: RunConfig):
    return lambda idx: make_env(cfg.env, **cfg.env_options)


def agent_config(cfg: RunConfig, seed: int, total_timesteps: int | None = None) -> AgentConfig:
    return AgentConfig(variant=cfg.variant, num_rules=cfg.num_rules, num_envs=cfg.num_envs,
                       total_timesteps=total_timesteps or cfg.total_timesteps,
                       rule_reward_coef=cfg.rule_reward_coef, gamma=cfg.gamma, seed=seed,
                       explain=cfg.explain, concurrent=cfg.concurrent, checkpoint_every=cfg.checkpoint_every)


def build_runner(cfg: RunConfig, seed: int, run_dir: str | Path | None = None, agent=None) -> Runner:
    return Runner(agent_config(cfg, seed), env_factory(cfg), make_gateway(cfg, seed),
                  make_embedder(cfg.embedding_config()), cfg.sac_config(), run_dir, agent=agent)


def seed_dir(cfg: RunConfig, seed: int) -> Path:
    return Path(cfg.output_dir) / f"seed_{seed}"


def write_manifest(cfg: RunConfig, run_dir: Path, seed: int | None = None) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.toml")
    manifest = {"template_hash": template_hash(), "seeds": cfg.seeds, "env": cfg.env, "variant": cfg.variant,
                "backend": cfg.backend}
    if seed is not None:
        manifest["seed"] = seed
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def train_seed(cfg: RunConfig, seed: int, resume: str | Path | None = None) -> Path:
    run_dir = seed_dir(cfg, seed)
    write_manifest(cfg, run_dir, seed)
    if cfg.variant == "ppo":
        agent, rows = train_ppo(cfg.ppo_config(seed), env_factory(cfg))
        fields = list(rows[0]) if rows else ["step"]
        with open(run_dir / "metrics.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
        agent.save(run_dir / "checkpoint.npz", {"global_step": rows[-1]["step"] if rows else 0})
        return run_dir
    runner = build_runner(cfg, seed, run_dir)
    try:
        if resume:
            runner.resume(resume)
        runner.train()
    finally:
        runner.close()
    return run_dir


def train(cfg: RunConfig, resume: str | Path | None = None) -> list[Path]:
    write_manifest(cfg, Path(cfg.output_dir))
    return [train_seed(cfg, s, resume) for s in cfg.seeds]
