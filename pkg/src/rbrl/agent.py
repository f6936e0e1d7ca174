"""Rollout orchestration for the rule-based agent and its ablations.

Variants:

* ``rbrl``: the language model proposes q rules, the SAC actor picks one, the
  model acts on it; the judge's rule reward is added to the env reward.
* ``tbrl``: the candidates are q free-form thoughts (no rule structure, no judge).
* ``rules-llm-only``: the model proposes rules and picks one itself; no learning.
* ``cot``: thought, then action directly; no rules, no learning.
* ``random-rule``: rules are proposed and one is picked uniformly at random.

Each iteration has three phases. Candidate sets for the current states were
prepared at the end of the previous iteration (phase 3), the actor picks
for every env on the calling thread (phase 2), then every worker acts, steps
its env and prepares the next candidate set concurrently (phase 3). Results
are consumed in env order, so runs are reproducible regardless of thread
scheduling. Explanations and judge calls read only the pre-step prompt and
are issued before the env steps.
"""

from __future__ import annotations

import csv
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .embedding import CachedEmbedder, HashEmbedder
from .language.backends import BackendError
from .language.gateway import GatewayError, LanguageGateway, rule_reward
from .language.prompts import EMPTY_EXPLANATION, CallFlags, JudgeScores, PromptBundle, Rule, build_prompt
from .sac import AugmentedState, ReplayBuffer, SacAgent, SacConfig, Transition

log = logging.getLogger(__name__)

VARIANTS = ("rbrl", "tbrl", "rules-llm-only", "cot", "random-rule")
LEARNING = ("rbrl", "tbrl")
RULE_VARIANTS = ("rbrl", "rules-llm-only", "random-rule")
MAX_ABORTS = 10

METRIC_FIELDS = ("step", "iteration", "env_reward", "rule_reward", "er1", "er2", "er3", "episode_return",
                 "qf1_loss", "qf2_loss", "actor_loss", "beta", "entropy")


@dataclass
class AgentConfig:
    variant: str = "rbrl"
    num_rules: int = 5
    num_envs: int = 4
    total_timesteps: int = 2000
    rule_reward_coef: float = 1.0
    gamma: float = 0.95
    seed: int = 0
    explain: bool = True
    concurrent: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.num_rules < 1 or self.num_envs < 1 or self.total_timesteps < 1:
            raise ValueError("num_rules, num_envs and total_timesteps must be positive")
        if self.rule_reward_coef < 0:
            raise ValueError("rule_reward_coef must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


def episode_seed(seed: int, env_idx: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, env_idx, episode]).generate_state(1)[0])


def make_nonce(seed: int, env_idx: int, episode: int, t: int) -> str:
    return f"{seed}/{env_idx}/{episode}/{t}"


@dataclass
class Prepared:
    """Everything generated for one state before a candidate is chosen."""

    nonce: str
    prompt: PromptBundle
    numeric: np.ndarray
    thought: str
    rules: list[Rule] = field(default_factory=list)
    texts: list[str] = field(default_factory=list)
    embeddings: np.ndarray | None = None
    flags: CallFlags = field(default_factory=CallFlags)

    def augmented(self) -> AugmentedState:
        return AugmentedState(self.numeric, self.embeddings, tuple(self.texts))


class JsonlSink:
    """Serialized JSON-lines writer; keeps records in memory when no path is given."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        self._lock = threading.Lock()
        self._fh = None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a")

    def write(self, record: dict) -> None:
        with self._lock:
            if self._fh:
                self._fh.write(json.dumps(record, sort_keys=True) + "\n")
                self._fh.flush()
            else:
                self.records.append(record)

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


class Pipeline:
    """Per-step language calls for one variant; shared by training, evaluation and replay."""

    def __init__(self, cfg: AgentConfig, gateway: LanguageGateway, embedder=None):
        self.cfg = cfg
        self.gateway = gateway
        self.embedder = embedder or CachedEmbedder(HashEmbedder())

    def prepare(self, env, nonce: str, rules: list[Rule] | None = None) -> Prepared:
        """Prompt, thought and candidate set for the env's current state.

        ``rules`` forces the candidate set instead of generating it.
        """
        flags = CallFlags()
        prompt = build_prompt(env)
        thought = self.gateway.thought(env, prompt, nonce, flags).text
        prompt = build_prompt(env, thought)
        prep = Prepared(nonce, prompt, env.state.values.copy(), thought, flags=flags)
        variant = self.cfg.variant
        if variant == "cot":
            return prep
        if variant == "tbrl":
            prep.texts = self.gateway.thought_candidates(env, prompt, thought, self.cfg.num_rules, nonce, flags)
        else:
            prep.rules = rules if rules is not None else self.gateway.rules(
                env, prompt, thought, self.cfg.num_rules, nonce, flags)
            prep.texts = [r.text() for r in prep.rules]
        if variant != "rules-llm-only":
            try:
                prep.embeddings = self.embedder.embed(prep.texts)
            except BackendError as exc:
                raise GatewayError(f"embedding failed: {exc}") from exc
        return prep

    def act(self, env, prep: Prepared, chosen: int | None, explain: bool = True, judge: bool = True) -> dict:
        """Action, explanation and judge verdicts for the chosen candidate, then one env step."""
        gw, variant, flags = self.gateway, self.cfg.variant, prep.flags
        rule = None
        if variant == "rules-llm-only":
            chosen = gw.choose_rule(env, prep.prompt, prep.thought, prep.rules, prep.nonce, flags)
        if variant in RULE_VARIANTS:
            rule = prep.rules[chosen]
            action = gw.action(env, prep.prompt, prep.thought, rule, prep.nonce, flags)
        elif variant == "tbrl":
            action = gw.cot_action(env, prep.prompt, prep.texts[chosen], prep.nonce, flags)
        else:
            action = gw.cot_action(env, prep.prompt, prep.thought, prep.nonce, flags)
        explanation = None
        if explain:
            thought = prep.texts[chosen] if variant == "tbrl" else prep.thought
            explanation = gw.explanation(env, prep.prompt, thought, rule, action, prep.nonce, flags)
        scores = None
        r_rule = 0.0
        if rule is not None and judge:
            scores = gw.judge(env, prep.prompt, rule, action, prep.nonce, flags)
            r_rule = rule_reward(scores)
        outcome = env.step(action)
        return {"chosen": chosen, "rule": rule, "action": int(action), "explanation": explanation,
                "scores": scores, "rule_reward": r_rule, "outcome": outcome}


@dataclass
class Worker:
    idx: int
    env: object
    episode: int = -1
    t: int = 0
    ep_return: float = 0.0
    pending: Prepared | None = None
    aborts: int = 0


class Runner:
    """Runs one agent variant over ``num_envs`` environments.

    ``env_fn(idx)`` builds the environment for worker ``idx``. Learning
    variants hold a :class:`SacAgent`; the others only roll out.
    """

    def __init__(self, cfg: AgentConfig, env_fn: Callable, gateway: LanguageGateway, embedder=None,
                 sac_cfg: SacConfig | None = None, run_dir: str | Path | None = None,
                 agent: SacAgent | None = None):
        self.cfg = cfg
        self.pipeline = Pipeline(cfg, gateway, embedder)
        self.workers = [Worker(i, env_fn(i)) for i in range(cfg.num_envs)]
        self.sac_cfg = sac_cfg or SacConfig(gamma=cfg.gamma)
        if self.sac_cfg.gamma != cfg.gamma:
            raise ValueError("agent gamma and SAC gamma disagree")
        env0 = self.workers[0].env
        self.agent = agent
        if cfg.variant in LEARNING and self.agent is None:
            self.agent = SacAgent(self.sac_cfg, env0.spec.state_dim, self.pipeline.embedder.dim, cfg.seed)
        self.buffer = ReplayBuffer(self.sac_cfg.buffer_size)
        self.rng = np.random.default_rng([cfg.seed, 7])
        self.run_dir = Path(run_dir) if run_dir else None
        self.episodes = JsonlSink(self.run_dir / "episodes.jsonl" if self.run_dir else None)
        self.metrics: list[dict] = []
        self.global_step = 0
        self.iteration = 0
        self.last_losses: dict = {}
        self.training = True
        self._pool = ThreadPoolExecutor(cfg.num_envs) if cfg.concurrent and cfg.num_envs > 1 else None

    # ---- episode bookkeeping -----------------------------------------
    def _start_episode(self, w: Worker) -> None:
        while True:
            w.episode += 1
            w.t = 0
            w.ep_return = 0.0
            w.env.reset(seed=episode_seed(self.cfg.seed, w.idx, w.episode))
            try:
                w.pending = self.pipeline.prepare(w.env, make_nonce(self.cfg.seed, w.idx, w.episode, 0))
                return
            except GatewayError as exc:
                self._abort(w, exc)

    def _abort(self, w: Worker, exc: Exception) -> None:
        w.aborts += 1
        log.warning("env %d episode %d aborted: %s", w.idx, w.episode, exc)
        self.episodes.write({"event": "abort", "env_idx": w.idx, "episode": w.episode, "t": w.t,
                             "error": str(exc)})
        if w.aborts > MAX_ABORTS:
            raise GatewayError(f"too many aborted episodes on env {w.idx}") from exc

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    # ---- selection ---------------------------------------------------
    def select(self, prep: Prepared, greedy: bool = False) -> tuple[int | None, list[float] | None]:
        variant = self.cfg.variant
        if variant in LEARNING:
            probs = self.agent.policy(prep.augmented())
            chosen = int(np.argmax(probs)) if greedy else int(self.rng.choice(len(probs), p=probs))
            return chosen, [float(p) for p in probs]
        if variant == "random-rule":
            return int(self.rng.integers(len(prep.texts))), None
        return None, None

    def _work(self, item):
        w, chosen, explain = item
        prep = w.pending
        try:
            res = self.pipeline.act(w.env, prep, chosen, explain=explain)
        except GatewayError as exc:
            return {"error": exc}
        out = res["outcome"]
        res["next"] = None
        if not out.terminated:
            # the next candidate set is generated with the nonce of the next step, so it is
            # both the bootstrap target here and the current state of the following iteration
            try:
                res["next"] = self.pipeline.prepare(w.env, make_nonce(self.cfg.seed, w.idx, w.episode, w.t + 1))
            except GatewayError as exc:
                res["error"] = exc
        return res

    # ---- main loop ---------------------------------------------------
    def step(self, greedy: bool = False, explain: bool | None = None) -> list[dict]:
        """One vector iteration; returns the per-env step records (aborts excluded)."""
        explain = self.cfg.explain if explain is None else explain
        for w in self.workers:
            if w.pending is None:
                self._start_episode(w)
        choices = [self.select(w.pending, greedy) for w in self.workers]
        results = self._map(self._work, [(w, c[0], explain) for w, c in zip(self.workers, choices)])
        records = []
        for w, (chosen, probs), res in zip(self.workers, choices, results):
            if "error" in res:
                self._abort(w, res["error"])
                w.pending = None
                continue
            records.append(self._consume(w, res, probs))
        self.iteration += 1
        return records

    def _consume(self, w: Worker, res: dict, probs) -> dict:
        prep, out = w.pending, res["outcome"]
        r_env = float(out.env_reward)
        r_rule = float(res["rule_reward"])
        coef = self.cfg.rule_reward_coef if self.cfg.variant in RULE_VARIANTS else 0.0
        combined = r_env + coef * r_rule
        if self.cfg.variant in LEARNING and self.training:
            nxt = res["next"] if res["next"] is not None else prep
            self.buffer.push(Transition(prep.augmented(), res["chosen"], combined, nxt.augmented(),
                                        bool(out.terminated), r_env, r_rule))
        scores: JudgeScores | None = res["scores"]
        w.ep_return += r_env
        done = out.terminated or out.truncated
        record = {
            "env_idx": w.idx, "episode": w.episode, "t": w.t, "step": self.global_step, "nonce": prep.nonce,
            "prompt_hash": prep.prompt.digest(), "prompt": prep.prompt.text(), "state_text": prep.prompt.state_text,
            "thought": prep.thought, "candidates": prep.texts,
            "rules": [r.to_dict() for r in prep.rules],
            "chosen": res["chosen"], "probs": probs, "action": res["action"],
            "er1": scores.er1 if scores else None, "er2": scores.er2 if scores else None,
            "er3": scores.er3 if scores else None,
            "env_reward": r_env, "rule_reward": r_rule, "combined_reward": combined,
            "explanation": res["explanation"], "terminated": bool(out.terminated), "truncated": bool(out.truncated),
            "flags": asdict(prep.flags), "episode_return": w.ep_return if done else None,
        }
        self.episodes.write(record)
        self.global_step += 1
        w.t += 1
        w.aborts = 0
        w.pending = None if done else res["next"]
        return record

    def learn(self) -> dict:
        if self.cfg.variant not in LEARNING:
            return {}
        sc = self.sac_cfg
        if self.global_step < sc.learning_starts or len(self.buffer) < sc.batch_size:
            return {}
        if self.iteration % sc.update_every != 0:
            return {}
        self.last_losses = self.agent.update_cycle(self.buffer, self.iteration)
        return self.last_losses

    def _metric_row(self, records: list[dict], losses: dict) -> dict:
        def mean(key):
            vals = [r[key] for r in records if r.get(key) is not None]
            return float(np.mean(vals)) if vals else ""

        row = {"step": self.global_step, "iteration": self.iteration, "env_reward": mean("env_reward"),
               "rule_reward": mean("rule_reward"), "er1": mean("er1"), "er2": mean("er2"), "er3": mean("er3"),
               "episode_return": mean("episode_return")}
        for k in ("qf1_loss", "qf2_loss", "actor_loss", "beta", "entropy"):
            row[k] = losses.get(k, "")
        return row

    def train(self) -> list[dict]:
        """Roll out (and learn, for learning variants) until ``total_timesteps`` transitions."""
        metrics_fh = None
        writer = None
        if self.run_dir:
            path = self.run_dir / "metrics.csv"
            new = not path.exists()
            metrics_fh = open(path, "a", newline="")
            writer = csv.DictWriter(metrics_fh, fieldnames=METRIC_FIELDS)
            if new:
                writer.writeheader()
        try:
            while self.global_step < self.cfg.total_timesteps:
                records = self.step()
                losses = self.learn()
                row = self._metric_row(records, losses)
                self.metrics.append(row)
                if writer:
                    writer.writerow(row)
                if (self.cfg.checkpoint_every and self.run_dir and self.agent is not None
                        and self.iteration % self.cfg.checkpoint_every == 0):
                    self.save_checkpoint()
        finally:
            if metrics_fh:
                metrics_fh.close()
        if self.run_dir and self.agent is not None:
            self.save_checkpoint()
        return self.metrics

    def save_checkpoint(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path else self.run_dir / "checkpoint.npz"
        return self.agent.save(path, {"global_step": self.global_step, "iteration": self.iteration,
                                      "policy_rng": self.rng.bit_generator.state,
                                      "episodes": [w.episode for w in self.workers]}, self.buffer)

    def resume(self, path: str | Path) -> dict:
        """Continue from a checkpoint: networks, optimizers, RNGs and step counters.

        Replay contents are not persisted, so the buffer refills from fresh episodes
        (each env starts a new episode after the last logged one).
        """
        agent, meta = SacAgent.load(path)
        self.agent = agent
        self.global_step = meta["global_step"]
        self.iteration = meta["iteration"]
        self.rng.bit_generator.state = meta["policy_rng"]
        for w, ep in zip(self.workers, meta["episodes"]):
            w.episode = ep
            w.pending = None
        return meta

    def close(self) -> None:
        self.episodes.close()
        if self._pool:
            self._pool.shutdown()


def evaluate(runner: Runner, episodes: int, greedy: bool = True, explain: bool = False) -> dict:
    """Run complete episodes without learning; returns return statistics.

    ``optimal_rate`` is the fraction of steps whose action equals the env's
    ``optimal_action`` (toy environments only).
    """
    returns, actions = [], []
    for w in runner.workers:
        w.pending = None
    runner.training = False
    try:
        while len(returns) < episodes:
            for rec in runner.step(greedy=greedy, explain=explain):
                actions.append(rec["action"])
                if rec["episode_return"] is not None and len(returns) < episodes:
                    returns.append(rec["episode_return"])
    finally:
        runner.training = True
    out = {"mean_return": float(np.mean(returns)), "std_return": float(np.std(returns)), "episodes": len(returns)}
    opt = getattr(runner.workers[0].env, "optimal_action", None)
    if opt is not None:
        out["optimal_rate"] = float(np.mean(np.asarray(actions) == opt))
    return out


def write_metrics(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


class ReplayMismatch(AssertionError):
    pass


def replay_episode(records: list[dict], cfg: AgentConfig, env, gateway: LanguageGateway, embedder=None) -> int:
    """Re-execute one logged episode with the logged choices and compare every field.

    Returns the number of steps checked; raises :class:`ReplayMismatch` on the
    first difference.
    """
    pipeline = Pipeline(cfg, gateway, embedder)
    records = sorted(records, key=lambda r: r["t"])
    first = records[0]
    env.reset(seed=episode_seed(cfg.seed, first["env_idx"], first["episode"]))
    for rec in records:
        prep = pipeline.prepare(env, rec["nonce"])
        checks = {"prompt_hash": prep.prompt.digest(), "thought": prep.thought, "candidates": prep.texts,
                  "rules": [r.to_dict() for r in prep.rules]}
        res = pipeline.act(env, prep, rec["chosen"], explain=rec["explanation"] is not None)
        scores = res["scores"]
        checks.update({
            "chosen": res["chosen"], "action": res["action"], "explanation": res["explanation"],
            "er1": scores.er1 if scores else None, "er2": scores.er2 if scores else None,
            "er3": scores.er3 if scores else None, "rule_reward": res["rule_reward"],
            "env_reward": float(res["outcome"].env_reward), "flags": asdict(prep.flags),
        })
        for k, v in checks.items():
            if rec[k] != v:
                raise ReplayMismatch(f"episode {rec['episode']} env {rec['env_idx']} t={rec['t']}: "
                                     f"{k} differs (logged {rec[k]!r}, replayed {v!r})")
    return len(records)


def group_episodes(records: list[dict]) -> dict[tuple[int, int], list[dict]]:
    out: dict[tuple[int, int], list[dict]] = {}
    for r in records:
        if r.get("event") == "abort":
            continue
        out.setdefault((r["env_idx"], r["episode"]), []).append(r)
    return out
