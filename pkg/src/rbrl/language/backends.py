"""Language model backends.

Every backend answers ``complete(kind, messages, ctx)`` with raw text. ``kind``
names the prompt template, ``messages`` is the chat transcript a remote model
sees and ``ctx`` carries the structured inputs (environment, rule, action,
nonce) that the scripted backend reads instead of the prose.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import weakref
import zlib

import httpx
import numpy as np

from .scripted import ScriptedWorld, make_world

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """The backend could not produce any answer (after its own retries)."""


def stable_hash(text: str) -> int:
    return zlib.crc32(text.encode())


class Backend:
    name = "base"

    def complete(self, kind: str, messages: list[dict], ctx: dict) -> str:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"backend": self.name}


class ScriptedBackend(Backend):
    """Offline backend driven by a scripted world per environment.

    Each answer is a pure function of ``(seed, kind, nonce)`` and the
    environment state, so a run replays exactly. ``corrupt`` maps a call
    kind to the probability of answering with malformed text and ``fail``
    to the probability of raising, which exercises gateway fallbacks.
    """

    name = "scripted"

    def __init__(self, seed: int = 0, world_kwargs: dict | None = None,
                 corrupt: dict[str, float] | None = None, fail: dict[str, float] | None = None):
        self.seed = int(seed)
        self.world_kwargs = world_kwargs or {}
        self.corrupt = corrupt or {}
        self.fail = fail or {}
        self._worlds: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()
        self._lock = threading.Lock()
        self.calls = 0

    def describe(self) -> dict:
        return {"backend": self.name, "seed": self.seed, "world_kwargs": self.world_kwargs,
                "corrupt": self.corrupt, "fail": self.fail}

    def world(self, env) -> ScriptedWorld:
        with self._lock:
            w = self._worlds.get(env)
            if w is None:
                w = make_world(env, **self.world_kwargs)
                self._worlds[env] = w
            return w

    def rng(self, kind: str, nonce: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, stable_hash(kind), stable_hash(nonce)])

    def complete(self, kind: str, messages: list[dict], ctx: dict) -> str:
        with self._lock:
            self.calls += 1
        rng = self.rng(kind, ctx.get("nonce", ""))
        if rng.random() < self.fail.get(kind, 0.0):
            raise BackendError(f"scripted failure for {kind}")
        if rng.random() < self.corrupt.get(kind, 0.0):
            return "I am not sure how to answer that."
        env = ctx.get("env")
        world = self.world(env) if env is not None else None
        handler = getattr(self, f"_{kind}", None)
        if handler is None:
            raise BackendError(f"scripted backend has no answer for {kind!r}")
        return handler(world, env, ctx, rng)

    # each handler returns the raw text a model would produce
    def _thought(self, world, env, ctx, rng):
        return world.thought(env)

    def _rules(self, world, env, ctx, rng):
        rules = world.rule_set(env, ctx["q"], rng)
        return json.dumps([r.render(env).to_dict() for r in rules])

    def _action(self, world, env, ctx, rng):
        srule = world.lookup(ctx["rule"])
        a = int(rng.choice(env.spec.num_actions, p=world.action_probs(env, srule)))
        return env.action_text(a)

    def _cot_action(self, world, env, ctx, rng):
        thought = ctx.get("thought") or ""
        if "[" in thought:
            p = world.thought_action_probs(env, thought)
        else:
            p = world.prior_probs(env)
        return env.action_text(int(rng.choice(env.spec.num_actions, p=p)))

    def _explanation(self, world, env, ctx, rng):
        action = env.action_text(ctx["action"])
        rule = ctx.get("rule")
        if rule is None:
            return f"The answer '{action}' was chosen after weighing the situation: {ctx.get('thought', '')}"
        text = f"The answer '{action}' was chosen because it follows the rule: {rule.rule_statement}."
        if rule.state_relevance:
            text += f" {rule.state_relevance}"
        return text

    def _judge_rule(self, world, env, ctx, rng):
        q1, q2 = world.judge_rule(env, ctx["rule"])
        return json.dumps({"q1": "yes" if q1 else "no", "q2": "yes" if q2 else "no"})

    def _judge_compat(self, world, env, ctx, rng):
        q3 = world.judge_compat(env, ctx["rule"], ctx["action"])
        return json.dumps({"q3": "yes" if q3 else "no"})

    def _choose_rule(self, world, env, ctx, rng):
        return str(int(rng.integers(len(ctx["rules"]))) + 1)

    def _thought_candidates(self, world, env, ctx, rng):
        return json.dumps(world.thought_candidates(env, ctx["q"], rng))

    def _compare(self, world, env, ctx, rng):
        a = ScriptedWorld.explanation_score(ctx["first"])
        b = ScriptedWorld.explanation_score(ctx["second"])
        return "A" if a > b else "B" if b > a else "tie"

    def _hallucination(self, world, env, ctx, rng):
        return "yes" if ScriptedWorld.hallucinates(ctx["prompt_text"], ctx["explanation"]) else "no"


class HttpClient:
    """JSON POST client for OpenAI-compatible endpoints.

    The API key is read from the environment variable named by ``api_key_env``
    and never stored in configs or logs. Transport errors, 429 and 5xx are
    retried with exponential backoff; other 4xx fail immediately.
    """

    def __init__(self, base_url: str | None = None, api_key_env: str = "OPENAI_API_KEY",
                 timeout: float = 60.0, max_retries: int = 5, backoff: float = 1.0,
                 max_concurrency: int = 8, transport: httpx.BaseTransport | None = None, sleep=time.sleep):
        key = os.environ.get(api_key_env)
        if not key:
            raise BackendError(f"environment variable {api_key_env} is not set")
        self.base_url = (base_url or os.environ.get("OPENAI_BASE_URL") or "https://api.openai.com/v1").rstrip("/")
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff = backoff
        self.sleep = sleep
        self._sem = threading.BoundedSemaphore(max_concurrency)
        self.client = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport,
                                   headers={"Authorization": f"Bearer {key}"})

    def post(self, path: str, payload: dict) -> dict:
        last = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._sem:
                    resp = self.client.post(path.lstrip("/"), json=payload)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
                log.warning("%s attempt %d: %s", path, attempt + 1, last)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                log.warning("%s attempt %d: %s", path, attempt + 1, last)
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                last = f"invalid JSON body: {exc}"
        raise BackendError(f"{path} failed after {self.max_retries + 1} attempts ({last})")


class RemoteBackend(Backend):
    """Chat completions from an OpenAI-compatible endpoint."""

    name = "remote"

    def __init__(self, model: str, temperature: float = 0.0, max_tokens: int = 1024, **http):
        self.http = HttpClient(**http)
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens

    def describe(self) -> dict:
        return {"backend": self.name, "model": self.model, "base_url": self.http.base_url,
                "api_key_env": self.http.api_key_env, "temperature": self.temperature}

    def complete(self, kind: str, messages: list[dict], ctx: dict) -> str:
        body = self.http.post("/chat/completions", {
            "model": self.model, "messages": messages,
            "temperature": self.temperature, "max_tokens": self.max_tokens,
        })
        try:
            return body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc
