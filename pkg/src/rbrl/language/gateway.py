"""Typed calls on top of a text backend: parsing, validation, retries, fallbacks.

Every call takes a ``nonce`` that identifies the pipeline step; retries
append the attempt number. With the scripted backend the nonce fixes the
answer, so logged nonces are enough to replay a run.
"""

from __future__ import annotations

import json
import logging
import re

import numpy as np

from .backends import Backend, BackendError, stable_hash
from .prompts import (EMPTY_EXPLANATION, RULE_KEYS, CallFlags, JudgeScores, PromptBundle, Rule,
                      Thought, render)

log = logging.getLogger(__name__)


class GatewayError(RuntimeError):
    """A call that has no fallback failed; the caller aborts the episode."""


def _json_span(text: str, open_ch: str, close_ch: str):
    start, end = text.find(open_ch), text.rfind(close_ch)
    if start < 0 or end <= start:
        raise ValueError("no JSON found")
    return json.loads(text[start:end + 1])


def parse_rules(text: str) -> list[Rule]:
    """Valid, distinct rules from a model answer; malformed entries are dropped."""
    data = _json_span(text, "[", "]")
    if not isinstance(data, list):
        raise ValueError("expected a JSON array")
    out, seen = [], set()
    for item in data:
        if not isinstance(item, dict) or set(item) != set(RULE_KEYS):
            continue
        if not all(isinstance(item[k], str) for k in RULE_KEYS):
            continue
        statement = item["rule_statement"].strip()
        if not statement or statement in seen:
            continue
        seen.add(statement)
        out.append(Rule(item["background"].strip(), statement, item["state_relevance"].strip()))
    return out


def _yes_no(value) -> int:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (int, float)) and value in (0, 1):
        return int(value)
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("yes", "true", "1"):
            return 1
        if v in ("no", "false", "0"):
            return 0
    raise ValueError(f"not a yes/no answer: {value!r}")


def parse_judge(text: str, keys: tuple[str, ...]) -> dict[str, int]:
    data = _json_span(text, "{", "}")
    if not isinstance(data, dict):
        raise ValueError("expected a JSON object")
    return {k: _yes_no(data[k]) for k in keys}


def parse_choice(text: str, n: int) -> int:
    nums = {int(m) for m in re.findall(r"\d+", text)}
    if len(nums) != 1:
        raise ValueError(f"expected one rule number, got {text!r}")
    k = nums.pop()
    if not 1 <= k <= n:
        raise ValueError(f"rule number {k} out of range")
    return k - 1


def rule_reward(scores: JudgeScores) -> float:
    return (scores.er1 + scores.er2 + scores.er3) / 3.0


def format_rules(rules: list[Rule]) -> str:
    return "\n".join(f"{i + 1}. {r.text()}" for i, r in enumerate(rules))


class LanguageGateway:
    def __init__(self, backend: Backend, max_attempts: int = 3, seed: int = 0):
        if max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        self.backend = backend
        self.max_attempts = max_attempts
        self.seed = seed

    def _messages(self, kind: str, **fields) -> list[dict]:
        return [{"role": "system", "content": render("system")},
                {"role": "user", "content": render(kind, **fields)}]

    def _call(self, kind: str, messages: list[dict], ctx: dict, attempt: int) -> str:
        ctx = dict(ctx, nonce=f"{ctx.get('nonce', '')}#{attempt}")
        return self.backend.complete(kind, messages, ctx)

    def _retry(self, kind, messages, ctx, parse, flags: CallFlags | None, hard: bool = True):
        """Call and parse up to ``max_attempts`` times; returns (value or None, last text)."""
        text = ""
        for attempt in range(self.max_attempts):
            if attempt and flags is not None:
                flags.retries += 1
            try:
                text = self._call(kind, messages, ctx, attempt)
            except BackendError as exc:
                if hard:
                    raise GatewayError(f"{kind}: {exc}") from exc
                log.warning("%s backend error: %s", kind, exc)
                return None, ""
            try:
                return parse(text), text
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                log.debug("%s attempt %d unparseable: %s", kind, attempt + 1, exc)
        return None, text

    @staticmethod
    def _thought_text(thought: Thought | str | None) -> str:
        if thought is None:
            return "(none)"
        return thought.text if isinstance(thought, Thought) else thought

    # ------------------------------------------------------------------
    def thought(self, env, prompt: PromptBundle, nonce: str, flags: CallFlags | None = None) -> Thought:
        msgs = self._messages("thought", prompt=prompt.text())

        def parse(text):
            return Thought(text.strip())

        value, _ = self._retry("thought", msgs, {"env": env, "nonce": nonce}, parse, flags)
        if value is None:
            raise GatewayError("thought generation failed")
        return value

    def rules(self, env, prompt: PromptBundle, thought, q: int, nonce: str,
              flags: CallFlags | None = None) -> list[Rule]:
        msgs = self._messages("rules", prompt=prompt.text(), thought=self._thought_text(thought), q=q)
        best: list[Rule] = []

        def parse(text):
            nonlocal best
            rules = parse_rules(text)
            if len(rules) > len(best):
                best = rules
            if len(rules) < q:
                raise ValueError(f"only {len(rules)} valid rules")
            return rules[:q]

        value, _ = self._retry("rules", msgs, {"env": env, "nonce": nonce, "q": q,
                                               "thought": self._thought_text(thought)}, parse, flags)
        if value is not None:
            return value
        # pad with the environment's example rules so the set still has q entries
        rules = list(best)
        have = {r.rule_statement for r in rules}
        for ex in env.rule_examples:
            if len(rules) >= q:
                break
            if ex not in have:
                rules.append(Rule("", ex, ""))
                have.add(ex)
        while len(rules) < q:
            rules.append(rules[len(rules) % max(len(have), 1)])
        if flags is not None:
            flags.padded_rules = True
        log.warning("rule set padded with %d example rules", q - len(best))
        return rules

    def _fallback_action(self, env, nonce: str) -> int:
        rng = np.random.default_rng([self.seed, stable_hash(nonce)])
        feasible = list(env.feasible_actions())
        return int(feasible[rng.integers(len(feasible))])

    def action(self, env, prompt: PromptBundle, thought, rule: Rule, nonce: str,
               flags: CallFlags | None = None) -> int:
        msgs = self._messages("action", prompt=prompt.text(), thought=self._thought_text(thought),
                              rule=rule.text(), format=env.action_text(0))
        value, text = self._retry("action", msgs, {"env": env, "nonce": nonce, "rule": rule},
                                  env.action_parser, flags, hard=False)
        if value is None:
            if flags is not None:
                flags.action_fallback = True
            log.warning("action unparseable (%r); random feasible fallback", text[:80])
            return self._fallback_action(env, nonce)
        return value

    def cot_action(self, env, prompt: PromptBundle, thought, nonce: str,
                   flags: CallFlags | None = None) -> int:
        """Action straight from the reasoning trace, without a rule."""
        msgs = self._messages("cot_action", prompt=prompt.text(), thought=self._thought_text(thought),
                              format=env.action_text(0))
        value, text = self._retry("cot_action", msgs,
                                  {"env": env, "nonce": nonce, "thought": self._thought_text(thought)},
                                  env.action_parser, flags, hard=False)
        if value is None:
            if flags is not None:
                flags.action_fallback = True
            return self._fallback_action(env, nonce)
        return value

    def explanation(self, env, prompt: PromptBundle, thought, rule: Rule | None, action: int, nonce: str,
                    flags: CallFlags | None = None) -> str:
        clause = f"Rule followed: {rule.text()}" if rule is not None else "No explicit rule was used."
        msgs = self._messages("explanation", prompt=prompt.text(), thought=self._thought_text(thought),
                              rule_clause=clause, action=env.action_text(action))

        def parse(text):
            if not text.strip():
                raise ValueError("empty explanation")
            return text.strip()

        value, _ = self._retry("explanation", msgs,
                               {"env": env, "nonce": nonce, "rule": rule, "action": action,
                                "thought": self._thought_text(thought)}, parse, flags, hard=False)
        if value is None:
            if flags is not None:
                flags.explanation_failed = True
            return EMPTY_EXPLANATION
        return value

    def judge(self, env, prompt: PromptBundle, rule: Rule, action: int, nonce: str,
              flags: CallFlags | None = None) -> JudgeScores:
        """Rule scores: q1/q2 asked without the action, q3 in a separate call with it."""
        ctx = {"env": env, "nonce": nonce, "rule": rule, "action": action}
        msgs = self._messages("judge_rule", prompt=prompt.text(), rule=rule.text())
        v12, _ = self._retry("judge_rule", msgs, ctx, lambda t: parse_judge(t, ("q1", "q2")), flags, hard=False)
        msgs = self._messages("judge_compat", prompt=prompt.text(), rule=rule.text(),
                              action=env.action_text(action))
        v3, _ = self._retry("judge_compat", msgs, ctx, lambda t: parse_judge(t, ("q3",)), flags, hard=False)
        if v12 is None:
            v12 = {"q1": 0, "q2": 0}
            if flags is not None:
                flags.judge_unparsed += ["q1", "q2"]
            log.warning("judge q1/q2 unparseable; scored 0")
        if v3 is None:
            v3 = {"q3": 0}
            if flags is not None:
                flags.judge_unparsed.append("q3")
            log.warning("judge q3 unparseable; scored 0")
        return JudgeScores(v12["q1"], v12["q2"], v3["q3"])

    def choose_rule(self, env, prompt: PromptBundle, thought, rules: list[Rule], nonce: str,
                    flags: CallFlags | None = None) -> int:
        msgs = self._messages("choose_rule", prompt=prompt.text(), thought=self._thought_text(thought),
                              rules=format_rules(rules))
        value, _ = self._retry("choose_rule", msgs, {"env": env, "nonce": nonce, "rules": rules},
                               lambda t: parse_choice(t, len(rules)), flags, hard=False)
        if value is None:
            if flags is not None:
                flags.action_fallback = True
            rng = np.random.default_rng([self.seed, stable_hash(nonce)])
            return int(rng.integers(len(rules)))
        return value

    def thought_candidates(self, env, prompt: PromptBundle, thought, q: int, nonce: str,
                           flags: CallFlags | None = None) -> list[str]:
        msgs = self._messages("thought_candidates", prompt=prompt.text(),
                              thought=self._thought_text(thought), q=q)

        def parse(text):
            data = _json_span(text, "[", "]")
            out = [s.strip() for s in data if isinstance(s, str) and s.strip()]
            if len(out) < q:
                raise ValueError("too few candidate thoughts")
            return out[:q]

        value, _ = self._retry("thought_candidates", msgs, {"env": env, "nonce": nonce, "q": q}, parse, flags)
        if value is None:
            raise GatewayError("candidate thought generation failed")
        return value

    def compare(self, prompt_text: str, first: str, second: str, nonce: str) -> str:
        """Pairwise preference, asked in both orders; disagreement counts as a tie.

        Returns ``"first"``, ``"second"`` or ``"tie"``.
        """
        def ask(a, b, tag):
            msgs = [{"role": "system", "content": render("system")},
                    {"role": "user", "content": render("compare", prompt=prompt_text, first=a, second=b)}]
            ctx = {"nonce": f"{nonce}/{tag}", "first": a, "second": b}

            def parse(text):
                t = text.strip().strip('."\'').lower()
                if t.startswith("tie"):
                    return "tie"
                if t in ("a", "b"):
                    return t
                raise ValueError(f"bad verdict {text!r}")

            value, _ = self._retry("compare", msgs, ctx, parse, None, hard=False)
            return value or "tie"

        v1 = {"a": "first", "b": "second", "tie": "tie"}[ask(first, second, "ab")]
        v2 = {"a": "second", "b": "first", "tie": "tie"}[ask(second, first, "ba")]
        return v1 if v1 == v2 else "tie"

    def hallucination(self, prompt_text: str, explanation: str, nonce: str) -> bool | None:
        msgs = [{"role": "system", "content": render("system")},
                {"role": "user", "content": render("hallucination", prompt=prompt_text, explanation=explanation)}]

        def parse(text):
            return bool(_yes_no(text.strip().strip(".").split()[0]))

        value, _ = self._retry("hallucination", msgs,
                               {"nonce": nonce, "prompt_text": prompt_text, "explanation": explanation},
                               parse, None, hard=False)
        return value
