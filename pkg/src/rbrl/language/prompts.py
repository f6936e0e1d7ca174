"""Prompt bundles, language-side value types and the template files."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from string import Template

TEMPLATE_NAMES = (
    "system", "thought", "rules", "action", "cot_action", "explanation", "judge_rule",
    "judge_compat", "choose_rule", "thought_candidates", "compare", "hallucination",
)
RULE_KEYS = ("background", "rule_statement", "state_relevance")
EMPTY_EXPLANATION = "[explanation unavailable]"


@lru_cache(maxsize=None)
def template(name: str) -> Template:
    text = resources.files("rbrl.language").joinpath("templates", f"{name}.txt").read_text()
    return Template(text.strip())


def render(name: str, **fields) -> str:
    return template(name).substitute(**fields)


def template_hash() -> str:
    """Content hash over every prompt template, recorded in run directories."""
    h = hashlib.sha256()
    for name in TEMPLATE_NAMES:
        h.update(name.encode())
        h.update(template(name).template.encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class PromptBundle:
    task_text: str
    state_text: str
    action_space_text: str
    constraint_text: str
    prior_thought: str | None = None

    def __post_init__(self):
        for name in ("task_text", "state_text", "action_space_text", "constraint_text"):
            if not getattr(self, name):
                raise ValueError(f"prompt field {name} is empty")

    def text(self) -> str:
        return (f"Task: {self.task_text}\n\nState:\n{self.state_text}\n\n"
                f"Constraints: {self.constraint_text}\n\nPossible actions: {self.action_space_text}")

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Thought:
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("thought is empty")


@dataclass(frozen=True)
class Rule:
    background: str
    rule_statement: str
    state_relevance: str

    def __post_init__(self):
        if not self.rule_statement.strip():
            raise ValueError("rule_statement is empty")

    def text(self) -> str:
        parts = [self.rule_statement.strip()]
        if self.state_relevance.strip():
            parts.append(f"Relevance: {self.state_relevance.strip()}")
        if self.background.strip():
            parts.append(f"Background: {self.background.strip()}")
        return " ".join(parts)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class JudgeScores:
    er1: int
    er2: int
    er3: int

    def __post_init__(self):
        for v in (self.er1, self.er2, self.er3):
            if v not in (0, 1):
                raise ValueError("judge scores must be 0 or 1")


@dataclass(frozen=True)
class Explanation:
    text: str


@dataclass
class CallFlags:
    """Fallback events of one pipeline step, copied into the episode log."""

    padded_rules: bool = False
    action_fallback: bool = False
    explanation_failed: bool = False
    judge_unparsed: list[str] = field(default_factory=list)
    retries: int = 0


def build_prompt(env, prior_thought: str | None = None) -> PromptBundle:
    return PromptBundle(
        task_text=env.task_text,
        state_text=env.state_descriptor(),
        action_space_text=env.action_space_text,
        constraint_text=env.constraint_text(),
        prior_thought=prior_thought,
    )
