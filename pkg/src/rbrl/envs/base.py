"""Budget-constrained environment contract and the language wrapper surface.

Every environment exposes a numeric state for the RL networks and a text
rendering for the language model, and parses free-form model answers back
into discrete actions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


class ActionError(ValueError):
    """Raised when an action is outside the environment's action space."""


class ParseFailure(ValueError):
    """Raised when no unambiguous action id can be read from model output."""


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    num_actions: int
    cost_dim: int
    horizon: int
    discount: float
    max_episode_steps: int
    action_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.state_dim < 1:
            raise ValueError("state_dim must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if self.max_episode_steps < 1 or self.num_actions < 1 or self.cost_dim < 1:
            raise ValueError("max_episode_steps, num_actions and cost_dim must be positive")


@dataclass
class NumericState:
    values: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("numeric state contains non-finite values")


@dataclass
class BudgetStatus:
    cost_so_far: np.ndarray
    budget: np.ndarray

    @property
    def remaining(self) -> np.ndarray:
        return self.budget - self.cost_so_far

    def within(self) -> bool:
        return bool(np.all(self.cost_so_far <= self.budget))


@dataclass
class StepOutcome:
    next_state: NumericState
    env_reward: float
    terminated: bool
    truncated: bool
    info_text: str = ""
    info: dict[str, Any] = field(default_factory=dict)


_STRUCTURED = re.compile(r"\{[^{}]*?:\s*(-?\d+)\s*\}")
_INTEGER = re.compile(r"(?<![\w.])-?\d+(?![\w.]*\d)")


def parse_action_id(answer: str, num_actions: int) -> int:
    """Extract a single action id from free-form text.

    A dict-like fragment such as ``{'device': 3}`` wins over loose integers.
    Otherwise all integers in the text must agree on one in-range value.
    """
    structured = {int(m) for m in _STRUCTURED.findall(answer)}
    if len(structured) == 1:
        candidates = structured
    elif len(structured) > 1:
        raise ParseFailure(f"conflicting structured actions in {answer!r}")
    else:
        candidates = {int(m) for m in _INTEGER.findall(answer)}
    if not candidates:
        raise ParseFailure(f"no integer found in {answer!r}")
    if len(candidates) > 1:
        raise ParseFailure(f"ambiguous action in {answer!r}: {sorted(candidates)}")
    (action,) = candidates
    if not 0 <= action < num_actions:
        raise ParseFailure(f"action {action} outside [0, {num_actions})")
    return action


class LanguageEnv:
    """Base class for environments usable by the language pipeline.

    Subclasses implement ``_reset``, ``_step``, ``state_descriptor`` and the
    text properties. ``reset``/``step`` here add range checks, truncation and
    the text rendering.
    """

    spec: EnvSpec
    name = "env"

    def __init__(self):
        self.rng = np.random.default_rng(0)
        self.t = 0
        self.done = False
        self._state: NumericState | None = None

    # ---- text surface -------------------------------------------------
    @property
    def task_text(self) -> str:
        raise NotImplementedError

    @property
    def action_space_text(self) -> str:
        raise NotImplementedError

    @property
    def rule_examples(self) -> list[str]:
        return []

    def state_descriptor(self, state: NumericState | None = None) -> str:
        raise NotImplementedError

    def constraint_text(self) -> str:
        raise NotImplementedError

    def action_parser(self, answer: str) -> int:
        return parse_action_id(answer, self.spec.num_actions)

    def action_text(self, action: int) -> str:
        """Canonical answer string for an action; round-trips through action_parser."""
        return f"{{'action': {int(action)}}}"

    # ---- dynamics -----------------------------------------------------
    def reset(self, seed: int | None = None) -> tuple[NumericState, str]:
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = False
        self._state = self._reset()
        return self._state, self.state_descriptor(self._state)

    def step(self, action: int) -> StepOutcome:
        if self._state is None or self.done:
            raise RuntimeError("step() called before reset() or after episode end")
        action = int(action)
        if not 0 <= action < self.spec.num_actions:
            raise ActionError(f"action {action} outside [0, {self.spec.num_actions})")
        outcome = self._step(action)
        self.t += 1
        outcome.next_state.step_index = self.t
        if not outcome.terminated and self.t >= self.spec.max_episode_steps:
            outcome.truncated = True
        self.done = outcome.terminated or outcome.truncated
        self._state = outcome.next_state
        return outcome

    @property
    def state(self) -> NumericState:
        if self._state is None:
            raise RuntimeError("environment not reset")
        return self._state

    def budget_status(self) -> BudgetStatus:
        raise NotImplementedError

    def feasible_actions(self) -> Sequence[int]:
        return range(self.spec.num_actions)

    def _reset(self) -> NumericState:
        raise NotImplementedError

    def _step(self, action: int) -> StepOutcome:
        raise NotImplementedError
