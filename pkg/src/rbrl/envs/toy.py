"""Small enumerable environments for end-to-end checks of the learning pipeline."""

from __future__ import annotations

import numpy as np

from .base import BudgetStatus, EnvSpec, LanguageEnv, NumericState, StepOutcome


class ToyEnv(LanguageEnv):
    """Finite MDP with a one-hot numeric state.

    ``transition[s, a]`` is the next-state distribution; ``reward[s, a]`` the
    deterministic reward. ``optimal_action`` builds the usual acceptance toy:
    that action pays 1, every other action pays 0, next states are uniform.
    """

    name = "toy"

    def __init__(self, n_states: int = 3, n_actions: int = 5, transition=None, reward=None,
                 optimal_action: int | None = 0, max_episode_steps: int = 32, discount: float = 0.95):
        super().__init__()
        self.n_states = n_states
        self.n_actions = n_actions
        if transition is None:
            transition = np.full((n_states, n_actions, n_states), 1.0 / n_states)
        self.transition = np.asarray(transition, dtype=float)
        if not np.allclose(self.transition.sum(-1), 1.0):
            raise ValueError("transition rows must sum to one")
        if reward is None:
            reward = np.zeros((n_states, n_actions))
            if optimal_action is not None:
                reward[:, optimal_action] = 1.0
        self.reward = np.asarray(reward, dtype=float)
        self.optimal_action = optimal_action
        self.spec = EnvSpec(state_dim=n_states, num_actions=n_actions, cost_dim=1,
                            horizon=max_episode_steps, discount=discount,
                            max_episode_steps=max_episode_steps,
                            action_names=tuple(f"option {a}" for a in range(n_actions)))
        self.s = 0

    @property
    def task_text(self) -> str:
        return (f"You control a small system with {self.n_states} states. Each step pick one of "
                f"{self.n_actions} options to collect as much reward as possible.")

    @property
    def action_space_text(self) -> str:
        return f"Answer with a single integer option id from 0 to {self.n_actions - 1}."

    @property
    def rule_examples(self) -> list[str]:
        return [f"Choose option {a} when the system is in any state" for a in range(self.n_actions)]

    def constraint_text(self) -> str:
        return "No budget constraint applies."

    def state_descriptor(self, state: NumericState | None = None) -> str:
        s = self.s if state is None else int(np.argmax(state.values))
        return f"The system is in state {s}."

    def _numeric(self) -> NumericState:
        v = np.zeros(self.n_states)
        v[self.s] = 1.0
        return NumericState(v, self.t)

    def set_state(self, s: int) -> NumericState:
        self.s = int(s)
        self._state = self._numeric()
        self.done = False
        return self._state

    def budget_status(self) -> BudgetStatus:
        return BudgetStatus(np.zeros(1), np.zeros(1))

    def _reset(self) -> NumericState:
        self.s = int(self.rng.integers(self.n_states))
        return self._numeric()

    def _step(self, action: int) -> StepOutcome:
        r = float(self.reward[self.s, action])
        self.s = int(self.rng.choice(self.n_states, p=self.transition[self.s, action]))
        return StepOutcome(self._numeric(), r, False, False, "")
