"""Heat-alert issuance under a season-total alert budget.

Each day the agent decides whether to issue an alert. Alerts avert
hospitalizations in proportion to a convex risk curve of the heat index,
but consecutive alerts lose effectiveness geometrically. The weather is a
seasonal sinusoid plus AR(1) noise, or a replayed CSV trajectory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .base import BudgetStatus, EnvSpec, LanguageEnv, NumericState, StepOutcome

DAYS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")


@dataclass
class HeatConfig:
    budget: int = 10
    season_length: int = 90
    base_effect: float = 1.0
    decay: float = 0.8
    risk_power: float = 2.0
    overspend_penalty: float = -1.0
    history_window: int = 14
    discount: float = 0.95
    max_episode_steps: int = 32
    # synthetic weather
    weather_mean: float = 0.45
    weather_amplitude: float = 0.3
    weather_period: float = 180.0
    weather_phase: float = 0.0
    ar_coef: float = 0.7
    noise_scale: float = 0.12
    weather_csv: str | None = None

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.base_effect < 0:
            raise ValueError("base_effect must be nonnegative")
        if self.budget < 0 or self.season_length < 1 or self.history_window < 1:
            raise ValueError("budget, season_length and history_window must be positive")
        if self.overspend_penalty > 0:
            raise ValueError("overspend_penalty must be nonpositive")

    def risk(self, heat_index: float) -> float:
        return float(np.clip(heat_index, 0.0, 1.0)) ** self.risk_power


@dataclass
class HeatState:
    heat_index: float
    remaining_budget: int
    alert_history: np.ndarray
    day_of_week: int
    day_in_season: int
    noise: float = 0.0

    @property
    def streak(self) -> int:
        """Number of consecutive alert days ending yesterday."""
        n = 0
        for bit in self.alert_history[::-1]:
            if bit < 0.5:
                break
            n += 1
        return n


def load_weather_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "heat_index" not in rows[0]:
        raise ValueError(f"{path}: expected a 'heat_index' column")
    values = np.array([float(r["heat_index"]) for r in rows])
    if np.any((values < 0) | (values > 1)):
        raise ValueError(f"{path}: heat_index values must lie in [0, 1]")
    return values


def seasonal_mean(day: int, cfg: HeatConfig) -> float:
    return cfg.weather_mean + cfg.weather_amplitude * np.sin(2 * np.pi * day / cfg.weather_period + cfg.weather_phase)


def weather_advance(state: HeatState, rng: np.random.Generator, cfg: HeatConfig) -> tuple[float, float]:
    """Next (heat_index, noise) for the synthetic generator."""
    noise = cfg.ar_coef * state.noise + cfg.noise_scale * rng.standard_normal()
    day = state.day_in_season + 1
    return float(np.clip(seasonal_mean(day, cfg) + noise, 0.0, 1.0)), float(noise)


class HeatAlertsEnv(LanguageEnv):
    name = "heat"

    def __init__(self, config: HeatConfig | None = None):
        super().__init__()
        self.cfg = config or HeatConfig()
        W = self.cfg.history_window
        self.spec = EnvSpec(
            state_dim=10 + W,
            num_actions=2,
            cost_dim=1,
            horizon=self.cfg.season_length,
            discount=self.cfg.discount,
            max_episode_steps=self.cfg.max_episode_steps,
            action_names=("no alert", "issue alert"),
        )
        self.trajectory = load_weather_csv(self.cfg.weather_csv) if self.cfg.weather_csv else None
        self.hs: HeatState | None = None
        self.alerts_issued = 0

    @property
    def task_text(self) -> str:
        return (
            "You are assisting officials with issuing heat alerts during a summer season. Alerts reduce "
            "heat-related hospitalizations, most strongly on the hottest days, but the season has a limited "
            f"alert budget of {self.cfg.budget} and alerts issued on consecutive days lose effectiveness. "
            "The goal is to maximize the hospitalizations averted over the season."
        )

    @property
    def action_space_text(self) -> str:
        return ("Decide whether to issue an alert today. Your answer should be a single integer: "
                "1 to issue an alert, 0 to not issue an alert. Alerts cannot be issued once the budget is exhausted.")

    @property
    def rule_examples(self) -> list[str]:
        return [
            "Issue an alert when the heat index is above 0.8 and budget remains",
            "Do not issue an alert when an alert was issued yesterday and the heat index is below 0.9",
            "Conserve alerts early in the season when the heat index is moderate",
        ]

    def action_text(self, action: int) -> str:
        return f"I will issue the alert: {int(action)}"

    def constraint_text(self) -> str:
        hs = self.hs
        return f"Remaining alert budget: {hs.remaining_budget} of {self.cfg.budget}."

    def state_descriptor(self, state: NumericState | None = None) -> str:
        hs = self.hs
        hist = "".join(str(int(b)) for b in hs.alert_history)
        return (
            f"Day {hs.day_in_season + 1} of {self.cfg.season_length} ({DAYS[hs.day_of_week]}).\n"
            f"Heat index quantile: {hs.heat_index:.2f}\n"
            f"Remaining alert budget: {hs.remaining_budget}"
            + (" (zero remaining alerts)" if hs.remaining_budget == 0 else "") + "\n"
            f"Alerts in the last {len(hs.alert_history)} days (oldest first): {hist}\n"
            f"Current consecutive alert streak: {hs.streak}"
        )

    def _numeric(self) -> NumericState:
        hs = self.hs
        dow = np.zeros(7)
        dow[hs.day_of_week] = 1.0
        head = [hs.heat_index, hs.remaining_budget / max(self.cfg.budget, 1), hs.day_in_season / self.cfg.season_length]
        return NumericState(np.concatenate([head, dow, hs.alert_history]), self.t)

    def budget_status(self) -> BudgetStatus:
        return BudgetStatus(np.array([float(self.alerts_issued)]), np.array([float(self.cfg.budget)]))

    def _heat_at(self, day: int, noise: float) -> float:
        if self.trajectory is not None:
            return float(self.trajectory[day])
        return float(np.clip(seasonal_mean(day, self.cfg) + noise, 0.0, 1.0))

    def _reset(self) -> NumericState:
        cfg = self.cfg
        noise = cfg.noise_scale * self.rng.standard_normal() / np.sqrt(max(1 - cfg.ar_coef ** 2, 1e-12))
        self.hs = HeatState(
            heat_index=self._heat_at(0, noise),
            remaining_budget=cfg.budget,
            alert_history=np.zeros(cfg.history_window),
            day_of_week=int(self.rng.integers(7)),
            day_in_season=0,
            noise=noise,
        )
        self.alerts_issued = 0
        return self._numeric()

    def alert_reward(self, hs: HeatState) -> float:
        return self.cfg.risk(hs.heat_index) * self.cfg.base_effect * self.cfg.decay ** hs.streak

    def _step(self, action: int) -> StepOutcome:
        cfg = self.cfg
        hs = self.hs
        note = ""
        if action == 1 and hs.remaining_budget == 0:
            reward = cfg.overspend_penalty
            issued = 0
            note = "alert requested with no remaining budget; not issued"
        elif action == 1:
            reward = self.alert_reward(hs)
            issued = 1
            self.alerts_issued += 1
            note = f"alert issued (streak {hs.streak})"
        else:
            reward = 0.0
            issued = 0

        day = hs.day_in_season + 1
        terminated = day >= cfg.season_length
        truncated = False
        if self.trajectory is not None:
            if day >= len(self.trajectory):
                truncated = not terminated
                heat, noise = hs.heat_index, hs.noise
            else:
                heat, noise = float(self.trajectory[day]), 0.0
        else:
            heat, noise = weather_advance(hs, self.rng, cfg)
        self.hs = HeatState(
            heat_index=heat,
            remaining_budget=hs.remaining_budget - issued,
            alert_history=np.concatenate([hs.alert_history[1:], [float(issued)]]),
            day_of_week=(hs.day_of_week + 1) % 7,
            day_in_season=day,
            noise=noise,
        )
        return StepOutcome(self._numeric(), float(reward), terminated, truncated, note,
                           {"issued": issued, "requested": action})
