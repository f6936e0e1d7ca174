"""Deterministic stand-in for the language model.

A scripted *world* per environment holds a library of parameterized
prioritization rules, each tied to a heuristic that maps the live
environment state to an action. The scripted backend uses the world to
produce thoughts, rule sets, actions, explanations and judge verdicts as
text, so the gateway's parsing and fallback paths are exercised exactly as
they would be with a remote model.

Vague rules have no heuristic: the scripted model then acts on its own
prior, and the scripted judge scores them low.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..envs.heat import HeatAlertsEnv
from ..envs.toy import ToyEnv
from ..envs.vitals import VITAL_LABELS, VITALS, VitalsEnv, deviation_cost, is_normal, risk_score, stability
from .prompts import Rule

_NUMBER = re.compile(r"\d+(?:\.\d+)?")


@dataclass(frozen=True)
class ScriptedRule:
    key: str
    statement: str
    background: str
    relevance: Callable | None = None
    heuristic: Callable | None = None
    available: Callable | None = None

    @property
    def specific(self) -> bool:
        return self.heuristic is not None

    def render(self, env) -> Rule:
        rel = self.relevance(env) if self.relevance else ""
        return Rule(self.background, self.statement, rel)


def one_hot(n: int, i: int) -> np.ndarray:
    p = np.zeros(n)
    p[i] = 1.0
    return p


class ScriptedWorld:
    """Base scripted world; subclasses fill ``pool`` and the prior."""

    follow_prob_thought = 0.7

    def __init__(self, pool: list[ScriptedRule]):
        self.pool = pool
        self.by_statement = {r.statement: r for r in pool}

    # ---- rules -------------------------------------------------------
    def available_rules(self, env) -> list[ScriptedRule]:
        return [r for r in self.pool if r.available is None or r.available(env)]

    def rule_set(self, env, q: int, rng: np.random.Generator) -> list[ScriptedRule]:
        avail = self.available_rules(env)
        order = rng.permutation(len(avail))[:q]
        return [avail[i] for i in order]

    def lookup(self, rule: Rule | str) -> ScriptedRule | None:
        statement = rule.rule_statement if isinstance(rule, Rule) else rule
        return self.by_statement.get(statement)

    # ---- actions -----------------------------------------------------
    def prior_probs(self, env) -> np.ndarray:
        n = env.spec.num_actions
        return np.full(n, 1.0 / n)

    def action_probs(self, env, srule: ScriptedRule | None) -> np.ndarray:
        if srule is None or srule.heuristic is None:
            return self.prior_probs(env)
        return one_hot(env.spec.num_actions, srule.heuristic(env))

    def heuristic_action(self, env, srule: ScriptedRule | None) -> int | None:
        if srule is None or srule.heuristic is None:
            return None
        return int(srule.heuristic(env))

    # ---- thoughts ----------------------------------------------------
    def thought(self, env) -> str:
        raise NotImplementedError

    def thought_candidates(self, env, q: int, rng: np.random.Generator) -> list[str]:
        """Free-form reasoning traces, each leaning toward one library heuristic."""
        specific = [r for r in self.available_rules(env) if r.specific]
        picks = rng.permutation(len(specific))[:q]
        out = []
        for i in picks:
            r = specific[i]
            out.append(f"Thinking it over, one sensible idea here: {r.statement[0].lower()}{r.statement[1:]}. "
                       f"[{r.key}] Other considerations might still change the final call.")
        while len(out) < q:
            out.append(f"Thinking it over, it is hard to say what matters most here. [prior{len(out)}]")
        return out

    def thought_action_probs(self, env, thought: str) -> np.ndarray:
        m = re.search(r"\[([^\]]+)\]", thought)
        srule = next((r for r in self.pool if m and r.key == m.group(1)), None)
        prior = self.prior_probs(env)
        if srule is None or srule.heuristic is None:
            return prior
        follow = one_hot(env.spec.num_actions, srule.heuristic(env))
        return self.follow_prob_thought * follow + (1.0 - self.follow_prob_thought) * prior

    # ---- judging -----------------------------------------------------
    def judge_rule(self, env, rule: Rule) -> tuple[int, int]:
        srule = self.lookup(rule)
        if srule is None:
            return 0, int(bool(rule.state_relevance.strip()))
        return int(srule.specific), int(srule.specific and bool(rule.state_relevance.strip()))

    def judge_compat(self, env, rule: Rule, action: int) -> int:
        h = self.heuristic_action(env, self.lookup(rule))
        return int(h is not None and h == int(action))

    @staticmethod
    def explanation_score(text: str) -> int:
        return int("rule" in text.lower())

    @staticmethod
    def hallucinates(prompt: str, explanation: str) -> bool:
        present = set(_NUMBER.findall(prompt))
        return any(n not in present for n in _NUMBER.findall(explanation))


# ---------------------------------------------------------------------------
# wearable devices


def _occupied(env: VitalsEnv):
    return [(i, p) for i, p in enumerate(env.slots) if p is not None]


def _free_or(pick):
    def heuristic(env: VitalsEnv) -> int:
        free = env.free_devices()
        if free:
            return free[0]
        return pick(env)
    return heuristic


def _describe(env: VitalsEnv, i: int) -> str:
    p = env.slots[i]
    if p is None:
        return f"device {i} is free"
    vit = ", ".join(f"{VITAL_LABELS[v].lower()} {p.last[k]:.2f}" for k, v in enumerate(VITALS))
    return f"device {i} patient has {vit} after {p.time_worn} timesteps"


def _relevance(pick):
    def relevance(env: VitalsEnv) -> str:
        free = env.free_devices()
        if free:
            return f"Device {free[0]} is currently free, so no patient needs to lose a device."
        i = pick(env)
        return f"No device is free; {_describe(env, i)}."
    return relevance


def _most_stable(env):
    return max(_occupied(env), key=lambda ip: (stability(ip[1], env.cfg), -ip[0]))[0]


def _longest_worn(env):
    return max(_occupied(env), key=lambda ip: (ip[1].time_worn, -ip[0]))[0]


def _lowest_risk(env):
    return min(_occupied(env), key=lambda ip: (risk_score(ip[1], env.cfg), ip[0]))[0]


def _highest_risk(env):
    return max(_occupied(env), key=lambda ip: (deviation_cost(ip[1], env.cfg), -ip[0]))[0]


def _all_normal(env):
    normal = [i for i, p in _occupied(env) if is_normal(p.last, env.cfg)]
    return normal[0] if normal else _most_stable(env)


def _round_robin(env):
    return env.t % env.cfg.num_devices


def _first_device(env):
    return 0


class VitalsWorld(ScriptedWorld):
    def __init__(self):
        bg = "Devices help most for patients whose vitals are abnormal or volatile."
        pool = [
            ScriptedRule("free-first", "Prioritize assigning a free device when one is available",
                         "Removing a device from a patient while another is free causes a penalty.",
                         _relevance(_first_device), _free_or(_first_device)),
            ScriptedRule("most-stable", "Prioritize taking the device from the patient with the most stable vitals when no device is free",
                         bg, _relevance(_most_stable), _free_or(_most_stable)),
            ScriptedRule("all-normal", "Prioritize taking the device from a patient whose vitals are all within the normal ranges when no device is free",
                         "Patients with normal vitals gain little from monitoring.",
                         _relevance(_all_normal), _free_or(_all_normal)),
            ScriptedRule("longest-worn", "Prioritize taking the device from the patient who has worn it the longest when no device is free",
                         "Patients monitored the longest have likely been stabilized.",
                         _relevance(_longest_worn), _free_or(_longest_worn)),
            ScriptedRule("lowest-risk", "Prioritize taking the device from the patient with the lowest risk score when no device is free",
                         "Risk combines current deviation cost and volatility.",
                         _relevance(_lowest_risk), _free_or(_lowest_risk)),
            ScriptedRule("round-robin", "Prioritize rotating devices in order of device id when no device is free",
                         "Rotation spreads monitoring time evenly.",
                         _relevance(_round_robin), _free_or(_round_robin)),
            ScriptedRule("highest-risk", "Prioritize taking the device from the patient with the most abnormal vitals when no device is free",
                         "Abnormal patients may need hospital care beyond the device.",
                         _relevance(_highest_risk), _free_or(_highest_risk)),
            ScriptedRule("vague-safety", "Prioritize keeping every patient safe when making decisions", ""),
            ScriptedRule("vague-care", "Do what is best for the patients when devices are scarce", ""),
        ]
        super().__init__(pool)

    def prior_probs(self, env: VitalsEnv) -> np.ndarray:
        n = env.cfg.num_devices
        free = env.free_devices()
        if free:
            return one_hot(n, free[0])
        return np.full(n, 1.0 / n)

    def thought(self, env: VitalsEnv) -> str:
        occ = _occupied(env)
        free = env.free_devices()
        parts = [f"There are {len(free)} free devices."]
        if occ:
            worst = max(occ, key=lambda ip: (deviation_cost(ip[1], env.cfg), -ip[0]))
            best = max(occ, key=lambda ip: (stability(ip[1], env.cfg), -ip[0]))
            if deviation_cost(worst[1], env.cfg) > 0:
                parts.append(f"Device {worst[0]} has the most abnormal vitals: {_describe(env, worst[0])}.")
            else:
                parts.append("All monitored patients currently have vitals within the normal ranges.")
            parts.append(f"Device {best[0]} has the most stable patient.")
        return " ".join(parts)


# ---------------------------------------------------------------------------
# heat alerts


def _threshold(c):
    def heuristic(env: HeatAlertsEnv) -> int:
        hs = env.hs
        return int(hs.heat_index >= c and hs.remaining_budget > 0)
    return heuristic


def _streak_aware(env: HeatAlertsEnv) -> int:
    hs = env.hs
    return int(hs.heat_index >= 0.7 and hs.streak == 0 and hs.remaining_budget > 0)


def _paced(env: HeatAlertsEnv) -> int:
    hs = env.hs
    days_left = max(env.cfg.max_episode_steps - env.t, 1)
    return int(hs.remaining_budget > 0 and hs.heat_index >= 0.6 and hs.remaining_budget / days_left >= 0.25)


def _heat_relevance(env: HeatAlertsEnv) -> str:
    hs = env.hs
    return (f"Today's heat index is {hs.heat_index:.2f}, {hs.remaining_budget} alerts remain "
            f"and the current alert streak is {hs.streak}.")


class HeatWorld(ScriptedWorld):
    def __init__(self):
        pool = [
            ScriptedRule(f"threshold-{c:.1f}", f"Issue an alert when the heat index is above {c:.1f} and budget remains",
                         "Alerts avert the most hospitalizations on the hottest days.", _heat_relevance, _threshold(c))
            for c in (0.5, 0.6, 0.7, 0.8, 0.9)
        ]
        pool += [
            ScriptedRule("streak-aware", "Issue an alert when the heat index is above 0.7 unless an alert was issued yesterday",
                         "Consecutive alerts lose effectiveness.", _heat_relevance, _streak_aware),
            ScriptedRule("paced", "Issue an alert when the heat index is above 0.6 while the remaining budget keeps pace with the days left",
                         "The budget must last the whole season.", _heat_relevance, _paced),
            ScriptedRule("vague-careful", "Be careful with alerts during the season", ""),
            ScriptedRule("vague-hot", "Prioritize public health when it is hot", ""),
        ]
        super().__init__(pool)

    def prior_probs(self, env: HeatAlertsEnv) -> np.ndarray:
        return one_hot(2, _threshold(0.5)(env))

    def thought(self, env: HeatAlertsEnv) -> str:
        hs = env.hs
        level = "very high" if hs.heat_index >= 0.8 else "high" if hs.heat_index >= 0.6 else "moderate"
        return (f"The heat index {hs.heat_index:.2f} is {level}. {hs.remaining_budget} alerts remain in the budget "
                f"and the current streak is {hs.streak} days.")


# ---------------------------------------------------------------------------
# toy


class ToyWorld(ScriptedWorld):
    """Rules 'choose option a' for every action, plus optional vague rules.

    ``epsilon`` mixes uniform noise into rule following, ``prior_action`` is
    what the scripted model does on its own (uniform when None),
    ``hide_rule_of_state`` makes rule ``s`` unavailable in state ``s`` and
    ``always_include`` puts the rule for that action into every rule set.
    """

    def __init__(self, n_actions: int, vague_rules: int = 0, epsilon: float = 0.0,
                 prior_action: int | None = None, hide_rule_of_state: bool = False,
                 always_include: int | None = None):
        self.n_actions = n_actions
        self.epsilon = epsilon
        self.prior_action = prior_action
        self.always_include = always_include
        pool = []
        for a in range(n_actions):
            avail = (lambda env, a=a: env.s % (n_actions + vague_rules) != a) if hide_rule_of_state else None
            pool.append(ScriptedRule(
                f"option-{a}", f"Choose option {a} when the system is in any state",
                f"Option {a} is one of the {n_actions} available options.",
                lambda env, a=a: f"The system is in state {env.s}; option {a} can be chosen.",
                lambda env, a=a: a, avail))
        for v in range(vague_rules):
            idx = n_actions + v
            avail = (lambda env, idx=idx: env.s % (n_actions + vague_rules) != idx) if hide_rule_of_state else None
            pool.append(ScriptedRule(f"vague-{v}", ["Choose whichever option seems best when unsure",
                                                    "Prioritize the most rewarding choice when deciding",
                                                    "Use good judgment when picking an option"][v % 3] + ("" if v < 3 else f" ({v})"),
                                     "", None, None, avail))
        super().__init__(pool)

    def rule_set(self, env, q, rng):
        rules = super().rule_set(env, q, rng)
        if self.always_include is None:
            return rules
        keep = self.pool[self.always_include]
        if keep not in rules:
            rules[int(rng.integers(len(rules)))] = keep
        return rules

    def prior_probs(self, env) -> np.ndarray:
        if self.prior_action is None:
            return np.full(self.n_actions, 1.0 / self.n_actions)
        return one_hot(self.n_actions, self.prior_action)

    def action_probs(self, env, srule):
        if srule is None or srule.heuristic is None:
            return self.prior_probs(env)
        base = one_hot(self.n_actions, srule.heuristic(env))
        return (1.0 - self.epsilon) * base + self.epsilon / self.n_actions

    def thought(self, env) -> str:
        return f"The system is in state {env.s}; I should pick the option with the highest payoff."

    def rule_set_distribution(self, env, q: int) -> dict[tuple[str, ...], float]:
        """Exact probability of every ordered rule set the world can emit in the current state."""
        from itertools import permutations

        avail = self.available_rules(env)
        sets = list(permutations([r.key for r in avail], min(q, len(avail))))
        return {s: 1.0 / len(sets) for s in sets}


def make_world(env, **kwargs) -> ScriptedWorld:
    if isinstance(env, VitalsEnv):
        return VitalsWorld()
    if isinstance(env, HeatAlertsEnv):
        return HeatWorld()
    if isinstance(env, ToyEnv):
        return ToyWorld(env.n_actions, **kwargs)
    raise TypeError(f"no scripted world for {type(env).__name__}")
