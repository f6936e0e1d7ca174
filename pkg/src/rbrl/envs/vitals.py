"""Wearable monitoring-device assignment for a maternal unit.

Five devices are shared among arriving patients. Exactly one patient arrives
per step and must receive a device; the agent picks which device to take. A
patient who loses her device never gets one back, so her remaining stay is
simulated passively right away and its discounted cost is charged at once.

Vital-sign dynamics are conditional Gaussians with an AR(1)-style mean map
toward a per-patient long-run level. The two shipped variants are synthetic
stand-ins for the clinical datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import BudgetStatus, EnvSpec, LanguageEnv, NumericState, StepOutcome

VITALS = ("pulse_rate", "respiratory_rate", "spo2")
VITAL_LABELS = {"pulse_rate": "Pulse rate", "respiratory_rate": "Respiratory rate", "spo2": "SPO2"}
# per-vital divisors for the numeric state fed to the networks
FEATURE_SCALE = np.array([100.0, 20.0, 100.0])
PATIENT_FEATURES = 3 * 3 + 1


@dataclass
class VitalsConfig:
    num_devices: int = 5
    residency: int = 10
    normal_ranges: dict = field(default_factory=lambda: {
        "pulse_rate": (60.0, 100.0),
        "respiratory_rate": (12.0, 22.0),
        "spo2": (95.0, 100.0),
    })
    cost_scales: dict = field(default_factory=lambda: {
        "pulse_rate": 10.0,
        "respiratory_rate": 3.0,
        "spo2": 2.0,
    })
    cost_cap: float = 10.0
    # adjustment toward normal happens with probability clinician_response * intervention_success
    intervention_success: float = 1.0
    clinician_response: float = 0.7
    inward_fraction: float = 0.2
    removal_penalty: float = -5.0
    discount: float = 0.95
    max_episode_steps: int = 32
    # conditional Gaussian: next = ar * last + (1 - ar) * long_run + N(0, cov)
    ar_coef: float = 0.7
    population_mean: tuple = (88.0, 18.0, 96.5)
    population_std: tuple = (14.0, 4.0, 2.0)
    noise_cov: tuple = ((36.0, 3.0, -1.0), (3.0, 4.0, -0.5), (-1.0, -0.5, 1.0))
    value_bounds: tuple = ((30.0, 200.0), (4.0, 60.0), (60.0, 100.0))

    def __post_init__(self):
        for p in (self.intervention_success, self.clinician_response):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        for lo, hi in self.normal_ranges.values():
            if not lo < hi:
                raise ValueError("normal ranges must be non-degenerate")
        if self.removal_penalty > 0:
            raise ValueError("removal_penalty must be nonpositive")
        cov = np.asarray(self.noise_cov, dtype=float)
        if np.min(np.linalg.eigvalsh((cov + cov.T) / 2)) < -1e-12:
            raise ValueError("noise covariance must be positive semi-definite")

    @property
    def adjust_probability(self) -> float:
        return self.clinician_response * self.intervention_success

    @property
    def lows(self) -> np.ndarray:
        return np.array([self.normal_ranges[v][0] for v in VITALS])

    @property
    def highs(self) -> np.ndarray:
        return np.array([self.normal_ranges[v][1] for v in VITALS])

    @property
    def scales(self) -> np.ndarray:
        return np.array([self.cost_scales[v] for v in VITALS])


VARIANTS = {
    # higher volatility, more abnormal arrivals
    "uganda": dict(ar_coef=0.6, population_mean=(92.0, 19.0, 96.0), population_std=(16.0, 4.5, 2.2),
                   noise_cov=((49.0, 4.0, -1.5), (4.0, 5.0, -0.6), (-1.5, -0.6, 1.4))),
    # calmer dynamics, lower mean pulse
    "mimic": dict(ar_coef=0.8, population_mean=(84.0, 17.0, 97.0), population_std=(12.0, 3.5, 1.6),
                  noise_cov=((25.0, 2.0, -0.5), (2.0, 3.0, -0.3), (-0.5, -0.3, 0.7))),
}


def variant_config(name: str, **overrides) -> VitalsConfig:
    if name not in VARIANTS:
        raise KeyError(f"unknown vitals variant {name!r}; expected one of {sorted(VARIANTS)}")
    return VitalsConfig(**{**VARIANTS[name], **overrides})


@dataclass
class PatientState:
    pid: int
    last: np.ndarray
    long_run: np.ndarray
    count: int = 1
    mean: np.ndarray = None
    m2: np.ndarray = None
    time_worn: int = 0
    age: int = 0
    active: bool = True

    def __post_init__(self):
        self.last = np.asarray(self.last, dtype=float)
        if self.mean is None:
            self.mean = self.last.copy()
        if self.m2 is None:
            self.m2 = np.zeros(3)

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros(3)
        return np.sqrt(self.m2 / (self.count - 1))

    def observe(self, values: np.ndarray) -> "PatientState":
        # Welford update
        count = self.count + 1
        delta = values - self.mean
        mean = self.mean + delta / count
        m2 = self.m2 + delta * (values - mean)
        return PatientState(self.pid, values, self.long_run, count, mean, m2,
                            self.time_worn, self.age, self.active)

    def copy(self) -> "PatientState":
        return PatientState(self.pid, self.last.copy(), self.long_run.copy(), self.count,
                            self.mean.copy(), self.m2.copy(), self.time_worn, self.age, self.active)


def deviation_cost(p: PatientState | np.ndarray, cfg: VitalsConfig) -> float:
    """Sum over vitals of exp(min(d / scale, cap)) - 1, d = distance outside the normal range."""
    values = p.last if isinstance(p, PatientState) else np.asarray(p, dtype=float)
    d = np.maximum(cfg.lows - values, 0.0) + np.maximum(values - cfg.highs, 0.0)
    return float(np.sum(np.expm1(np.minimum(d / cfg.scales, cfg.cost_cap))))


def is_normal(values: np.ndarray, cfg: VitalsConfig) -> bool:
    return bool(np.all((values >= cfg.lows) & (values <= cfg.highs)))


def passive_transition(p: PatientState, rng: np.random.Generator, cfg: VitalsConfig) -> PatientState:
    mean = cfg.ar_coef * p.last + (1.0 - cfg.ar_coef) * p.long_run
    cov = np.asarray(cfg.noise_cov, dtype=float)
    if np.any(cov):
        sample = rng.multivariate_normal(mean, cov, method="cholesky" if _is_pd(cov) else "eigh")
    else:
        sample = mean
    bounds = np.asarray(cfg.value_bounds, dtype=float)
    sample = np.clip(sample, bounds[:, 0], bounds[:, 1])
    return p.observe(sample)


def _is_pd(cov: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(cov)
        return True
    except np.linalg.LinAlgError:
        return False


def intervention_adjust(values: np.ndarray, rng: np.random.Generator, cfg: VitalsConfig) -> np.ndarray:
    """Move abnormal vitals just inside the violated boundary."""
    out = values.copy()
    width = (cfg.highs - cfg.lows) * cfg.inward_fraction
    low = values < cfg.lows
    high = values > cfg.highs
    u = rng.uniform(0.0, 1.0, size=3)
    out[low] = cfg.lows[low] + u[low] * width[low]
    out[high] = cfg.highs[high] - u[high] * width[high]
    return out


def active_transition(p: PatientState, rng: np.random.Generator, cfg: VitalsConfig) -> PatientState:
    if is_normal(p.last, cfg) or cfg.adjust_probability <= 0.0:
        return passive_transition(p, rng, cfg)
    if rng.uniform() >= cfg.adjust_probability:
        return passive_transition(p, rng, cfg)
    adjusted = p.copy()
    adjusted.last = intervention_adjust(p.last, rng, cfg)
    nxt = passive_transition(adjusted, rng, cfg)
    return nxt


class VitalsEnv(LanguageEnv):
    """Device reassignment MDP. The action is the device id handed to the new arrival."""

    name = "vitals"

    def __init__(self, config: VitalsConfig | None = None, variant: str | None = None):
        super().__init__()
        if config is None:
            config = variant_config(variant) if variant else VitalsConfig()
        self.cfg = config
        self.variant = variant or "custom"
        n = config.num_devices
        self.spec = EnvSpec(
            state_dim=n * PATIENT_FEATURES + n,
            num_actions=n,
            cost_dim=1,
            horizon=config.max_episode_steps,
            discount=config.discount,
            max_episode_steps=config.max_episode_steps,
            action_names=tuple(f"device {i}" for i in range(n)),
        )
        self.slots: list[PatientState | None] = [None] * n
        self.next_pid = 0
        self.removed: set[int] = set()
        self.warmed_up = False
        self.arrivals = 0

    # ---- text ---------------------------------------------------------
    @property
    def task_text(self) -> str:
        return (
            "You are tasked with optimizing the allocation of limited vital sign monitoring devices "
            "among patients. Devices improve vital signs and prevent abnormalities, but their limited "
            "availability requires reallocating them from stable patients to higher-risk incoming "
            "patients, who must always receive a device. Normal ranges: "
            + ", ".join(f"{VITAL_LABELS[v]} {lo:g}-{hi:g}" for v, (lo, hi) in self.cfg.normal_ranges.items())
            + ". The goal is to minimize costs associated with abnormal vital signs, where costs grow "
            "exponentially with the deviation from the normal range. Wearing a device improves abnormal "
            f"vital signs with a {round(100 * self.cfg.adjust_probability)}% success rate."
        )

    @property
    def action_space_text(self) -> str:
        n = self.cfg.num_devices
        return (
            "Choose the id of the device that will be reallocated to the new incoming patient. "
            f"Your answer should be a single integer i from 0 to {n - 1} such that: always choose a free "
            "device if available; if no free device is available, choose the device whose current "
            "patient is at least risk or would benefit less from wearing the device."
        )

    @property
    def rule_examples(self) -> list[str]:
        return [
            "Prioritize taking the device from the patient whose vitals are all within normal range when no device is free",
            "Prioritize assigning a free device when one is available",
            "Prioritize taking the device from the patient who has worn it the longest when all patients are stable",
        ]

    def action_text(self, action: int) -> str:
        return f"{{'device': {int(action)}}}"

    def free_devices(self) -> list[int]:
        return [i for i, p in enumerate(self.slots) if p is None]

    def constraint_text(self) -> str:
        free = self.free_devices()
        return (f"Number of devices: {self.cfg.num_devices}. Number of free devices: {len(free)}. "
                f"IDs of free devices: {', '.join(map(str, free)) if free else 'none'}.")

    def state_descriptor(self, state: NumericState | None = None) -> str:
        # rendering uses the live slot objects; the numeric state is a lossless-enough projection of them
        lines = [
            "Current state of the decision problem:",
            f"Number of devices: {self.cfg.num_devices}",
            f"Number of free devices: {len(self.free_devices())}",
            f"IDs of free devices: {', '.join(map(str, self.free_devices())) or 'none'}",
        ]
        for i, p in enumerate(self.slots):
            if p is None:
                lines.append(f"Device {i}: Device is currently free.")
                continue
            lines.append(f"Device {i}: Device is currently assigned to a patient with the following description:")
            lines.append(f"*Timesteps wearing the device*: {p.time_worn}")
            std = p.std
            for k, v in enumerate(VITALS):
                lines.append(
                    f"*{VITAL_LABELS[v]}* - Last value: {p.last[k]:.2f} - Mean: {p.mean[k]:.2f} "
                    f"- Standard deviation/volatility: {std[k]:.2f}"
                )
        return "\n".join(lines)

    # ---- numeric ------------------------------------------------------
    def _numeric(self) -> NumericState:
        n = self.cfg.num_devices
        feats = np.zeros((n, PATIENT_FEATURES))
        free = np.zeros(n)
        for i, p in enumerate(self.slots):
            if p is None:
                free[i] = 1.0
                continue
            feats[i, 0:3] = p.last / FEATURE_SCALE
            feats[i, 3:6] = p.mean / FEATURE_SCALE
            feats[i, 6:9] = p.std / FEATURE_SCALE * 10.0
            feats[i, 9] = p.time_worn / self.cfg.residency
        return NumericState(np.concatenate([feats.ravel(), free]), self.t)

    def budget_status(self) -> BudgetStatus:
        used = sum(p is not None for p in self.slots)
        return BudgetStatus(np.array([float(used)]), np.array([float(self.cfg.num_devices)]))

    def _arrival(self) -> PatientState:
        cfg = self.cfg
        long_run = self.rng.normal(cfg.population_mean, cfg.population_std)
        bounds = np.asarray(cfg.value_bounds, dtype=float)
        long_run = np.clip(long_run, bounds[:, 0], bounds[:, 1])
        first = np.clip(long_run + self.rng.normal(0.0, np.sqrt(np.diag(cfg.noise_cov))), bounds[:, 0], bounds[:, 1])
        p = PatientState(self.next_pid, first, long_run)
        self.next_pid += 1
        self.arrivals += 1
        return p

    def _reset(self) -> NumericState:
        self.slots = [None] * self.cfg.num_devices
        self.next_pid = 0
        self.removed = set()
        self.warmed_up = False
        self.arrivals = 0
        self.slots[0] = self._arrival()
        return self._numeric()

    def _future_passive_cost(self, p: PatientState) -> float:
        """Discounted deviation cost of the rest of a patient's stay without a device."""
        total = 0.0
        cur = p
        remaining = self.cfg.residency - p.age
        for k in range(max(remaining, 0)):
            cur = passive_transition(cur, self.rng, self.cfg)
            total += (self.cfg.discount ** k) * deviation_cost(cur, self.cfg)
        return total

    def _step(self, action: int) -> StepOutcome:
        cfg = self.cfg
        notes = []
        penalty = 0.0
        removal_cost = 0.0
        free = self.free_devices()
        target = action
        if not self.warmed_up:
            # the arrival takes the first free device until every device has been claimed once
            target = free[0]
            if action != target:
                notes.append(f"warm-up: device {target} assigned instead of {action}")
        else:
            occupant = self.slots[action]
            if occupant is not None:
                if free:
                    penalty = cfg.removal_penalty
                    notes.append(f"device {action} removed from active patient while device(s) {free} were free")
                else:
                    notes.append(f"device {action} removed from patient {occupant.pid}")
                self.removed.add(occupant.pid)
                removal_cost = self._future_passive_cost(occupant)
                self.slots[action] = None

        # monitored patients evolve under the active dynamics
        for i, p in enumerate(self.slots):
            if p is None:
                continue
            nxt = active_transition(p, self.rng, cfg)
            nxt.time_worn = p.time_worn + 1
            nxt.age = p.age + 1
            if nxt.age >= cfg.residency:
                notes.append(f"patient {p.pid} on device {i} left the unit")
                self.slots[i] = None
            else:
                self.slots[i] = nxt

        newcomer = self._arrival()
        assert newcomer.pid not in self.removed
        self.slots[target] = newcomer
        if all(p is not None for p in self.slots):
            self.warmed_up = True

        monitored_cost = sum(deviation_cost(p, cfg) for p in self.slots if p is not None)
        reward = -monitored_cost - removal_cost + penalty
        return StepOutcome(
            next_state=self._numeric(),
            env_reward=float(reward),
            terminated=False,
            truncated=False,
            info_text="; ".join(notes),
            info={"penalty": penalty, "removal_cost": removal_cost, "monitored_cost": monitored_cost,
                  "assigned_device": target},
        )

    def check_invariants(self) -> None:
        occupied = [p for p in self.slots if p is not None]
        if len(occupied) > self.cfg.num_devices:
            raise AssertionError("more patients than devices")
        for p in occupied:
            if p.pid in self.removed:
                raise AssertionError(f"removed patient {p.pid} reassigned")
        pids = [p.pid for p in occupied]
        if len(set(pids)) != len(pids):
            raise AssertionError("patient wears two devices")


def risk_score(p: PatientState, cfg: VitalsConfig) -> float:
    """Expected-cost proxy used by the scripted heuristics: current cost plus volatility."""
    return deviation_cost(p, cfg) + float(np.sum(p.std / cfg.scales)) * 0.1


def stability(p: PatientState, cfg: VitalsConfig) -> float:
    mid = (cfg.lows + cfg.highs) / 2
    half = (cfg.highs - cfg.lows) / 2
    return -float(np.sum(np.abs(p.last - mid) / half)) - float(np.sum(p.std / cfg.scales))

