from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbrl.envs import (ActionError, EnvSpec, HeatAlertsEnv, HeatConfig, NumericState, ParseFailure, ToyEnv,
                       VitalsConfig, VitalsEnv, make_env, parse_action_id)
from rbrl.envs.heat import HeatState, weather_advance
from rbrl.envs.vitals import (PatientState, active_transition, deviation_cost, is_normal, passive_transition,
                              variant_config)

ENV_IDS = ("uganda", "mimic", "vitals", "heat", "toy")


# ---- env-core ----------------------------------------------------------


@pytest.mark.parametrize("env_id", ENV_IDS)
def test_reset_is_deterministic(env_id):
    a, b = make_env(env_id), make_env(env_id)
    sa, ta = a.reset(seed=0)
    sb, tb = b.reset(seed=0)
    assert np.array_equal(sa.values, sb.values)
    assert ta == tb and ta


@pytest.mark.parametrize("env_id", ("uganda", "mimic", "heat"))
def test_different_seeds_give_different_states(env_id):
    env = make_env(env_id)
    s0 = env.reset(seed=0)[0].values.copy()
    s1 = env.reset(seed=1)[0].values.copy()
    assert not np.array_equal(s0, s1)


def test_fixed_actions_give_identical_trajectories():
    def run():
        env = make_env("uganda")
        env.reset(seed=3)
        return [(o.env_reward, o.next_state.values.copy()) for o in (env.step(a % 5) for a in range(20))]

    for (r1, s1), (r2, s2) in zip(run(), run()):
        assert r1 == r2
        assert np.array_equal(s1, s2)


def test_truncates_at_max_episode_steps():
    env = ToyEnv(max_episode_steps=3)
    env.reset(seed=0)
    assert not env.step(0).truncated
    assert not env.step(0).truncated
    last = env.step(0)
    assert last.truncated and last.next_state.step_index == 3
    with pytest.raises(RuntimeError):
        env.step(0)


@pytest.mark.parametrize("env_id", ENV_IDS)
def test_out_of_range_action_leaves_state_unchanged(env_id):
    env = make_env(env_id)
    env.reset(seed=5)
    before, text = env.state.values.copy(), env.state_descriptor()
    for bad in (-1, env.spec.num_actions):
        with pytest.raises(ActionError, match="outside"):
            env.step(bad)
    assert np.array_equal(env.state.values, before)
    assert env.state_descriptor() == text
    out = env.step(0)
    assert np.isfinite(out.env_reward)
    assert out.next_state.values.shape == (env.spec.state_dim,)


def test_action_parser_examples():
    assert parse_action_id("{'device': 3}", 5) == 3
    assert parse_action_id("I will issue the alert: 1", 2) == 1
    with pytest.raises(ParseFailure):
        parse_action_id("maybe 2 or 4", 5)
    with pytest.raises(ParseFailure):
        parse_action_id("no idea", 5)
    with pytest.raises(ParseFailure):
        parse_action_id("device 7", 5)


def test_structured_fragment_wins_over_prose():
    text = "Patient on device 2 looks stable for 3 steps, so I chose action {'device': 2}"
    assert parse_action_id(text, 5) == 2


@pytest.mark.parametrize("env_id", ENV_IDS)
def test_action_text_round_trips(env_id):
    env = make_env(env_id)
    for a in range(env.spec.num_actions):
        assert env.action_parser(env.action_text(a)) == a


def test_vitals_descriptor_names_single_free_device():
    env = VitalsEnv(variant_config("uganda"))
    env.reset(seed=0)
    for _ in range(3):
        env.step(0)
    assert env.free_devices() == [4]
    text = env.state_descriptor()
    assert "IDs of free devices: 4" in text
    assert "Device 4: Device is currently free." in text
    assert text == env.state_descriptor()


def test_heat_descriptor_with_zero_budget():
    env = HeatAlertsEnv(HeatConfig(budget=0))
    env.reset(seed=0)
    assert "zero remaining alerts" in env.state_descriptor()
    assert "Remaining alert budget: 0" in env.constraint_text()


def test_spec_and_state_invariants():
    with pytest.raises(ValueError):
        EnvSpec(state_dim=1, num_actions=2, cost_dim=1, horizon=1, discount=1.5, max_episode_steps=1)
    with pytest.raises(ValueError):
        EnvSpec(state_dim=0, num_actions=2, cost_dim=1, horizon=1, discount=0.5, max_episode_steps=1)
    with pytest.raises(ValueError):
        NumericState(np.array([0.0, np.nan]))


# ---- vitals --------------------------------------------------------------


def _patient(pid, last, cfg=None, time_worn=0):
    last = np.asarray(last, dtype=float)
    return PatientState(pid, last, last.copy(), time_worn=time_worn)


NORMAL = (80.0, 16.0, 98.0)


def _post_warmup_env(free_last: bool):
    env = VitalsEnv(VitalsConfig())
    env.reset(seed=11)
    env.slots = [_patient(i, NORMAL) for i in range(5)]
    if free_last:
        env.slots[4] = None
    env.next_pid = 5
    env.warmed_up = True
    return env


def test_free_slot_choice_has_no_removal_penalty():
    env = _post_warmup_env(free_last=True)
    out = env.step(4)
    assert out.info["penalty"] == 0.0


def test_occupied_slot_with_free_device_is_penalized():
    env = _post_warmup_env(free_last=True)
    out = env.step(0)
    assert out.info["penalty"] == VitalsConfig().removal_penalty == -5.0
    assert "removed from active patient" in out.info_text
    assert 0 in env.removed


def test_no_penalty_when_all_devices_busy():
    env = _post_warmup_env(free_last=False)
    out = env.step(2)
    assert out.info["penalty"] == 0.0
    assert 2 in env.removed


def test_permanently_normal_patients_give_zero_reward():
    cfg = VitalsConfig(population_mean=NORMAL, population_std=(0.0, 0.0, 0.0),
                       noise_cov=((0.0, 0.0, 0.0),) * 3)
    env = VitalsEnv(cfg)
    env.reset(seed=0)
    rng = np.random.default_rng(0)
    rewards = []
    for _ in range(30):
        free = env.free_devices()
        action = free[0] if free else int(rng.integers(5))
        rewards.append(env.step(action).env_reward)
    assert rewards == [0.0] * 30


def test_deviation_cost_examples():
    cfg = VitalsConfig()
    assert deviation_cost(np.array(NORMAL), cfg) == 0.0
    assert deviation_cost(np.array([100.0, 12.0, 95.0]), cfg) == 0.0
    assert deviation_cost(np.array([110.0, 16.0, 98.0]), cfg) == pytest.approx(np.e - 1, abs=1e-12)


def test_deviation_cost_is_capped():
    cfg = VitalsConfig(cost_cap=10.0)
    assert deviation_cost(np.array([200.0, 60.0, 60.0]), cfg) == pytest.approx(3 * np.expm1(10.0))


@given(st.lists(st.floats(0, 250, allow_nan=False), min_size=3, max_size=3))
def test_deviation_cost_nonnegative(values):
    cfg = VitalsConfig()
    c = deviation_cost(np.array(values), cfg)
    assert c >= 0.0
    assert (c == 0.0) == is_normal(np.array(values), cfg)


def test_passive_degenerate_gaussian_keeps_values():
    cfg = VitalsConfig(ar_coef=1.0, noise_cov=((0.0, 0.0, 0.0),) * 3)
    p = _patient(0, (120.0, 25.0, 92.0))
    nxt = passive_transition(p, np.random.default_rng(0), cfg)
    assert np.array_equal(nxt.last, p.last)


def test_passive_transition_is_reproducible():
    cfg = VitalsConfig()
    p = _patient(0, (120.0, 25.0, 92.0))
    a = passive_transition(p, np.random.default_rng(7), cfg)
    b = passive_transition(p, np.random.default_rng(7), cfg)
    assert np.array_equal(a.last, b.last)


def test_passive_monte_carlo_mean():
    cfg = VitalsConfig()
    p = _patient(0, (88.0, 18.0, 97.0))
    rng = np.random.default_rng(0)
    samples = np.array([passive_transition(p, rng, cfg).last for _ in range(10_000)])
    se = samples.std(0, ddof=1) / np.sqrt(len(samples))
    assert np.all(np.abs(samples.mean(0) - p.long_run) < 3 * se)


def test_running_statistics_match_numpy():
    cfg = VitalsConfig()
    p = _patient(0, (120.0, 25.0, 92.0))
    rng = np.random.default_rng(1)
    history = [p.last]
    for _ in range(8):
        p = passive_transition(p, rng, cfg)
        history.append(p.last)
    h = np.array(history)
    assert np.allclose(p.mean, h.mean(0), atol=1e-10)
    assert np.allclose(p.std, h.std(0, ddof=1), atol=1e-10)


def test_active_equals_passive_when_normal():
    cfg = VitalsConfig()
    p = _patient(0, NORMAL)
    a = active_transition(p, np.random.default_rng(3), cfg)
    b = passive_transition(p, np.random.default_rng(3), cfg)
    assert np.array_equal(a.last, b.last)


def test_active_equals_passive_without_intervention_success():
    cfg = VitalsConfig(intervention_success=0.0)
    p = _patient(0, (140.0, 30.0, 88.0))
    for seed in range(20):
        a = active_transition(p, np.random.default_rng(seed), cfg)
        b = passive_transition(p, np.random.default_rng(seed), cfg)
        assert np.array_equal(a.last, b.last)


def test_active_lowers_cost_of_abnormal_patient():
    cfg = VitalsConfig()
    p = _patient(0, (140.0, 30.0, 90.0))
    p.long_run = np.array([130.0, 28.0, 91.0])
    rng_a, rng_p = np.random.default_rng(0), np.random.default_rng(1)
    diff = np.array([deviation_cost(passive_transition(p, rng_p, cfg), cfg)
                     - deviation_cost(active_transition(p, rng_a, cfg), cfg) for _ in range(10_000)])
    boot = np.random.default_rng(2)
    means = np.array([diff[boot.integers(len(diff), size=len(diff))].mean() for _ in range(500)])
    lo, hi = np.quantile(means, [0.025, 0.975])
    assert lo > 0.0, (lo, hi)


def test_vitals_numeric_state_dimension():
    env = VitalsEnv()
    s, _ = env.reset(seed=0)
    assert env.spec.state_dim == 55 == s.values.shape[0]


def test_warm_up_fills_free_devices_without_penalty():
    env = VitalsEnv()
    env.reset(seed=0)
    for _ in range(4):
        out = env.step(0)
        assert out.info["penalty"] == 0.0
    assert env.free_devices() == [] and env.warmed_up


@given(st.integers(0, 2**16), st.lists(st.integers(0, 4), min_size=1, max_size=60))
def test_vitals_budget_and_reassignment_invariants(seed, actions):
    env = VitalsEnv(variant_config("uganda"))
    env.reset(seed=seed)
    for a in actions:
        out = env.step(a)
        env.check_invariants()
        assert env.budget_status().within()
        if out.truncated:
            env.reset(seed=seed + 1)


def test_config_validation():
    with pytest.raises(ValueError):
        VitalsConfig(intervention_success=1.5)
    with pytest.raises(ValueError):
        VitalsConfig(removal_penalty=1.0)
    with pytest.raises(ValueError):
        VitalsConfig(noise_cov=((1.0, 2.0, 0.0), (2.0, 1.0, 0.0), (0.0, 0.0, 1.0)))
    with pytest.raises(KeyError):
        variant_config("nowhere")


# ---- heat ----------------------------------------------------------------


def _heat_env(**kw):
    env = HeatAlertsEnv(HeatConfig(**kw))
    env.reset(seed=0)
    return env


def test_alert_without_budget_is_penalized():
    env = _heat_env(budget=0)
    out = env.step(1)
    assert out.env_reward == -1.0
    assert env.hs.remaining_budget == 0
    assert out.info["issued"] == 0


def test_no_alert_has_zero_reward():
    env = _heat_env()
    before = env.hs.remaining_budget
    out = env.step(0)
    assert out.env_reward == 0.0 and env.hs.remaining_budget == before


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_alert_reward_decays_with_streak(k):
    env = _heat_env()
    W = env.cfg.history_window
    history = np.zeros(W)
    env.hs = HeatState(0.7, 5, history, 0, 10)
    base = env.step(1).env_reward
    env = _heat_env()
    history = np.zeros(W)
    history[-k:] = 1.0
    env.hs = HeatState(0.7, 5, history, 0, 10)
    assert env.step(1).env_reward / base == pytest.approx(0.8 ** k, rel=1e-12)


def test_streak_resets_after_quiet_day():
    env = _heat_env()
    env.step(1)
    env.step(1)
    assert env.hs.streak == 2
    env.step(0)
    assert env.hs.streak == 0


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 6))
def test_alert_reward_monotone_in_heat(x, y, streak):
    cfg = HeatConfig()
    env = HeatAlertsEnv(cfg)
    hist = np.zeros(cfg.history_window)
    hist[cfg.history_window - streak:] = 1.0
    lo, hi = sorted((x, y))
    r_lo = env.alert_reward(HeatState(lo, 1, hist, 0, 0))
    r_hi = env.alert_reward(HeatState(hi, 1, hist, 0, 0))
    assert 0.0 <= r_lo <= r_hi


def test_zero_noise_weather_is_periodic():
    env = _heat_env(noise_scale=0.0, weather_period=20.0, season_length=90, max_episode_steps=90)
    heat = [env.hs.heat_index]
    for _ in range(60):
        env.step(0)
        heat.append(env.hs.heat_index)
    heat = np.array(heat)
    assert np.allclose(heat[20:], heat[:-20], rtol=0, atol=1e-12)


def test_weather_is_reproducible():
    def traj():
        env = _heat_env()
        out = []
        for _ in range(30):
            env.step(0)
            out.append(env.hs.heat_index)
        return out

    assert traj() == traj()


def test_weather_noise_autocorrelation():
    cfg = HeatConfig()
    rng = np.random.default_rng(0)
    hs = HeatState(0.5, 0, np.zeros(cfg.history_window), 0, 0, noise=0.0)
    noise = []
    for day in range(10_000):
        _, n = weather_advance(hs, rng, cfg)
        hs = HeatState(0.5, 0, hs.alert_history, 0, day + 1, noise=n)
        noise.append(n)
    x = np.array(noise) - np.mean(noise)
    rho = float(np.sum(x[1:] * x[:-1]) / np.sum(x * x))
    assert abs(rho - cfg.ar_coef) < 0.05


def test_weather_csv_replay_truncates_when_exhausted(tmp_path):
    path = tmp_path / "weather.csv"
    path.write_text("heat_index\n0.1\n0.9\n0.5\n0.95\n0.2\n")
    env = HeatAlertsEnv(HeatConfig(weather_csv=str(path)))
    env.reset(seed=0)
    seen = [env.hs.heat_index]
    outs = []
    for _ in range(4):
        outs.append(env.step(0))
        seen.append(env.hs.heat_index)
    assert seen == [0.1, 0.9, 0.5, 0.95, 0.2]
    assert not any(o.truncated for o in outs)
    assert env.step(0).truncated


def test_weather_csv_rejects_bad_values(tmp_path):
    path = tmp_path / "weather.csv"
    path.write_text("heat_index\n1.5\n")
    with pytest.raises(ValueError):
        HeatAlertsEnv(HeatConfig(weather_csv=str(path)))


def test_heat_season_end_terminates():
    env = _heat_env(season_length=5)
    outs = [env.step(0) for _ in range(5)]
    assert outs[-1].terminated and not outs[-1].truncated
    assert not any(o.terminated for o in outs[:-1])


def test_heat_numeric_state_dimension():
    env = _heat_env(history_window=7)
    assert env.state.values.shape == (17,) == (env.spec.state_dim,)


@given(st.integers(0, 2**16), st.lists(st.integers(0, 1), min_size=1, max_size=90))
def test_heat_never_exceeds_budget(seed, actions):
    env = HeatAlertsEnv(HeatConfig(budget=4, max_episode_steps=90))
    env.reset(seed=seed)
    issued = 0
    for a in actions:
        out = env.step(a)
        issued += out.info["issued"]
        assert issued <= 4
        assert env.budget_status().within()
        if out.truncated or out.terminated:
            break
