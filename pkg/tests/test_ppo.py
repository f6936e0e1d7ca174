from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbrl.envs import make_env
from rbrl.nn.gradcheck import max_relative_error, numerical_grad
from rbrl.nn.layers import softmax
from rbrl.ppo import PpoAgent, PpoConfig, gae, train_ppo, whiten


def test_gae_with_zero_lambda_is_td_error():
    r = np.array([1.0, 2.0, 3.0])
    v = np.array([0.5, 0.1, -0.2])
    adv, ret = gae(r, v, np.zeros(3), gamma=0.9, lam=0.0, last_value=0.7)
    expected = r + 0.9 * np.array([0.1, -0.2, 0.7]) - v
    assert np.allclose(adv, expected, atol=1e-15)
    assert np.allclose(ret, adv + v)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12))
def test_gae_with_unit_lambda_and_zero_values_is_reward_to_go(rewards):
    r = np.array(rewards)
    adv, _ = gae(r, np.zeros_like(r), np.zeros_like(r), gamma=1.0, lam=1.0)
    assert np.allclose(adv, np.cumsum(r[::-1])[::-1], atol=1e-9)


def test_gae_hand_example():
    adv, ret = gae([1.0, 0.0, 1.0], [0.5, 0.5, 0.5], [0, 0, 1], gamma=0.9, lam=0.9)
    a2 = 0.5
    a1 = (0.9 * 0.5 - 0.5) + 0.81 * a2
    a0 = (1.0 + 0.9 * 0.5 - 0.5) + 0.81 * a1
    assert np.allclose(adv, [a0, a1, a2], atol=1e-15)
    assert np.allclose(ret, [a0 + 0.5, a1 + 0.5, a2 + 0.5], atol=1e-15)


def test_gae_done_cuts_bootstrap():
    adv, _ = gae([0.0, 0.0], [0.0, 0.0], [1, 0], gamma=0.9, lam=0.9, last_value=10.0)
    assert adv[0] == 0.0 and adv[1] == 9.0


def test_whitening():
    x = np.random.default_rng(0).normal(3.0, 7.0, 256)
    w = whiten(x)
    assert abs(w.mean()) < 1e-6 and abs(w.std() - 1.0) < 1e-6


def _agent(**kw):
    kw.setdefault("ent_coef", 0.0)
    kw.setdefault("vf_coef", 0.0)
    return PpoAgent(PpoConfig(num_envs=1, num_steps=8, num_minibatches=1, **kw), 4, 3)


def _batch(agent, rng, n=8):
    obs = rng.standard_normal((n, 4))
    actions, logp, values = agent.act(obs)
    return obs, actions, logp, rng.standard_normal(n), rng.standard_normal(n), values


def test_unit_ratio_gives_vanilla_policy_gradient(rng):
    agent = _agent()
    obs, actions, logp, adv, ret, values = _batch(agent, rng)
    loss, grads, _ = agent.loss_and_grads(obs, actions, logp, adv, ret, values)
    assert loss == pytest.approx(-np.mean(adv), abs=1e-12)
    logits, acts = agent.actor.forward(obs)
    onehot = np.eye(3)[actions]
    pg = agent.actor.backward(acts, -adv[:, None] * (onehot - softmax(logits)) / len(adv))
    for k, g in pg.items():
        assert np.allclose(grads[f"actor/{k}"], g, atol=1e-14)


def test_clipped_branch_has_no_gradient(rng):
    agent = _agent()
    obs, actions, logp, _, ret, values = _batch(agent, rng)
    adv = np.abs(rng.standard_normal(len(actions))) + 0.1
    # old policy far less likely, so ratio = e^2 > 1 + clip for every sample
    _, grads, stats = agent.loss_and_grads(obs, actions, logp - 2.0, adv, ret, values)
    assert stats["pg_loss"] == pytest.approx(-np.mean(adv * 1.2))
    assert all(not np.any(grads[k]) for k in grads if k.startswith("actor/"))


@pytest.mark.parametrize("clip_vloss", [True, False])
def test_loss_gradients_match_finite_differences(rng, clip_vloss):
    agent = _agent(ent_coef=0.05, vf_coef=0.5, clip_vloss=clip_vloss)
    obs, actions, logp, adv, ret, values = _batch(agent, rng)
    logp = logp + rng.uniform(-0.1, 0.1, len(logp))
    values = values + rng.uniform(-0.15, 0.15, len(values))

    def f():
        return agent.loss_and_grads(obs, actions, logp, adv, ret, values)[0]

    _, grads, _ = agent.loss_and_grads(obs, actions, logp, adv, ret, values)
    for k, p in agent.params.items():
        assert max_relative_error(grads[k], numerical_grad(f, p)) < 1e-4, k


def test_fixed_batch_loss_decreases(rng):
    agent = _agent(learning_rate=1e-3, vf_coef=0.5, clip_vloss=False)
    obs, actions, logp, adv, ret, values = _batch(agent, rng, n=32)
    losses = []
    for _ in range(50):
        loss, grads, _ = agent.loss_and_grads(obs, actions, logp, adv, ret, values)
        losses.append(loss)
        agent.opt.step(grads)
    assert np.all(np.diff(losses) < 0)


def test_train_ppo_smoke():
    cfg = PpoConfig(num_envs=2, num_steps=16, num_minibatches=2, update_epochs=2, total_timesteps=64)
    agent, rows = train_ppo(cfg, lambda i: make_env("heat", season_length=10))
    assert len(rows) == 2 and rows[-1]["step"] == 64
    assert all(np.all(np.isfinite(v)) for v in agent.params.values())
    assert any(r["episode_return"] != "" for r in rows)


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(clip_coef=0.0)
    with pytest.raises(ValueError):
        PpoConfig(num_envs=1, num_steps=5, num_minibatches=2)
