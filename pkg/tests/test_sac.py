from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbrl.nn import clip_by_global_norm, global_norm
from rbrl.nn.layers import log_softmax, softmax
from rbrl.sac import (AugmentedState, Batch, ReplayBuffer, SacAgent, SacConfig, Transition, entropy,
                      soft_state_value)

SD, ED = 3, 8


def _state(rng, q=3):
    E = rng.standard_normal((q, ED))
    return AugmentedState(rng.standard_normal(SD), E / np.linalg.norm(E, axis=1, keepdims=True))


def _transition(rng, q=3, reward=None, done=False):
    r = float(rng.standard_normal()) if reward is None else reward
    return Transition(_state(rng, q), int(rng.integers(q)), r, _state(rng, q), done)


def _batch(rng, n=8, q=3, **kw):
    return Batch.from_transitions([_transition(rng, q, **kw) for _ in range(n)])


def _agent(**kw):
    kw.setdefault("dropout", 0.0)
    return SacAgent(SacConfig(hidden_dim=8, n_heads=2, **kw), SD, ED, seed=0)


# ---- replay buffer ---------------------------------------------------------


def test_ring_buffer_evicts_oldest(rng):
    buf = ReplayBuffer(capacity=4)
    items = [_transition(rng, reward=float(i)) for i in range(5)]
    for t in items:
        buf.push(t)
    assert len(buf) == 4
    assert all(t is not items[0] for t in buf.ordered())
    assert [t.reward for t in buf.ordered()] == [1.0, 2.0, 3.0, 4.0]


def test_single_item_buffer_samples_it(rng):
    buf = ReplayBuffer(8)
    t = _transition(rng, reward=7.0)
    buf.push(t)
    b = buf.sample(3, rng)
    assert b.r.tolist() == [7.0, 7.0, 7.0]


def test_empty_buffer_and_bad_transitions(rng):
    with pytest.raises(ValueError):
        ReplayBuffer(8).sample(1, rng)
    with pytest.raises(ValueError):
        ReplayBuffer(0)
    with pytest.raises(ValueError):
        Transition(_state(rng, 2), 2, 0.0, _state(rng, 2), False)
    with pytest.raises(ValueError):
        AugmentedState(np.zeros(SD), np.zeros((0, ED)))


def test_uniform_sampling_chi_square():
    buf = ReplayBuffer(100)
    rng = np.random.default_rng(0)
    for _ in range(100):
        buf.push(_transition(rng))
    n = 100_000
    counts = np.bincount(buf.sample_indices(n, rng), minlength=100)
    chi2 = float(np.sum((counts - n / 100) ** 2 / (n / 100)))
    # 99th percentile of chi-square with 99 degrees of freedom
    assert chi2 < 134.64


# ---- targets ---------------------------------------------------------------


def test_target_with_zero_gamma_is_reward(rng):
    agent = _agent(gamma=0.0)
    b = _batch(rng)
    assert np.array_equal(agent.compute_target(b), b.r)


def test_target_at_terminal_is_reward(rng):
    agent = _agent(gamma=0.95)
    b = _batch(rng, done=True)
    assert np.array_equal(agent.compute_target(b), b.r)


def test_soft_value_hand_example():
    probs = np.array([0.5, 0.5])
    v = soft_state_value(probs, np.log(probs), np.array([1.0, 3.0]), beta=0.0)
    assert v == 2.0
    gamma, r = 0.9, 0.25
    assert r + gamma * v == pytest.approx(r + gamma * 2.0, abs=0)


def _oracle_target(agent, b):
    """Brute-force enumeration, one item and one rule at a time."""
    out = []
    for i in range(len(b.r)):
        logits = agent.net.forward(agent.actor, b.s2[i], b.E2[i])[0]
        t1 = agent.net.forward(agent.q1_target, b.s2[i], b.E2[i])[0]
        t2 = agent.net.forward(agent.q2_target, b.s2[i], b.E2[i])[0]
        z = np.exp(logits - logits.max())
        pi = z / z.sum()
        v = 0.0
        for j in range(len(pi)):
            v += pi[j] * (min(t1[j], t2[j]) - agent.beta * np.log(pi[j]))
        out.append(b.r[i] + agent.cfg.gamma * (1.0 - b.done[i]) * v)
    return np.array(out)


@given(st.integers(0, 10_000), st.integers(1, 5), st.floats(1e-3, 2.0))
def test_compute_target_matches_oracle(seed, q, alpha):
    rng = np.random.default_rng(seed)
    agent = SacAgent(SacConfig(hidden_dim=8, n_heads=2, alpha=alpha), SD, ED, seed=seed)
    for p in (agent.q1_target, agent.q2_target):
        for k in p:
            p[k] += 0.3 * rng.standard_normal(p[k].shape)
    b = Batch.from_transitions([_transition(rng, q, done=bool(rng.integers(2))) for _ in range(6)])
    assert np.max(np.abs(agent.compute_target(b) - _oracle_target(agent, b))) < 1e-10


# ---- critic ----------------------------------------------------------------


def _zero_heads(agent, *names):
    for name in names:
        p = getattr(agent, name)
        p["head.w"][...] = 0.0
        p["head.b"][...] = 0.0


def test_critic_step_is_zero_when_q_equals_target(rng):
    agent = _agent(gamma=0.0)
    _zero_heads(agent, "q1", "q2")
    before = {k: v.copy() for k, v in agent.q1.items()}
    l1, l2 = agent.critic_update(_batch(rng, reward=0.0))
    assert l1 == 0.0 and l2 == 0.0
    assert all(np.array_equal(before[k], agent.q1[k]) for k in before)


def test_critic_overfits_frozen_batch(rng):
    agent = _agent(gamma=0.0, q_lr=1e-3)
    b = _batch(rng, n=16)
    losses = [agent.critic_update(b)[0] for _ in range(100)]
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])
    assert np.all(np.diff(losses) < 1e-12)


# ---- actor -----------------------------------------------------------------


def test_equal_q_pushes_policy_toward_uniform(rng):
    agent = _agent(autotune=False, alpha=0.5, policy_lr=1e-2)
    _zero_heads(agent, "q1", "q2")
    st_ = _state(rng, 4)
    b = Batch.from_transitions([Transition(st_, 0, 0.0, st_, False)] * 4)
    h0 = entropy(agent.policy(st_), np.log(agent.policy(st_)))
    for _ in range(5):
        agent.actor_update(b)
    h1 = entropy(agent.policy(st_), np.log(agent.policy(st_)))
    assert h1 > h0


def test_zero_temperature_step_raises_probability_of_best_rule(rng):
    agent = _agent(autotune=False)
    agent.log_beta["log_beta"][...] = -1e3
    assert agent.beta == 0.0
    st_ = _state(rng, 3)
    best = int(np.argmax(agent.q_values(st_)))
    before = agent.policy(st_)[best]
    agent.actor_update(Batch.from_transitions([Transition(st_, 0, 0.0, st_, False)]))
    assert agent.policy(st_)[best] > before


def test_actor_loss_and_logit_gradient(rng):
    agent = _agent(alpha=0.3)
    b = _batch(rng, n=4, q=2)
    loss, dlogits, _, probs, logp = agent.actor_loss_and_grad(b, dropout=False)
    q1 = agent.net.forward(agent.q1, b.s, b.E)[0]
    q2 = agent.net.forward(agent.q2, b.s, b.E)[0]
    min_q = np.minimum(q1, q2)
    expected = np.mean(agent.beta * (-entropy(probs, logp)) - np.sum(probs * min_q, -1))
    assert loss == pytest.approx(expected, abs=1e-12)

    logits = agent.net.forward(agent.actor, b.s, b.E)[0]

    def f(z):
        return float(np.mean(np.sum(softmax(z) * (agent.beta * log_softmax(z) - min_q), -1)))

    eps = 1e-6
    numeric = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        zp, zm = logits.copy(), logits.copy()
        zp[idx] += eps
        zm[idx] -= eps
        numeric[idx] = (f(zp) - f(zm)) / (2 * eps)
    assert np.allclose(dlogits, numeric, atol=1e-8)


# ---- temperature -----------------------------------------------------------


def _probs_with_entropy(h):
    lo, hi = 1e-9, 0.5
    for _ in range(200):
        p = (lo + hi) / 2
        cur = -(p * np.log(p) + (1 - p) * np.log(1 - p))
        lo, hi = (p, hi) if cur < h else (lo, p)
    return np.array([[p, 1 - p]])


def test_temperature_gradient_vanishes_at_target():
    agent = _agent()
    probs = _probs_with_entropy(agent.target_entropy(2))
    _, grad = agent.temperature_loss_and_grad(probs, np.log(probs))
    assert abs(grad) < 1e-12
    assert agent.target_entropy(5) == pytest.approx(0.89 * np.log(5))


def test_low_entropy_raises_temperature():
    agent = _agent(q_lr=1e-2)
    probs = np.array([[0.99, 0.01]])
    beta0 = agent.beta
    agent.temperature_update(probs, np.log(probs))
    assert agent.beta > beta0
    probs = np.array([[0.5, 0.5]])
    beta1 = agent.beta
    agent.temperature_update(probs, np.log(probs))
    agent.temperature_update(probs, np.log(probs))
    assert agent.beta < beta1 * 1.01


def test_temperature_stays_positive():
    agent = _agent()
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        q = int(rng.integers(2, 6))
        logits = rng.standard_normal((4, q)) * rng.uniform(0, 10)
        agent.temperature_update(softmax(logits), log_softmax(logits))
        assert 0.0 < agent.beta < np.inf


# ---- target sync -----------------------------------------------------------


def test_target_sync_cadence_and_exact_copy(rng):
    agent = _agent(tau=1.0)
    for k in agent.q1:
        agent.q1[k] += rng.standard_normal(agent.q1[k].shape)
    assert not agent.target_sync(63)
    assert not np.array_equal(agent.q1["head.w"], agent.q1_target["head.w"])
    assert agent.target_sync(64)
    for online, target in ((agent.q1, agent.q1_target), (agent.q2, agent.q2_target)):
        for k in online:
            assert online[k].tobytes() == target[k].tobytes()
            assert online[k] is not target[k]


def test_target_sync_blend():
    agent = _agent(tau=0.0)
    before = {k: v.copy() for k, v in agent.q1_target.items()}
    for k in agent.q1:
        agent.q1[k][...] = 2.0
    agent.target_sync(0)
    assert all(np.array_equal(before[k], agent.q1_target[k]) for k in before)
    agent.cfg.tau = 0.5
    for k in agent.q1_target:
        agent.q1_target[k][...] = 0.0
    agent.target_sync(0, force=True)
    assert all(np.all(v == 1.0) for v in agent.q1_target.values())


# ---- cycle and persistence -------------------------------------------------


def test_update_cycle_keeps_parameters_finite(rng):
    agent = _agent(dropout=0.05)
    buf = ReplayBuffer(64)
    for _ in range(64):
        buf.push(_transition(rng, reward=float(rng.normal(0, 100))))
    for step in range(1, 30):
        stats = agent.update_cycle(buf, step)
    assert all(np.isfinite(v) for v in stats.values())
    for params in (agent.actor, agent.q1, agent.q2):
        assert all(np.all(np.isfinite(v)) for v in params.values())


def test_gradient_clipping():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    assert global_norm(clipped) == pytest.approx(1.0)
    same, _ = clip_by_global_norm(grads, 10.0)
    assert same is grads


def test_agent_checkpoint_round_trip(tmp_path, rng):
    agent = _agent()
    buf = ReplayBuffer(32)
    for _ in range(32):
        buf.push(_transition(rng))
    agent.update_cycle(buf, 1)
    agent.save(tmp_path / "ck.npz", {"global_step": 5}, buf)
    loaded, meta = SacAgent.load(tmp_path / "ck.npz")
    assert meta["global_step"] == 5 and meta["buffer"]["size"] == 32
    for k, v in agent.state_arrays().items():
        assert loaded.state_arrays()[k].tobytes() == v.tobytes(), k
    b = buf.sample(8, np.random.default_rng(0))
    assert np.array_equal(agent.compute_target(b), loaded.compute_target(b))
    agent.update_cycle(buf, 2)
    loaded.update_cycle(buf, 2)
    assert agent.actor["head.w"].tobytes() == loaded.actor["head.w"].tobytes()
