"""Numeric PPO on raw state vectors, the comparator without language.

Policy and value are separate two-layer tanh MLPs trained jointly with one
Adam optimizer, clipped surrogate, clipped value loss and an entropy bonus.
Truncated episodes are treated as terminal (no bootstrap), as in common
single-file PPO implementations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn.checkpoint import save_checkpoint
from .nn.layers import log_softmax, softmax
from .nn.optim import Adam, clip_by_global_norm


@dataclass
class PpoConfig:
    learning_rate: float = 2.5e-4
    num_envs: int = 4
    num_steps: int = 512
    anneal_lr: bool = False
    gamma: float = 0.95
    gae_lambda: float = 0.95
    num_minibatches: int = 4
    update_epochs: int = 64
    norm_adv: bool = True
    clip_coef: float = 0.2
    clip_vloss: bool = True
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    hidden: int = 16
    total_timesteps: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.clip_coef <= 0:
            raise ValueError("clip_coef must be positive")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if (self.num_envs * self.num_steps) % self.num_minibatches:
            raise ValueError("batch size must divide into minibatches")


def gae(rewards, values, dones, gamma: float, lam: float, last_value: float | np.ndarray = 0.0):
    """Backward GAE recursion along axis 0.

    ``dones[t]`` marks that the episode ended after step t, so step t does not
    bootstrap. ``last_value`` is V of the state following the final step.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    for t in reversed(range(len(rewards))):
        next_v = last_value if t == len(rewards) - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values


def whiten(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / (x.std() + 1e-8)


def orthogonal(rng, shape, gain):
    a = rng.standard_normal((max(shape), min(shape)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    q = q if shape[0] >= shape[1] else q.T
    return np.ascontiguousarray(gain * q[: shape[0], : shape[1]])


class Mlp:
    """in -> hidden (tanh) -> hidden (tanh) -> out, weights stored as (in, out)."""

    def __init__(self, sizes, rng, out_gain):
        self.params = {}
        n = len(sizes) - 1
        for i in range(n):
            gain = out_gain if i == n - 1 else np.sqrt(2.0)
            self.params[f"W{i}"] = orthogonal(rng, (sizes[i], sizes[i + 1]), gain)
            self.params[f"b{i}"] = np.zeros(sizes[i + 1])
        self.n = n

    def forward(self, x):
        acts = [x]
        h = x
        for i in range(self.n):
            h = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < self.n - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, dout):
        grads = {}
        d = dout
        for i in reversed(range(self.n)):
            grads[f"W{i}"] = acts[i].T @ d
            grads[f"b{i}"] = d.sum(0)
            if i > 0:
                d = (d @ self.params[f"W{i}"].T) * (1.0 - acts[i] ** 2)
        return grads


class PpoAgent:
    def __init__(self, cfg: PpoConfig, obs_dim: int, n_actions: int):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        rng = np.random.default_rng([cfg.seed, 3])
        h = cfg.hidden
        self.actor = Mlp([obs_dim, h, h, n_actions], rng, 0.01)
        self.critic = Mlp([obs_dim, h, h, 1], rng, 1.0)
        self.params = {**{f"actor/{k}": v for k, v in self.actor.params.items()},
                       **{f"critic/{k}": v for k, v in self.critic.params.items()}}
        self.opt = Adam(self.params, cfg.learning_rate, eps=1e-5)
        self.rng = np.random.default_rng(cfg.seed)

    def act(self, obs: np.ndarray):
        logits, _ = self.actor.forward(obs)
        v, _ = self.critic.forward(obs)
        logp = log_softmax(logits)
        probs = np.exp(logp)
        a = np.array([self.rng.choice(self.n_actions, p=p / p.sum()) for p in probs])
        return a, logp[np.arange(len(a)), a], v[:, 0]

    def value(self, obs):
        return self.critic.forward(obs)[0][:, 0]

    def loss_and_grads(self, obs, actions, old_logp, adv, returns, old_values):
        """Combined PPO loss and gradients for one minibatch (advantages used as given)."""
        cfg = self.cfg
        n = len(actions)
        idx = np.arange(n)
        logits, a_acts = self.actor.forward(obs)
        logp_all = log_softmax(logits)
        probs = softmax(logits)
        ratio = np.exp(logp_all[idx, actions] - old_logp)
        clipped = np.clip(ratio, 1 - cfg.clip_coef, 1 + cfg.clip_coef)
        pg1, pg2 = -adv * ratio, -adv * clipped
        pg_loss = float(np.mean(np.maximum(pg1, pg2)))
        # d/d logp_a; the clipped branch is flat outside the clip range
        active_unclipped = pg1 >= pg2
        in_range = (ratio >= 1 - cfg.clip_coef) & (ratio <= 1 + cfg.clip_coef)
        dlogp = np.where(active_unclipped | in_range, -adv * ratio, 0.0) / n
        onehot = np.zeros_like(logits)
        onehot[idx, actions] = 1.0
        dlogits = dlogp[:, None] * (onehot - probs)
        ent = -np.sum(probs * logp_all, -1)
        ent_loss = float(np.mean(ent))
        dlogits += cfg.ent_coef * probs * (logp_all + ent[:, None]) / n

        v, c_acts = self.critic.forward(obs)
        v = v[:, 0]
        if cfg.clip_vloss:
            lu = (v - returns) ** 2
            vc = old_values + np.clip(v - old_values, -cfg.clip_coef, cfg.clip_coef)
            lc = (vc - returns) ** 2
            v_loss = 0.5 * float(np.mean(np.maximum(lu, lc)))
            inside = np.abs(v - old_values) <= cfg.clip_coef
            dv = np.where(lu >= lc, 2 * (v - returns), np.where(inside, 2 * (vc - returns), 0.0))
        else:
            v_loss = 0.5 * float(np.mean((v - returns) ** 2))
            dv = 2 * (v - returns)
        dv = cfg.vf_coef * 0.5 * dv / n
        grads = {f"actor/{k}": g for k, g in self.actor.backward(a_acts, dlogits).items()}
        grads.update({f"critic/{k}": g for k, g in self.critic.backward(c_acts, dv[:, None]).items()})
        loss = pg_loss - cfg.ent_coef * ent_loss + cfg.vf_coef * v_loss
        approx_kl = float(np.mean((ratio - 1) - np.log(ratio)))
        return loss, grads, {"pg_loss": pg_loss, "v_loss": v_loss, "entropy": ent_loss, "approx_kl": approx_kl}

    def ppo_update(self, batch: dict) -> dict:
        cfg = self.cfg
        n = len(batch["actions"])
        mb = n // cfg.num_minibatches
        stats = {}
        for _ in range(cfg.update_epochs):
            order = self.rng.permutation(n)
            for start in range(0, n, mb):
                i = order[start:start + mb]
                adv = whiten(batch["advantages"][i]) if cfg.norm_adv else batch["advantages"][i]
                _, grads, stats = self.loss_and_grads(batch["obs"][i], batch["actions"][i], batch["logp"][i],
                                                      adv, batch["returns"][i], batch["values"][i])
                grads, _ = clip_by_global_norm(grads, cfg.max_grad_norm)
                self.opt.step(grads)
        return stats

    def save(self, path, extra_meta: dict | None = None):
        arrays = dict(self.params)
        arrays.update(self.opt.state_dict("opt"))
        return save_checkpoint(path, arrays, {"ppo_config": asdict(self.cfg), "obs_dim": self.obs_dim,
                                              "n_actions": self.n_actions, **(extra_meta or {})})


def train_ppo(cfg: PpoConfig, env_fn) -> tuple[PpoAgent, list[dict]]:
    """Vectorized by a plain loop over ``cfg.num_envs`` environments.

    Metric rows are written per rollout. ``total_timesteps`` is rounded up to
    whole rollouts.
    """
    envs = [env_fn(i) for i in range(cfg.num_envs)]
    agent = PpoAgent(cfg, envs[0].spec.state_dim, envs[0].spec.num_actions)
    episode = [0] * cfg.num_envs
    obs = np.stack([e.reset(seed=int(np.random.SeedSequence([cfg.seed, i, 0]).generate_state(1)[0]))[0].values
                    for i, e in enumerate(envs)])
    ep_ret = np.zeros(cfg.num_envs)
    rows, step = [], 0
    T, N = cfg.num_steps, cfg.num_envs
    while step < cfg.total_timesteps:
        if cfg.anneal_lr:
            agent.opt.lr = cfg.learning_rate * max(1.0 - step / cfg.total_timesteps, 0.0)
        buf = {k: [] for k in ("obs", "actions", "logp", "values", "rewards", "dones")}
        finished = []
        for _ in range(T):
            a, logp, v = agent.act(obs)
            rewards, dones, nxt = np.zeros(N), np.zeros(N), []
            for i, env in enumerate(envs):
                out = env.step(int(a[i]))
                rewards[i] = out.env_reward
                ep_ret[i] += out.env_reward
                if out.terminated or out.truncated:
                    dones[i] = 1.0
                    finished.append(ep_ret[i])
                    ep_ret[i] = 0.0
                    episode[i] += 1
                    seed = int(np.random.SeedSequence([cfg.seed, i, episode[i]]).generate_state(1)[0])
                    nxt.append(env.reset(seed=seed)[0].values)
                else:
                    nxt.append(out.next_state.values)
            for k, val in zip(buf, (obs, a, logp, v, rewards, dones)):
                buf[k].append(val)
            obs = np.stack(nxt)
            step += N
        data = {k: np.stack(v) for k, v in buf.items()}
        adv, ret = gae(data["rewards"], data["values"], data["dones"], cfg.gamma, cfg.gae_lambda,
                       agent.value(obs))
        flat = {"obs": data["obs"].reshape(T * N, -1), "actions": data["actions"].reshape(-1),
                "logp": data["logp"].reshape(-1), "values": data["values"].reshape(-1),
                "advantages": adv.reshape(-1), "returns": ret.reshape(-1)}
        stats = agent.ppo_update(flat)
        rows.append({"step": step, "env_reward": float(data["rewards"].mean()),
                     "episode_return": float(np.mean(finished)) if finished else "", **stats})
    return agent, rows
