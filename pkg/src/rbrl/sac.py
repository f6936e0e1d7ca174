"""Discrete soft actor-critic over rule choices.

The action space is the current candidate rule set, so every expectation
over next actions is taken in closed form over the categorical policy.
"""

from __future__ import annotations

import threading
from dataclasses import asdict, dataclass

import numpy as np

from .nn import Adam, AttentionNet, NetConfig, clip_by_global_norm, copy_params
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import log_softmax, softmax


@dataclass
class AugmentedState:
    """Numeric environment state paired with the candidate rule set."""

    numeric: np.ndarray
    rule_embeddings: np.ndarray
    rule_texts: tuple[str, ...] = ()

    def __post_init__(self):
        self.numeric = np.asarray(self.numeric, dtype=np.float64)
        self.rule_embeddings = np.asarray(self.rule_embeddings, dtype=np.float64)
        if self.rule_embeddings.ndim != 2 or self.rule_embeddings.shape[0] < 1:
            raise ValueError("rule_embeddings must be a non-empty (q, dim) matrix")
        if self.rule_texts and len(self.rule_texts) != self.rule_embeddings.shape[0]:
            raise ValueError("rule texts and embedding rows are misaligned")

    @property
    def q(self) -> int:
        return self.rule_embeddings.shape[0]


@dataclass
class Transition:
    state: AugmentedState
    chosen: int
    reward: float
    next_state: AugmentedState
    done: bool
    env_reward: float = 0.0
    rule_reward: float = 0.0

    def __post_init__(self):
        if not 0 <= self.chosen < self.state.q:
            raise ValueError(f"chosen index {self.chosen} outside rule set of size {self.state.q}")


@dataclass
class Batch:
    s: np.ndarray
    E: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    E2: np.ndarray
    done: np.ndarray

    @classmethod
    def from_transitions(cls, items: list[Transition]) -> "Batch":
        return cls(
            s=np.stack([t.state.numeric for t in items]),
            E=np.stack([t.state.rule_embeddings for t in items]),
            a=np.array([t.chosen for t in items], dtype=np.int64),
            r=np.array([t.reward for t in items], dtype=np.float64),
            s2=np.stack([t.next_state.numeric for t in items]),
            E2=np.stack([t.next_state.rule_embeddings for t in items]),
            done=np.array([float(t.done) for t in items]),
        )


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int = 4096):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.storage: list[Transition] = []
        self.pos = 0
        self.total = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.storage)

    def push(self, t: Transition) -> None:
        with self._lock:
            if len(self.storage) < self.capacity:
                self.storage.append(t)
            else:
                self.storage[self.pos] = t
            self.pos = (self.pos + 1) % self.capacity
            self.total += 1

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, len(self.storage), size=n)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        with self._lock:
            if not self.storage:
                raise ValueError("cannot sample from an empty buffer")
            idx = self.sample_indices(n, rng)
            return Batch.from_transitions([self.storage[i] for i in idx])

    def ordered(self) -> list[Transition]:
        """Contents from oldest to newest."""
        with self._lock:
            if len(self.storage) < self.capacity:
                return list(self.storage)
            return self.storage[self.pos:] + self.storage[: self.pos]


@dataclass
class SacConfig:
    gamma: float = 0.95
    tau: float = 1.0
    batch_size: int = 16
    buffer_size: int = 4096
    learning_starts: int = 256
    policy_lr: float = 1e-4
    q_lr: float = 1e-4
    actor_updates: int = 4
    critic_updates: int = 4
    target_network_frequency: int = 64
    alpha: float = 0.01
    autotune: bool = True
    target_entropy_scale: float = 0.89
    max_grad_norm: float = 10.0
    hidden_dim: int = 16
    n_heads: int = 4
    num_self_attention_layers: int = 1
    dropout: float = 0.05
    update_every: int = 1


def soft_state_value(probs: np.ndarray, log_probs: np.ndarray, min_q: np.ndarray, beta: float) -> np.ndarray:
    """E_{i~pi}[minQ_i - beta log pi_i], summed exactly over the categorical distribution."""
    return np.sum(probs * (min_q - beta * log_probs), axis=-1)


def entropy(probs: np.ndarray, log_probs: np.ndarray) -> np.ndarray:
    return -np.sum(probs * log_probs, axis=-1)


class SacAgent:
    def __init__(self, cfg: SacConfig, state_dim: int, embed_dim: int, seed: int = 0):
        self.cfg = cfg
        self.state_dim = state_dim
        self.embed_dim = embed_dim
        self.rng = np.random.default_rng(seed)
        net_cfg = NetConfig(state_dim=state_dim, embed_dim=embed_dim, hidden_dim=cfg.hidden_dim,
                            n_heads=cfg.n_heads, n_self=cfg.num_self_attention_layers, dropout=cfg.dropout)
        self.net = AttentionNet(net_cfg)
        init_rng = np.random.default_rng([seed, 1])
        self.actor = self.net.init(init_rng)
        self.q1 = self.net.init(init_rng)
        self.q2 = self.net.init(init_rng)
        self.q1_target = copy_params(self.q1)
        self.q2_target = copy_params(self.q2)
        self.actor_opt = Adam(self.actor, cfg.policy_lr)
        self.q1_opt = Adam(self.q1, cfg.q_lr)
        self.q2_opt = Adam(self.q2, cfg.q_lr)
        self.log_beta = {"log_beta": np.array(np.log(cfg.alpha))}
        self.beta_opt = Adam(self.log_beta, cfg.q_lr)
        self.updates = 0
        self._lock = threading.RLock()

    # ---- acting ------------------------------------------------------
    @property
    def beta(self) -> float:
        return float(np.exp(self.log_beta["log_beta"]))

    def target_entropy(self, q: int) -> float:
        return self.cfg.target_entropy_scale * float(np.log(q))

    def policy(self, state: AugmentedState) -> np.ndarray:
        with self._lock:
            logits, _ = self.net.forward(self.actor, state.numeric[None], state.rule_embeddings[None])
        return softmax(logits[0])

    def q_values(self, state: AugmentedState) -> np.ndarray:
        with self._lock:
            q1, _ = self.net.forward(self.q1, state.numeric[None], state.rule_embeddings[None])
            q2, _ = self.net.forward(self.q2, state.numeric[None], state.rule_embeddings[None])
        return np.minimum(q1, q2)[0]

    # ---- updates -----------------------------------------------------
    def compute_target(self, batch: Batch) -> np.ndarray:
        logits, _ = self.net.forward(self.actor, batch.s2, batch.E2)
        probs, logp = softmax(logits), log_softmax(logits)
        t1, _ = self.net.forward(self.q1_target, batch.s2, batch.E2)
        t2, _ = self.net.forward(self.q2_target, batch.s2, batch.E2)
        v = soft_state_value(probs, logp, np.minimum(t1, t2), self.beta)
        return batch.r + self.cfg.gamma * (1.0 - batch.done) * v

    def critic_loss_and_grad(self, params, batch: Batch, y: np.ndarray, dropout: bool = True):
        """Loss mean_b (Q(s, a) - y)^2 for one critic and its parameter gradients (targets held fixed)."""
        q, cache = self.net.forward(params, batch.s, batch.E, self.rng if dropout else None)
        idx = np.arange(len(y))
        err = q[idx, batch.a] - y
        dq = np.zeros_like(q)
        dq[idx, batch.a] = 2.0 * err / len(y)
        return float(np.mean(err ** 2)), self.net.backward(params, cache, dq)

    def _critic_step(self, params, opt, batch, y):
        loss, grads = self.critic_loss_and_grad(params, batch, y)
        grads, norm = clip_by_global_norm(grads, self.cfg.max_grad_norm)
        opt.step(grads)
        return loss, norm

    def critic_update(self, batch: Batch) -> tuple[float, float]:
        with self._lock:
            y = self.compute_target(batch)
            l1, _ = self._critic_step(self.q1, self.q1_opt, batch, y)
            l2, _ = self._critic_step(self.q2, self.q2_opt, batch, y)
        return l1, l2

    def actor_loss_and_grad(self, batch: Batch, dropout: bool = True):
        """Loss mean_b sum_i pi_i (beta log pi_i - minQ_i) and its gradient w.r.t. the logits."""
        logits, cache = self.net.forward(self.actor, batch.s, batch.E, self.rng if dropout else None)
        q1, _ = self.net.forward(self.q1, batch.s, batch.E)
        q2, _ = self.net.forward(self.q2, batch.s, batch.E)
        min_q = np.minimum(q1, q2)
        probs, logp = softmax(logits), log_softmax(logits)
        c = self.beta * logp - min_q
        loss = float(np.mean(np.sum(probs * c, -1)))
        dlogits = probs * (c - np.sum(probs * c, -1, keepdims=True)) / len(batch.a)
        return loss, dlogits, cache, probs, logp

    def actor_update(self, batch: Batch) -> tuple[float, float]:
        with self._lock:
            loss, dlogits, cache, probs, logp = self.actor_loss_and_grad(batch)
            grads, _ = clip_by_global_norm(self.net.backward(self.actor, cache, dlogits), self.cfg.max_grad_norm)
            self.actor_opt.step(grads)
            ent = float(np.mean(entropy(probs, logp)))
            if self.cfg.autotune:
                self.temperature_update(probs, logp)
        return loss, ent

    def temperature_loss_and_grad(self, probs: np.ndarray, logp: np.ndarray) -> tuple[float, float]:
        """L = mean_b sum_i pi_i * (-beta (log pi_i + H_target)); gradient taken w.r.t. log beta."""
        h_target = self.target_entropy(probs.shape[-1])
        per = -np.sum(probs * (logp + h_target), -1)
        loss = float(self.beta * np.mean(per))
        return loss, loss

    def temperature_update(self, probs: np.ndarray, logp: np.ndarray) -> float:
        _, grad = self.temperature_loss_and_grad(probs, logp)
        self.beta_opt.step({"log_beta": np.array(grad)})
        return self.beta

    def target_sync(self, step: int, force: bool = False) -> bool:
        if not force and step % self.cfg.target_network_frequency != 0:
            return False
        tau = self.cfg.tau
        with self._lock:
            for online, target in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
                for k in target:
                    if tau == 1.0:
                        target[k][...] = online[k]
                    else:
                        target[k][...] = tau * online[k] + (1.0 - tau) * target[k]
        return True

    def update_cycle(self, buffer: ReplayBuffer, step: int) -> dict[str, float]:
        cfg = self.cfg
        qf1 = qf2 = actor_loss = ent = float("nan")
        for _ in range(cfg.critic_updates):
            qf1, qf2 = self.critic_update(buffer.sample(cfg.batch_size, self.rng))
        for _ in range(cfg.actor_updates):
            actor_loss, ent = self.actor_update(buffer.sample(cfg.batch_size, self.rng))
        self.target_sync(step)
        self.updates += 1
        return {"qf1_loss": qf1, "qf2_loss": qf2, "actor_loss": actor_loss, "beta": self.beta, "entropy": ent}

    # ---- persistence -------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, params in (("actor", self.actor), ("q1", self.q1), ("q2", self.q2),
                             ("q1_target", self.q1_target), ("q2_target", self.q2_target)):
            out.update({f"{name}/{k}": v for k, v in params.items()})
        out["log_beta"] = self.log_beta["log_beta"]
        for name, opt in (("actor_opt", self.actor_opt), ("q1_opt", self.q1_opt),
                          ("q2_opt", self.q2_opt), ("beta_opt", self.beta_opt)):
            out.update(opt.state_dict(name))
        return out

    def save(self, path, extra_meta: dict | None = None, buffer: ReplayBuffer | None = None):
        meta = {"sac_config": asdict(self.cfg), "state_dim": self.state_dim, "embed_dim": self.embed_dim,
                "updates": self.updates, "rng_state": self.rng.bit_generator.state, **(extra_meta or {})}
        if buffer is not None:
            meta["buffer"] = {"size": len(buffer), "capacity": buffer.capacity, "total": buffer.total}
        return save_checkpoint(path, self.state_arrays(), meta)

    def load_arrays(self, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
        for name, params in (("actor", self.actor), ("q1", self.q1), ("q2", self.q2),
                             ("q1_target", self.q1_target), ("q2_target", self.q2_target)):
            for k in params:
                params[k][...] = arrays[f"{name}/{k}"]
        self.log_beta["log_beta"][...] = arrays["log_beta"]
        for name, opt in (("actor_opt", self.actor_opt), ("q1_opt", self.q1_opt),
                          ("q2_opt", self.q2_opt), ("beta_opt", self.beta_opt)):
            opt.load_state_dict(arrays, name)
        if meta:
            self.updates = meta.get("updates", 0)
            if "rng_state" in meta:
                self.rng.bit_generator.state = meta["rng_state"]

    @classmethod
    def load(cls, path) -> tuple["SacAgent", dict]:
        arrays, meta = load_checkpoint(path)
        agent = cls(SacConfig(**meta["sac_config"]), meta["state_dim"], meta["embed_dim"])
        agent.load_arrays(arrays, meta)
        return agent, meta


__all__ = ["AugmentedState", "Transition", "Batch", "ReplayBuffer", "SacConfig", "SacAgent",
           "soft_state_value", "entropy"]
