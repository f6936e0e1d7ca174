"""Attention network scoring a candidate rule set against the numeric state.

The numeric state becomes a single key/value token ``k = SiLU(Linear(s))``;
projected rule embeddings are the queries. One cross-attention block is
followed by ``n_self`` self-attention blocks over the rules, each wrapped in
a residual connection and layer normalization, and a linear head emits one
score per rule. The actor reads the scores as logits; a critic reads them as
per-rule Q values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L

LOGIT_CLAMP = 50.0


@dataclass(frozen=True)
class NetConfig:
    state_dim: int
    embed_dim: int = 768
    hidden_dim: int = 16
    n_heads: int = 4
    n_self: int = 1
    dropout: float = 0.05
    clamp: float = LOGIT_CLAMP

    def __post_init__(self):
        if self.hidden_dim % self.n_heads:
            raise ValueError("hidden_dim must be divisible by n_heads")


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class AttentionNet:
    """Stateless network definition; parameters live in a plain dict of arrays."""

    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        self.blocks = ["x"] + [f"s{i}" for i in range(cfg.n_self)]

    def init(self, rng: np.random.Generator, zero_head: bool = False) -> dict[str, np.ndarray]:
        c = self.cfg
        d = c.hidden_dim
        p = {
            "state.w": _uniform(rng, c.state_dim, (c.state_dim, d)),
            "state.b": _uniform(rng, c.state_dim, (d,)),
            "rule.w": _uniform(rng, c.embed_dim, (c.embed_dim, d)),
            "rule.b": _uniform(rng, c.embed_dim, (d,)),
        }
        for blk in self.blocks:
            for name in ("q", "k", "v", "o"):
                p[f"{blk}.w{name}"] = _uniform(rng, d, (d, d))
                p[f"{blk}.b{name}"] = np.zeros(d)
            p[f"{blk}.ln.g"] = np.ones(d)
            p[f"{blk}.ln.b"] = np.zeros(d)
        p["head.w"] = np.zeros((d, 1)) if zero_head else _uniform(rng, d, (d, 1))
        p["head.b"] = np.zeros(1)
        return p

    def check_inputs(self, s: np.ndarray, E: np.ndarray) -> None:
        c = self.cfg
        if s.shape[-1] != c.state_dim:
            raise ValueError(f"state has dimension {s.shape[-1]}, expected {c.state_dim}")
        if E.ndim < 2 or E.shape[-1] != c.embed_dim:
            raise ValueError(f"rule embeddings have dimension {E.shape[-1]}, expected {c.embed_dim}")
        if E.shape[:-2] != s.shape[:-1]:
            raise ValueError(f"batch shapes differ: state {s.shape[:-1]} vs rules {E.shape[:-2]}")
        if E.shape[-2] < 1:
            raise ValueError("rule set is empty")

    def forward(self, p, s, E, dropout_rng: np.random.Generator | None = None):
        """Scores of shape (…, q) for states (…, state_dim) and rule embeddings (…, q, embed_dim).

        Dropout is applied only when ``dropout_rng`` is given.
        """
        s = np.asarray(s, dtype=np.float64)
        E = np.asarray(E, dtype=np.float64)
        self.check_inputs(s, E)
        c = self.cfg
        cache = {}
        z, cache["state"] = L.linear_forward(s, p["state.w"], p["state.b"])
        k, cache["silu"] = L.silu_forward(z)
        kv = k[..., None, :]
        h, cache["rule"] = L.linear_forward(E, p["rule.w"], p["rule.b"])
        for blk in self.blocks:
            src = kv if blk == "x" else h
            a, cache[f"{blk}.attn"] = L.mha_forward(h, src, p, blk, c.n_heads)
            a, cache[f"{blk}.drop"] = L.dropout_forward(a, c.dropout, dropout_rng)
            h, cache[f"{blk}.ln"] = L.layernorm_forward(h + a, p[f"{blk}.ln.g"], p[f"{blk}.ln.b"])
        raw, cache["head"] = L.linear_forward(h, p["head.w"], p["head.b"])
        raw = raw[..., 0]
        out = np.clip(raw, -c.clamp, c.clamp)
        cache["clip"] = np.abs(raw) < c.clamp
        return out, cache

    def backward(self, p, cache, dout):
        """Gradients of sum(dout * forward(...)) with respect to every parameter."""
        c = self.cfg
        g = {}
        dout = np.where(cache["clip"], dout, 0.0)[..., None]
        dh, g["head.w"], g["head.b"] = L.linear_backward(cache["head"], p["head.w"], dout)
        dkv = None
        for blk in reversed(self.blocks):
            du, g[f"{blk}.ln.g"], g[f"{blk}.ln.b"] = L.layernorm_backward(cache[f"{blk}.ln"], dh)
            da = L.dropout_backward(cache[f"{blk}.drop"], du)
            dq, dsrc, ga = L.mha_backward(cache[f"{blk}.attn"], da, p, blk, c.n_heads)
            g.update(ga)
            if blk == "x":
                dh = du + dq
                dkv = dsrc
            else:
                dh = du + dq + dsrc
        _, g["rule.w"], g["rule.b"] = L.linear_backward(cache["rule"], p["rule.w"], dh)
        dz = L.silu_backward(cache["silu"], dkv[..., 0, :])
        _, g["state.w"], g["state.b"] = L.linear_backward(cache["state"], p["state.w"], dz)
        return g


def policy_probs(logits: np.ndarray) -> np.ndarray:
    return L.softmax(logits)


def sample_rule(probs: np.ndarray, rng: np.random.Generator, greedy: bool = False) -> int:
    """Categorical draw over rule indices, or argmax when ``greedy``."""
    probs = np.asarray(probs, dtype=np.float64)
    if greedy:
        return int(np.argmax(probs))
    cdf = np.cumsum(probs)
    u = rng.uniform() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(probs) - 1))


def copy_params(p: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in p.items()}
