"""Forward/backward primitives on numpy arrays.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the cache and the upstream gradient and returns input gradients plus
a dict of parameter gradients. Leading batch axes are arbitrary.
"""

from __future__ import annotations

import numpy as np


def linear_forward(x, W, b):
    return x @ W + b, x


def linear_backward(x, W, dout):
    dW = np.tensordot(x, dout, axes=(tuple(range(x.ndim - 1)), tuple(range(dout.ndim - 1))))
    db = dout.reshape(-1, dout.shape[-1]).sum(0)
    dx = dout @ W.T
    return dx, dW, db


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu_forward(x):
    s = sigmoid(x)
    return x * s, (x, s)


def silu_backward(cache, dout):
    x, s = cache
    return dout * s * (1.0 + x * (1.0 - s))


def tanh_backward(y, dout):
    return dout * (1.0 - y * y)


def layernorm_forward(x, gamma, beta, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def layernorm_backward(cache, dout):
    xhat, inv, gamma = cache
    axes = tuple(range(dout.ndim - 1))
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dgamma, dbeta


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_backward(p, dp, axis=-1):
    return p * (dp - (dp * p).sum(axis=axis, keepdims=True))


def _split_heads(x, n_heads):
    *lead, L, d = x.shape
    return x.reshape(*lead, L, n_heads, d // n_heads).swapaxes(-2, -3)


def _merge_heads(x):
    *lead, H, L, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, L, H * dh)


def mha_forward(xq, xkv, p, prefix, n_heads):
    """Multi-head scaled dot-product attention of ``xq`` (…, Lq, d) over ``xkv`` (…, Lk, d)."""
    Wq, bq = p[f"{prefix}.wq"], p[f"{prefix}.bq"]
    Wk, bk = p[f"{prefix}.wk"], p[f"{prefix}.bk"]
    Wv, bv = p[f"{prefix}.wv"], p[f"{prefix}.bv"]
    Wo, bo = p[f"{prefix}.wo"], p[f"{prefix}.bo"]
    Q = _split_heads(xq @ Wq + bq, n_heads)
    K = _split_heads(xkv @ Wk + bk, n_heads)
    V = _split_heads(xkv @ Wv + bv, n_heads)
    scale = 1.0 / np.sqrt(Q.shape[-1])
    A = softmax(Q @ K.swapaxes(-1, -2) * scale)
    O = _merge_heads(A @ V)
    out = O @ Wo + bo
    return out, (xq, xkv, Q, K, V, A, O, scale)


def mha_backward(cache, dout, p, prefix, n_heads):
    xq, xkv, Q, K, V, A, O, scale = cache
    Wq, Wk, Wv, Wo = (p[f"{prefix}.{n}"] for n in ("wq", "wk", "wv", "wo"))
    grads = {}
    dO, grads[f"{prefix}.wo"], grads[f"{prefix}.bo"] = linear_backward(O, Wo, dout)
    dO = _split_heads(dO, n_heads)
    dA = dO @ V.swapaxes(-1, -2)
    dV = A.swapaxes(-1, -2) @ dO
    dS = softmax_backward(A, dA) * scale
    dQ = _merge_heads(dS @ K)
    dK = _merge_heads(dS.swapaxes(-1, -2) @ Q)
    dV = _merge_heads(dV)
    dxq, grads[f"{prefix}.wq"], grads[f"{prefix}.bq"] = linear_backward(xq, Wq, dQ)
    dxk, grads[f"{prefix}.wk"], grads[f"{prefix}.bk"] = linear_backward(xkv, Wk, dK)
    dxv, grads[f"{prefix}.wv"], grads[f"{prefix}.bv"] = linear_backward(xkv, Wv, dV)
    return dxq, dxk + dxv, grads


def dropout_forward(x, rate, rng):
    if rng is None or rate <= 0.0:
        return x, None
    mask = (rng.uniform(size=x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask, dout):
    return dout if mask is None else dout * mask
