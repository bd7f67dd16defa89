"""Dense network primitives with hand-written backward passes.

Everything is float64 numpy. Each ``*_forward`` returns (output, cache) and
the matching ``*_backward`` consumes that cache plus the upstream gradient,
returning input gradients and a dict of parameter gradients. Activations
flow as (batch, positions, dim) arrays; attention masks are boolean
(batch, positions) arrays that are True at real tokens. Masked positions
never contribute as keys or values, so their token content cannot leak
into any other position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray
LN_EPS = 1e-5


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Array:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# linear / layernorm / relu
# ---------------------------------------------------------------------------


def linear_forward(x: Array, w: Array, b: Array):
    return x @ w + b, (x, w)


def linear_backward(cache, dy: Array):
    x, w = cache
    din, dout = w.shape
    x2 = x.reshape(-1, din)
    dy2 = dy.reshape(-1, dout)
    dx = (dy2 @ w.T).reshape(x.shape)
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    return dx, dw, db


def layernorm_forward(x: Array, gamma: Array, beta: Array):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def layernorm_backward(cache, dy: Array):
    xhat, inv, gamma = cache
    dxhat = dy * gamma
    dgamma = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dbeta = dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def relu_forward(x: Array):
    return np.maximum(x, 0.0), (x > 0)


def relu_backward(cache, dy: Array):
    return dy * cache


# ---------------------------------------------------------------------------
# multi-head attention with key masking
# ---------------------------------------------------------------------------


def _split_heads(x: Array, heads: int) -> Array:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Array) -> Array:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def attention_forward(x: Array, p: dict, prefix: str, key_mask: Array, heads: int):
    """Scaled dot-product attention; masked keys are unreachable (-inf)."""
    wq, wk, wv, wo = (p[prefix + n] for n in ("wq", "wk", "wv", "wo"))
    bq, bk, bv, bo = (p[prefix + n] for n in ("bq", "bk", "bv", "bo"))
    q = _split_heads(x @ wq + bq, heads)
    k = _split_heads(x @ wk + bk, heads)
    v = _split_heads(x @ wv + bv, heads)
    dh = q.shape[-1]
    scale = 1.0 / math.sqrt(dh)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores = np.where(key_mask[:, None, None, :], scores, -np.inf)
    mx = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - mx)
    attn = e / e.sum(axis=-1, keepdims=True)
    ctx = attn @ v
    merged = _merge_heads(ctx)
    out = merged @ wo + bo
    cache = (x, q, k, v, attn, merged, scale, prefix, heads, wq, wk, wv, wo)
    return out, cache


def attention_backward(cache, dout: Array):
    x, q, k, v, attn, merged, scale, prefix, heads, wq, wk, wv, wo = cache
    b, t, d = x.shape
    grads = {}
    dout2 = dout.reshape(-1, d)
    grads[prefix + "wo"] = merged.reshape(-1, d).T @ dout2
    grads[prefix + "bo"] = dout2.sum(axis=0)
    dctx = _split_heads(dout @ wo.T, heads)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    # softmax backward; masked entries have attn == 0, so their grad is 0
    ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    ds = ds * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dq2 = _merge_heads(dq).reshape(-1, d)
    dk2 = _merge_heads(dk).reshape(-1, d)
    dv2 = _merge_heads(dv).reshape(-1, d)
    x2 = x.reshape(-1, d)
    grads[prefix + "wq"] = x2.T @ dq2
    grads[prefix + "bq"] = dq2.sum(axis=0)
    grads[prefix + "wk"] = x2.T @ dk2
    grads[prefix + "bk"] = dk2.sum(axis=0)
    grads[prefix + "wv"] = x2.T @ dv2
    grads[prefix + "bv"] = dv2.sum(axis=0)
    dx = (dq2 @ wq.T + dk2 @ wk.T + dv2 @ wv.T).reshape(x.shape)
    return dx, grads


# ---------------------------------------------------------------------------
# transformer layer (pre-norm) and stack
# ---------------------------------------------------------------------------


def ffn_forward(x: Array, p: dict, prefix: str):
    h, c1 = linear_forward(x, p[prefix + "w1"], p[prefix + "b1"])
    a, cr = relu_forward(h)
    out, c2 = linear_forward(a, p[prefix + "w2"], p[prefix + "b2"])
    return out, (c1, cr, c2, prefix)


def ffn_backward(cache, dout: Array):
    c1, cr, c2, prefix = cache
    da, dw2, db2 = linear_backward(c2, dout)
    dh = relu_backward(cr, da)
    dx, dw1, db1 = linear_backward(c1, dh)
    return dx, {
        prefix + "w1": dw1,
        prefix + "b1": db1,
        prefix + "w2": dw2,
        prefix + "b2": db2,
    }


def layer_forward(x: Array, p: dict, prefix: str, key_mask: Array, heads: int):
    h1, c_ln1 = layernorm_forward(x, p[prefix + "ln1.gamma"], p[prefix + "ln1.beta"])
    a, c_att = attention_forward(h1, p, prefix + "attn.", key_mask, heads)
    x1 = x + a
    h2, c_ln2 = layernorm_forward(x1, p[prefix + "ln2.gamma"], p[prefix + "ln2.beta"])
    f, c_ffn = ffn_forward(h2, p, prefix + "ffn.")
    return x1 + f, (c_ln1, c_att, c_ln2, c_ffn, prefix)


def layer_backward(cache, dout: Array):
    c_ln1, c_att, c_ln2, c_ffn, prefix = cache
    grads = {}
    dh2, g_ffn = ffn_backward(c_ffn, dout)
    grads.update(g_ffn)
    dx1_ln, dg2, db2 = layernorm_backward(c_ln2, dh2)
    grads[prefix + "ln2.gamma"] = dg2
    grads[prefix + "ln2.beta"] = db2
    dx1 = dout + dx1_ln
    dh1, g_att = attention_backward(c_att, dx1)
    grads.update(g_att)
    dx_ln, dg1, db1 = layernorm_backward(c_ln1, dh1)
    grads[prefix + "ln1.gamma"] = dg1
    grads[prefix + "ln1.beta"] = db1
    dx = dx1 + dx_ln
    return dx, grads


def init_stack_params(
    rng: np.random.Generator,
    params: dict,
    prefix: str,
    layers: int,
    d: int,
    ffn_dim: int,
) -> None:
    """Append transformer-stack parameters under ``prefix`` (in place)."""
    for layer in range(layers):
        base = f"{prefix}layers.{layer}."
        params[base + "ln1.gamma"] = np.ones(d)
        params[base + "ln1.beta"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            params[base + f"attn.{name}"] = uniform_init(rng, (d, d), d)
        for name in ("bq", "bk", "bv", "bo"):
            params[base + f"attn.{name}"] = uniform_init(rng, (d,), d)
        params[base + "ln2.gamma"] = np.ones(d)
        params[base + "ln2.beta"] = np.zeros(d)
        params[base + "ffn.w1"] = uniform_init(rng, (d, ffn_dim), d)
        params[base + "ffn.b1"] = uniform_init(rng, (ffn_dim,), d)
        params[base + "ffn.w2"] = uniform_init(rng, (ffn_dim, d), ffn_dim)
        params[base + "ffn.b2"] = uniform_init(rng, (d,), ffn_dim)
    params[prefix + "ln_f.gamma"] = np.ones(d)
    params[prefix + "ln_f.beta"] = np.zeros(d)


def stack_forward(x: Array, p: dict, prefix: str, layers: int, key_mask: Array, heads: int):
    caches = []
    for layer in range(layers):
        x, c = layer_forward(x, p, f"{prefix}layers.{layer}.", key_mask, heads)
        caches.append(c)
    out, c_f = layernorm_forward(x, p[prefix + "ln_f.gamma"], p[prefix + "ln_f.beta"])
    return out, (caches, c_f, prefix)


def stack_backward(cache, dout: Array):
    caches, c_f, prefix = cache
    grads = {}
    dx, dgf, dbf = layernorm_backward(c_f, dout)
    grads[prefix + "ln_f.gamma"] = dgf
    grads[prefix + "ln_f.beta"] = dbf
    for c in reversed(caches):
        dx, g = layer_backward(c, dx)
        grads.update(g)
    return dx, grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_init(params: dict) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        t=0,
    )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One Adam update in place; weight decay is applied decoupled."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for key in sorted(params):
        g = grads[key]
        state.m[key] = beta1 * state.m[key] + (1.0 - beta1) * g
        state.v[key] = beta2 * state.v[key] + (1.0 - beta2) * (g * g)
        mhat = state.m[key] / bc1
        vhat = state.v[key] / bc2
        params[key] -= lr * mhat / (np.sqrt(vhat) + eps)
        if weight_decay > 0.0:
            params[key] -= lr * weight_decay * params[key]


def l2_penalty(params: dict, coef: float) -> float:
    """(coef / 2) * sum of squared parameter entries."""
    if coef == 0.0:
        return 0.0
    return 0.5 * coef * float(sum((p * p).sum() for p in params.values()))


def zero_grads_like(params: dict) -> dict:
    return {k: np.zeros_like(p) for k, p in params.items()}


def accumulate(into: dict, grads: dict) -> None:
    for k, g in grads.items():
        into[k] += g
