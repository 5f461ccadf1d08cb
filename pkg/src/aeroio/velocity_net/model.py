"""Convolution + transformer-encoder velocity regressor with manual gradients.

Shapes: inputs ``(B, L, C)``; every layer keeps the time axis. Outputs are
per-time-step velocity ``(B, L, 3)`` and log-variance ``(B, L, 3)``; online
use reads only the last step.

Layer order::

    conv(k=5, same) -> GELU -> conv(k=5, same) -> GELU -> + positional table
    -> h1 = LN(h0 + MHA(h0)) -> h2 = LN(h1 + FF(h1))
    -> velocity = h2 Wv + bv,  log_var = h2 Ws + bs
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class NetConfig:
    n_channels: int = 7
    conv_channels: tuple = (16, 32)
    kernel_size: int = 5
    n_heads: int = 4
    d_ff: int = 64
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd for same padding")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_model(self) -> int:
        return self.conv_channels[-1]


def param_shapes(cfg: NetConfig) -> dict:
    shapes = {}
    c_in = cfg.n_channels
    for i, c_out in enumerate(cfg.conv_channels):
        shapes[f"conv{i}.W"] = (cfg.kernel_size, c_in, c_out)
        shapes[f"conv{i}.b"] = (c_out,)
        c_in = c_out
    d = cfg.d_model
    for name in ("q", "k", "v", "o"):
        shapes[f"attn.W{name}"] = (d, d)
        shapes[f"attn.b{name}"] = (d,)
    shapes["ln1.g"], shapes["ln1.b"] = (d,), (d,)
    shapes["ff1.W"], shapes["ff1.b"] = (d, cfg.d_ff), (cfg.d_ff,)
    shapes["ff2.W"], shapes["ff2.b"] = (cfg.d_ff, d), (d,)
    shapes["ln2.g"], shapes["ln2.b"] = (d,), (d,)
    shapes["head_v.W"], shapes["head_v.b"] = (d, 3), (3,)
    shapes["head_s.W"], shapes["head_s.b"] = (d, 3), (3,)
    return shapes


def init_params(cfg: NetConfig, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
    params["head_s.W"] *= 0.1
    return params


def positional_table(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


# -- layer primitives: forward returns (out, cache); backward returns grads --


def _gelu(x):
    u = _GELU_C * x * (1.0 + 0.044715 * x * x)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def _gelu_back(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _conv(x, W, b):
    k = W.shape[0]
    pad = k // 2
    L = x.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    out = np.broadcast_to(b, x.shape[:2] + b.shape).copy()
    for j in range(k):
        out += xp[:, j:j + L] @ W[j]
    return out, xp


def _conv_back(dy, xp, W):
    k = W.shape[0]
    pad = k // 2
    L = dy.shape[1]
    dW = np.empty_like(W)
    dxp = np.zeros_like(xp)
    dy2 = dy.reshape(-1, dy.shape[-1])
    for j in range(k):
        dW[j] = xp[:, j:j + L].reshape(-1, xp.shape[-1]).T @ dy2
        dxp[:, j:j + L] += dy @ W[j].T
    return dxp[:, pad:pad + L], dW, dy2.sum(axis=0)


def _layer_norm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layer_norm_back(dy, cache):
    xhat, inv, g = cache
    n = xhat.shape[-1]
    dxhat = dy * g
    dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    flat = (-1, n)
    return dx, (dy * xhat).reshape(flat).sum(0), dy.reshape(flat).sum(0)


def _split_heads(x, h):
    B, L, d = x.shape
    return x.reshape(B, L, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, L, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, h * dk)


def _attention(x, p, h):
    q = _split_heads(x @ p["attn.Wq"] + p["attn.bq"], h)
    k = _split_heads(x @ p["attn.Wk"] + p["attn.bk"], h)
    v = _split_heads(x @ p["attn.Wv"] + p["attn.bv"], h)
    scale = 1.0 / np.sqrt(q.shape[-1])
    s = (q @ k.transpose(0, 1, 3, 2)) * scale
    s -= s.max(axis=-1, keepdims=True)
    a = np.exp(s)
    a /= a.sum(axis=-1, keepdims=True)
    o = _merge_heads(a @ v)
    return o @ p["attn.Wo"] + p["attn.bo"], (x, q, k, v, a, o, scale)


def _attention_back(dy, cache, p, h, grads):
    x, q, k, v, a, o, scale = cache
    d = x.shape[-1]
    dy2 = dy.reshape(-1, d)
    grads["attn.Wo"] = o.reshape(-1, d).T @ dy2
    grads["attn.bo"] = dy2.sum(0)
    do = _split_heads(dy @ p["attn.Wo"].T, h)
    da = do @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ do
    ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    x2 = x.reshape(-1, d)
    dx = np.zeros_like(x)
    for name, dz in (("q", dq), ("k", dk), ("v", dv)):
        dz = _merge_heads(dz)
        dz2 = dz.reshape(-1, d)
        grads[f"attn.W{name}"] = x2.T @ dz2
        grads[f"attn.b{name}"] = dz2.sum(0)
        dx += dz @ p[f"attn.W{name}"].T
    return dx


def forward(params: dict, X, cfg: NetConfig, keep_cache: bool = False):
    """Per-step velocity and log-variance for a ``(B, L, C)`` batch."""
    X = np.asarray(X, dtype=float)
    caches = {}
    h = X
    for i in range(len(cfg.conv_channels)):
        z, caches[f"conv{i}"] = _conv(h, params[f"conv{i}.W"], params[f"conv{i}.b"])
        h, caches[f"gelu{i}"] = _gelu(z)
    h0 = h + positional_table(X.shape[1], cfg.d_model)
    att, caches["attn"] = _attention(h0, params, cfg.n_heads)
    h1, caches["ln1"] = _layer_norm(h0 + att, params["ln1.g"], params["ln1.b"], cfg.ln_eps)
    f1 = h1 @ params["ff1.W"] + params["ff1.b"]
    g1, caches["gelu_ff"] = _gelu(f1)
    f2 = g1 @ params["ff2.W"] + params["ff2.b"]
    h2, caches["ln2"] = _layer_norm(h1 + f2, params["ln2.g"], params["ln2.b"], cfg.ln_eps)
    vel = h2 @ params["head_v.W"] + params["head_v.b"]
    log_var = h2 @ params["head_s.W"] + params["head_s.b"]
    if keep_cache:
        caches.update(h1=h1, g1=g1, h2=h2)
        return vel, log_var, caches
    return vel, log_var


def backward(params: dict, caches: dict, d_vel, d_log_var, cfg: NetConfig) -> dict:
    """Gradients of a scalar loss given its gradients w.r.t. both outputs."""
    grads = {}
    d = cfg.d_model
    h2 = caches["h2"].reshape(-1, d)
    dv2, ds2 = d_vel.reshape(-1, 3), d_log_var.reshape(-1, 3)
    grads["head_v.W"], grads["head_v.b"] = h2.T @ dv2, dv2.sum(0)
    grads["head_s.W"], grads["head_s.b"] = h2.T @ ds2, ds2.sum(0)
    dh2 = d_vel @ params["head_v.W"].T + d_log_var @ params["head_s.W"].T

    dr2, grads["ln2.g"], grads["ln2.b"] = _layer_norm_back(dh2, caches["ln2"])
    df2 = dr2.reshape(-1, d)
    grads["ff2.W"] = caches["g1"].reshape(-1, cfg.d_ff).T @ df2
    grads["ff2.b"] = df2.sum(0)
    df1 = _gelu_back(dr2 @ params["ff2.W"].T, caches["gelu_ff"])
    df1_2 = df1.reshape(-1, cfg.d_ff)
    grads["ff1.W"] = caches["h1"].reshape(-1, d).T @ df1_2
    grads["ff1.b"] = df1_2.sum(0)
    dh1 = dr2 + df1 @ params["ff1.W"].T

    dr1, grads["ln1.g"], grads["ln1.b"] = _layer_norm_back(dh1, caches["ln1"])
    dh0 = dr1 + _attention_back(dr1, caches["attn"], params, cfg.n_heads, grads)

    dh = dh0
    for i in reversed(range(len(cfg.conv_channels))):
        dz = _gelu_back(dh, caches[f"gelu{i}"])
        dh, grads[f"conv{i}.W"], grads[f"conv{i}.b"] = _conv_back(dz, caches[f"conv{i}"], params[f"conv{i}.W"])
    return grads
