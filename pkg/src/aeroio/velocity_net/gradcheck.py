"""Central finite-difference verification of the hand-written backward pass."""
from __future__ import annotations

import numpy as np

from .losses import huber_batch, nll_batch
from .model import NetConfig, forward
from .training import loss_and_grad


def loss_value(params: dict, X, y, cfg: NetConfig, loss: str = "huber", delta: float = 1.0,
               targets: str = "last") -> float:
    """Forward-only loss, matching :func:`~aeroio.velocity_net.training.loss_and_grad`."""
    vel, log_var = forward(params, X, cfg)
    if targets == "last":
        vel, log_var = vel[:, -1], log_var[:, -1]
    if loss == "huber":
        return huber_batch(y, vel, delta)[0]
    return nll_batch(y, vel, log_var)[0]


def numerical_gradient(params: dict, name: str, loss_fn, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn()`` with respect to ``params[name]`` (perturbed in place)."""
    p = params[name]
    out = np.zeros_like(p)
    flat, grad = p.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        grad[i] = (up - down) / (2 * h)
    return out


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """``max|a - n| / max(|n|_inf, |a|_inf)``; absolute when both norms are below ``floor``.

    The absolute fallback covers tensors whose true gradient is zero, such as
    the key bias (softmax is invariant to adding a constant per query).
    """
    diff = float(np.max(np.abs(analytic - numeric)))
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))))
    return diff if scale < floor else diff / scale


def gradient_check(params: dict, X, y, cfg: NetConfig, loss: str = "huber", delta: float = 1.0,
                   targets: str = "last", h: float = 1e-5) -> dict:
    """Per-tensor relative error between analytic and numerical gradients."""
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = loss_and_grad(params, X, y, cfg, loss, delta, targets)

    def loss_fn():
        return loss_value(params, X, y, cfg, loss, delta, targets)

    return {name: relative_error(grads[name], numerical_gradient(params, name, loss_fn, h)) for name in params}
