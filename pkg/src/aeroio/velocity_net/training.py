"""Loss/gradient evaluation and the two-phase training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..exceptions import DivergenceDetected
from .losses import huber_batch, nll_batch
from .model import NetConfig, backward, forward, init_params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    huber_delta: float = 1.0
    patience: int = 10  # epochs without >= min_improvement before switching to NLL
    min_improvement: float = 0.01
    clip_norm: float | None = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size <= 0 or self.epochs <= 0 or self.huber_delta <= 0:
            raise ValueError("training config values must be positive")

    @classmethod
    def from_mapping(cls, mapping) -> "TrainConfig":
        kw = {}
        for key, raw in mapping.items():
            if key not in cls.__dataclass_fields__:
                raise ValueError(f"unknown train key {key!r}")
            if key == "clip_norm":
                kw[key] = None if str(raw).lower() in ("none", "") else float(raw)
            elif key in ("batch_size", "epochs", "patience", "seed"):
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        return cls(**kw)


def _select(arr, targets):
    return arr[:, -1] if targets == "last" else arr


def loss_and_grad(params: dict, X, y, cfg: NetConfig, loss: str = "huber", delta: float = 1.0,
                  targets: str = "last"):
    """Loss on the selected output steps and its gradient for every parameter.

    ``targets="last"`` expects ``y`` of shape ``(B, 3)``; ``"all"`` expects
    ``(B, L, 3)``.
    """
    vel, log_var, cache = forward(params, X, cfg, keep_cache=True)
    v_sel, s_sel = _select(vel, targets), _select(log_var, targets)
    if loss == "huber":
        value, dv = huber_batch(y, v_sel, delta)
        ds = np.zeros_like(s_sel)
    elif loss == "nll":
        value, dv, ds = nll_batch(y, v_sel, s_sel)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    d_vel = np.zeros_like(vel)
    d_log_var = np.zeros_like(log_var)
    if targets == "last":
        d_vel[:, -1], d_log_var[:, -1] = dv, ds
    else:
        d_vel[:], d_log_var[:] = dv, ds
    return value, backward(params, cache, d_vel, d_log_var, cfg)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train(X, y, train_cfg: TrainConfig = TrainConfig(), net_cfg: NetConfig | None = None,
          params: dict | None = None, targets: str = "last"):
    """Huber phase, then NLL once the Huber loss stalls.

    Returns the trained parameters and a per-epoch history of
    ``{"epoch", "phase", "huber", "nll"}`` (sample means over the epoch).

    Raises
    ------
    DivergenceDetected
        If a loss becomes non-finite.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) == 0:
        raise ValueError("empty training set")
    net_cfg = net_cfg or NetConfig(n_channels=X.shape[2])
    params = {k: v.copy() for k, v in (params or init_params(net_cfg, train_cfg.seed)).items()}
    opt = Adam(params, train_cfg.learning_rate)
    rng = np.random.default_rng(train_cfg.seed)
    n = len(X)
    history = []
    phase, best, stale = "huber", np.inf, 0

    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n)
        sums = {"huber": 0.0, "nll": 0.0}
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            xb, yb = X[idx], y[idx]
            vel, log_var, cache = forward(params, xb, net_cfg, keep_cache=True)
            v_sel, s_sel = _select(vel, targets), _select(log_var, targets)
            h, dv_h = huber_batch(yb, v_sel, train_cfg.huber_delta)
            nl, dv_n, ds_n = nll_batch(yb, v_sel, s_sel)
            if not (np.isfinite(h) and np.isfinite(nl)):
                raise DivergenceDetected(f"non-finite loss in epoch {epoch}")
            sums["huber"] += h * len(idx)
            sums["nll"] += nl * len(idx)
            dv, ds = (dv_h, np.zeros_like(s_sel)) if phase == "huber" else (dv_n, ds_n)
            d_vel, d_log_var = np.zeros_like(vel), np.zeros_like(log_var)
            if targets == "last":
                d_vel[:, -1], d_log_var[:, -1] = dv, ds
            else:
                d_vel[:], d_log_var[:] = dv, ds
            grads = backward(params, cache, d_vel, d_log_var, net_cfg)
            if train_cfg.clip_norm is not None:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if not np.isfinite(norm):
                    raise DivergenceDetected(f"non-finite gradient in epoch {epoch}")
                if norm > train_cfg.clip_norm:
                    for g in grads.values():
                        g *= train_cfg.clip_norm / norm
            opt.step(params, grads)

        record = {"epoch": epoch, "phase": phase, "huber": float(sums["huber"] / n), "nll": float(sums["nll"] / n)}
        history.append(record)
        logger.debug("epoch %d %s huber=%.5f nll=%.5f", epoch, phase, record["huber"], record["nll"])
        if phase == "huber":
            if record["huber"] < best * (1.0 - train_cfg.min_improvement):
                best, stale = record["huber"], 0
            else:
                stale += 1
                if stale >= train_cfg.patience:
                    phase = "nll"
    return params, history
