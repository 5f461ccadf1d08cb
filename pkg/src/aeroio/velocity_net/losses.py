"""Velocity (Huber) and uncertainty (Gaussian NLL) losses.

Scalar forms take single 3-vectors. Batched forms take ``(..., 3)`` arrays,
average over samples, and also return gradients w.r.t. the predictions.
"""
from __future__ import annotations

import numpy as np


def huber_loss(v, v_hat, delta: float = 1.0) -> float:
    """Per-axis Huber penalty summed over the three axes."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = np.abs(np.asarray(v, dtype=float) - np.asarray(v_hat, dtype=float))
    return float(np.sum(np.where(r < delta, 0.5 * r * r, delta * (r - 0.5 * delta))))


def nll_loss(v, v_hat, sigma_hat) -> float:
    """``r^T diag(sigma)^-1 r + ln det diag(sigma)`` with ``sigma`` variances."""
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    if np.any(sigma_hat <= 0):
        raise ValueError("variances must be positive")
    r = np.asarray(v, dtype=float) - np.asarray(v_hat, dtype=float)
    return float(np.sum(r * r / sigma_hat) + np.sum(np.log(sigma_hat)))


def huber_batch(v, v_hat, delta: float = 1.0):
    """Mean Huber loss over samples and its gradient w.r.t. ``v_hat``."""
    r = v_hat - v
    n = r.size // 3
    small = np.abs(r) < delta
    loss = np.where(small, 0.5 * r * r, delta * (np.abs(r) - 0.5 * delta)).sum() / n
    grad = np.where(small, r, delta * np.sign(r)) / n
    return float(loss), grad


def nll_batch(v, v_hat, log_var):
    """Mean NLL over samples with ``sigma = exp(log_var)``; gradients w.r.t. both."""
    r = v_hat - v
    n = r.size // 3
    inv = np.exp(-log_var)
    loss = (r * r * inv + log_var).sum() / n
    return float(loss), 2.0 * r * inv / n, (1.0 - r * r * inv) / n
