"""Small input-checking helpers shared by the estimators."""
from __future__ import annotations

import numpy as np


def as_vec3(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_finite(arr, name: str = "array") -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_windows(X, n_channels: int | None = None) -> np.ndarray:
    """Validate a ``(n_windows, length, channels)`` batch."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected windows of shape (n, L, C), got {X.shape}")
    if n_channels is not None and X.shape[2] != n_channels:
        raise ValueError(f"expected {n_channels} channels, got {X.shape[2]}")
    return check_finite(X, "windows")


def check_samples(samples):
    """Stack a list of ``(a_meas, BodyKinematics)`` pairs into arrays."""
    from .aerodynamics import BodyKinematics

    if len(samples) == 0:
        raise ValueError("no samples given")
    accel = np.array([np.asarray(a, dtype=float) for a, _ in samples])
    kin = BodyKinematics(
        np.array([k.v for _, k in samples]),
        np.array([k.omega for _, k in samples]),
        np.array([k.omega_m_sq for _, k in samples]),
    )
    return accel, kin
