"""Input normalization and sliding-window dataset construction."""
from __future__ import annotations

import numpy as np

from ..sensor_sim import SequenceLog

ACCEL_SCALE = 9.81
# A light prior re-centres the rotor channel on each flight within seconds and
# erases the absolute rotor speed that separates thrust from vertical drag.
DEFAULT_PRIOR_COUNT = 1e5


class RunningStats:
    """Welford mean/variance seeded with a prior worth ``prior_count`` samples."""

    def __init__(self, mean: float, std: float, prior_count: float = DEFAULT_PRIOR_COUNT, min_std: float = 1e-6):
        if std <= 0 or prior_count <= 0:
            raise ValueError("prior std and count must be positive")
        self.n = float(prior_count)
        self.mean = float(mean)
        self.m2 = self.n * float(std) ** 2
        self.min_std = min_std

    @property
    def std(self) -> float:
        return max(np.sqrt(self.m2 / self.n), self.min_std)

    def update(self, x: float) -> None:
        self.n += 1.0
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def push(self, x: float) -> float:
        """Update with ``x`` and return it standardized by the updated statistics."""
        self.update(x)
        return (x - self.mean) / self.std

    def copy(self) -> "RunningStats":
        out = RunningStats.__new__(RunningStats)
        out.__dict__.update(self.__dict__)
        return out


def hover_stats(omega_hover: float, prior_count: float = DEFAULT_PRIOR_COUNT) -> RunningStats:
    """Warm start at the hover rotor speed with a 10% spread."""
    return RunningStats(omega_hover, 0.1 * omega_hover, prior_count)


def feature_count(use_rotor: bool = True, rotor_channels: str = "mean") -> int:
    if not use_rotor:
        return 6
    return 7 if rotor_channels == "mean" else 10


def normalize_stream(gyro, accel, rotor, stats: RunningStats | None, use_rotor: bool = True,
                     rotor_channels: str = "mean") -> np.ndarray:
    """Feature rows ``[gyro, accel / 9.81, rotor...]`` for consecutive frames.

    The rotor channel is the root-mean-square rotor speed (or the four raw
    speeds with ``rotor_channels="four"``) standardized by ``stats``, which is
    updated in place frame by frame.
    """
    gyro = np.atleast_2d(np.asarray(gyro, dtype=float))
    accel = np.atleast_2d(np.asarray(accel, dtype=float))
    cols = [gyro, accel / ACCEL_SCALE]
    if use_rotor:
        rotor = np.atleast_2d(np.asarray(rotor, dtype=float))
        if rotor_channels == "mean":
            omega_m = np.sqrt(np.mean(rotor**2, axis=1))
            cols.append(np.array([[stats.push(w)] for w in omega_m]).reshape(-1, 1))
        elif rotor_channels == "four":
            out = np.empty_like(rotor)
            for i, row in enumerate(rotor):
                stats.update(float(np.sqrt(np.mean(row**2))))
                out[i] = (row - stats.mean) / stats.std
            cols.append(out)
        else:
            raise ValueError(f"unknown rotor_channels {rotor_channels!r}")
    return np.hstack(cols)


def normalize_window(frames, stats: RunningStats, use_rotor: bool = True, rotor_channels: str = "mean"):
    """Normalize a list of :class:`~aeroio.sensor_sim.SensorFrame` into an ``(L, C)`` tensor."""
    gyro = np.array([f.gyro for f in frames])
    accel = np.array([f.accel for f in frames])
    rotor = np.array([f.rotor for f in frames])
    return normalize_stream(gyro, accel, rotor, stats, use_rotor, rotor_channels)


def sequence_features(seq: SequenceLog, omega_hover: float, use_rotor: bool = True,
                      rotor_channels: str = "mean", prior_count: float = DEFAULT_PRIOR_COUNT) -> np.ndarray:
    """Whole-sequence feature stream with fresh hover-initialized statistics."""
    stats = hover_stats(omega_hover, prior_count)
    return normalize_stream(seq.gyro, seq.accel, seq.rotor, stats, use_rotor, rotor_channels)


def make_windows(seq: SequenceLog, mode: str, length: int, omega_hover: float, use_rotor: bool = True,
                 rotor_channels: str = "mean", stride: int | None = None,
                 prior_count: float = DEFAULT_PRIOR_COUNT):
    """Cut a sequence into network inputs and body-velocity targets.

    ``online``: stride 1 (override with ``stride``), target is the body
    velocity at the window's last frame; ``y`` is ``(M, 3)``.
    ``offline``: non-overlapping windows with a target at every frame;
    ``y`` is ``(M, L, 3)``.

    Returns ``X (M, L, C)``, ``y`` and the index of each window's last frame.
    """
    n = len(seq)
    if length < 1 or n < length:
        raise ValueError(f"sequence of {n} frames shorter than window {length}")
    if seq.truth is None:
        raise ValueError("make_windows needs ground truth for targets")
    feats = sequence_features(seq, omega_hover, use_rotor, rotor_channels, prior_count)
    vb = seq.truth.body_velocity
    if mode == "online":
        step = stride or 1
        ends = np.arange(length - 1, n, step)
        idx = ends[:, None] + np.arange(-length + 1, 1)[None, :]
        return feats[idx], vb[ends], ends
    if mode == "offline":
        step = stride or length
        ends = np.arange(length - 1, n, step)
        idx = ends[:, None] + np.arange(-length + 1, 1)[None, :]
        return feats[idx], vb[idx], ends
    raise ValueError(f"unknown window mode {mode!r}")
