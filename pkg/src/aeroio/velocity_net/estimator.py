"""scikit-learn style wrappers around the velocity network."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._fsutil import atomic_write
from .._validation import check_finite, check_windows
from ..eskf import PredictorError, VelocityPredictor
from . import serialization
from .model import NetConfig, forward, param_shapes
from .training import TrainConfig, train
from .windows import DEFAULT_PRIOR_COUNT, RunningStats, feature_count, normalize_stream


class RotorNormalizer(TransformerMixin, BaseEstimator):
    """Map raw ``[gyro(3), accel(3), rotor(4)]`` rows to network features.

    Rows are treated as one causal stream: the rotor statistics start at the
    hover warm start on every :meth:`transform` call and update frame by frame.
    """

    def __init__(self, omega_hover: float = 1.0, prior_count: float = DEFAULT_PRIOR_COUNT,
                 use_rotor: bool = True, rotor_channels: str = "mean"):
        self.omega_hover = omega_hover
        self.prior_count = prior_count
        self.use_rotor = use_rotor
        self.rotor_channels = rotor_channels

    def fit(self, X, y=None):
        X = self._check(X)
        self.n_features_in_ = X.shape[1]
        self.n_features_out_ = feature_count(self.use_rotor, self.rotor_channels)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = self._check(X)
        stats = self.initial_stats()
        return normalize_stream(X[:, 0:3], X[:, 3:6], X[:, 6:10], stats, self.use_rotor, self.rotor_channels)

    def initial_stats(self) -> RunningStats:
        return RunningStats(self.omega_hover, 0.1 * self.omega_hover, self.prior_count)

    @staticmethod
    def _check(X):
        X = check_finite(np.atleast_2d(X), "sensor rows")
        if X.shape[1] != 10:
            raise ValueError(f"expected 10 columns (gyro, accel, 4 rotors), got {X.shape[1]}")
        return X


class VelocityRegressor(RegressorMixin, BaseEstimator):
    """Windowed body-velocity regressor with a per-axis variance head.

    ``fit`` accepts targets of shape ``(n, 3)`` (supervise the last step of
    each window) or ``(n, L, 3)`` (supervise every step, offline windows).
    """

    def __init__(self, conv_channels=(16, 32), kernel_size: int = 5, n_heads: int = 4, d_ff: int = 64,
                 learning_rate: float = 1e-3, batch_size: int = 32, epochs: int = 50, huber_delta: float = 1.0,
                 patience: int = 10, min_improvement: float = 0.01, clip_norm: float | None = 10.0,
                 random_state: int = 0):
        self.conv_channels = conv_channels
        self.kernel_size = kernel_size
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.huber_delta = huber_delta
        self.patience = patience
        self.min_improvement = min_improvement
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _net_config(self, n_channels):
        return NetConfig(n_channels=n_channels, conv_channels=tuple(self.conv_channels),
                         kernel_size=self.kernel_size, n_heads=self.n_heads, d_ff=self.d_ff)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
                           huber_delta=self.huber_delta, patience=self.patience,
                           min_improvement=self.min_improvement, clip_norm=self.clip_norm,
                           seed=self.random_state)

    def fit(self, X, y):
        X = check_windows(X)
        y = check_finite(y, "targets")
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y have different numbers of windows")
        if y.shape == (X.shape[0], 3):
            targets = "last"
        elif y.shape == (X.shape[0], X.shape[1], 3):
            targets = "all"
        else:
            raise ValueError(f"targets must be (n, 3) or (n, L, 3), got {y.shape}")
        self.net_config_ = self._net_config(X.shape[2])
        self.n_features_in_ = X.shape[2]
        self.params_, self.history_ = train(X, y, self.train_config(), self.net_config_, targets=targets)
        return self

    def predict_with_variance(self, X, all_steps: bool = False):
        """Velocity and variance; last step ``(n, 3)`` or every step ``(n, L, 3)``."""
        check_is_fitted(self, "params_")
        X = check_windows(X, self.n_features_in_)
        vel, log_var = forward(self.params_, X, self.net_config_)
        var = np.exp(log_var)
        if all_steps:
            return vel, var
        return vel[:, -1], var[:, -1]

    def predict(self, X):
        return self.predict_with_variance(X)[0]

    # -- persistence ------------------------------------------------------

    def to_tensors(self, extra: dict | None = None) -> dict:
        check_is_fitted(self, "params_")
        cfg = self.net_config_
        tensors = {
            "config.n_channels": np.array(cfg.n_channels, dtype=float),
            "config.conv_channels": np.array(cfg.conv_channels, dtype=float),
            "config.kernel_size": np.array(cfg.kernel_size, dtype=float),
            "config.n_heads": np.array(cfg.n_heads, dtype=float),
            "config.d_ff": np.array(cfg.d_ff, dtype=float),
        }
        for key, value in (extra or {}).items():
            tensors[f"meta.{key}"] = np.asarray(value, dtype=float)
        tensors.update(self.params_)
        return tensors

    def save(self, path, **extra) -> None:
        """Write parameters plus architecture (and any scalar ``extra``) to ``path``."""
        serialization.save(path, self.to_tensors(extra))

    @classmethod
    def from_tensors(cls, tensors: dict):
        try:
            cfg = NetConfig(
                n_channels=int(tensors["config.n_channels"]),
                conv_channels=tuple(int(c) for c in tensors["config.conv_channels"]),
                kernel_size=int(tensors["config.kernel_size"]),
                n_heads=int(tensors["config.n_heads"]),
                d_ff=int(tensors["config.d_ff"]),
            )
        except KeyError as exc:
            raise serialization.ParseError(f"parameter file lacks {exc.args[0]}") from exc
        params = {}
        for name, shape in param_shapes(cfg).items():
            if name not in tensors or tensors[name].shape != shape:
                raise serialization.ParseError(f"tensor {name!r} missing or mis-shaped")
            params[name] = tensors[name]
        model = cls(conv_channels=cfg.conv_channels, kernel_size=cfg.kernel_size, n_heads=cfg.n_heads,
                    d_ff=cfg.d_ff)
        model.net_config_ = cfg
        model.n_features_in_ = cfg.n_channels
        model.params_ = params
        model.history_ = []
        model.meta_ = {k[5:]: v for k, v in tensors.items() if k.startswith("meta.")}
        return model

    @classmethod
    def load(cls, path):
        return cls.from_tensors(serialization.load(path))

    def export_history(self, path) -> None:
        """Loss history as CSV with columns ``epoch, huber, nll``."""
        check_is_fitted(self, "history_")
        lines = ["epoch,huber,nll"]
        lines += [f"{rec['epoch']},{float(rec['huber'])!r},{float(rec['nll'])!r}" for rec in self.history_]
        atomic_write(path, "\n".join(lines) + "\n")


class NetVelocityPredictor(VelocityPredictor):
    """Feeds the filter with network readings over the trailing ``window`` frames.

    Features are computed causally (running rotor statistics only see past
    frames), so precomputing the stream on :meth:`reset` is equivalent to
    streaming frame by frame.
    """

    def __init__(self, model: VelocityRegressor, window: int, normalizer: RotorNormalizer,
                 min_variance: float = 1e-6):
        self.model = model
        self.window = window
        self.normalizer = normalizer
        self.min_variance = min_variance

    def reset(self, seq):
        super().reset(seq)
        rows = np.hstack([seq.gyro, seq.accel, seq.rotor])
        self._features = self.normalizer.fit(rows).transform(rows)

    def predict(self, k, x, P):
        if k + 1 < self.window:
            raise PredictorError("window not yet full")
        win = self._features[k - self.window + 1:k + 1][None]
        v, var = self.model.predict_with_variance(win)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(var))):
            raise PredictorError("non-finite network output")
        return v[0], np.maximum(var[0], self.min_variance)
