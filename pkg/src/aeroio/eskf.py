"""Error-state EKF fusing IMU propagation with body-frame velocity readings.

Error state (15): ``[dtheta, dv, dp, dba, dbg]`` with the global attitude
error ``dtheta = Log(R_true R_est^T)``, i.e. ``R_true = Exp(dtheta) R_est``,
and additive errors (true minus estimate) for everything else.

One propagation step with ``w = gyro - bg`` and ``f = accel - ba``::

    R' = R Exp(w dt)
    v' = v + g dt + R f dt
    p' = p + v dt + (g + R f) dt^2 / 2

linearizes (first order, exact for this discrete map) to::

    dtheta' = dtheta - R' Jr(w dt) dt dbg
    dv'     = dv - [R f]x dt dtheta - R dt dba
    dp'     = dp + dt dv - [R f]x dt^2/2 dtheta - R dt^2/2 dba

Process noise ``[n_a, n_g, n_ba, n_bg]`` are continuous-time densities and
enter as ``B (W dt) B^T`` with ``B`` mapping them onto the error rates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .exceptions import AeroIOError, InnovationGateRejected
from .sensor_sim import GRAVITY, NoiseConfig, SequenceLog

logger = logging.getLogger(__name__)

TH, VEL, POS, BA, BG = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)
CHI2_3_999 = 16.266
_I3 = np.eye(3)


@dataclass
class NavState:
    R: np.ndarray
    v: np.ndarray
    p: np.ndarray
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.ba = np.asarray(self.ba, dtype=float)
        self.bg = np.asarray(self.bg, dtype=float)
        if geometry.orthogonality_residual(self.R) > 1e-6:
            raise ValueError("NavState.R is not orthonormal")

    @classmethod
    def _raw(cls, R, v, p, ba, bg) -> "NavState":
        obj = cls.__new__(cls)
        obj.R, obj.v, obj.p, obj.ba, obj.bg = R, v, p, ba, bg
        return obj

    def copy(self) -> "NavState":
        return NavState(self.R.copy(), self.v.copy(), self.p.copy(), self.ba.copy(), self.bg.copy())


def inject(x: NavState, dx) -> NavState:
    """Apply an error-state correction: ``R <- Exp(dtheta) R``, additive elsewhere."""
    dx = np.asarray(dx, dtype=float)
    return NavState._raw(geometry.exp_map(dx[TH]) @ x.R, x.v + dx[VEL], x.p + dx[POS], x.ba + dx[BA],
                         x.bg + dx[BG])


def state_error(x_true: NavState, x_est: NavState) -> np.ndarray:
    """Error state taking ``x_est`` to ``x_true`` (inverse of :func:`inject`)."""
    return np.concatenate([
        geometry.log_map(x_true.R @ x_est.R.T),
        x_true.v - x_est.v,
        x_true.p - x_est.p,
        x_true.ba - x_est.ba,
        x_true.bg - x_est.bg,
    ])


@dataclass(frozen=True)
class ProcessNoise:
    """Continuous-time noise densities (variances per second)."""

    acc: float = 1e-4
    gyro: float = 1e-6
    acc_bias: float = 1e-6
    gyro_bias: float = 1e-8

    def __post_init__(self):
        if min(self.acc, self.gyro, self.acc_bias, self.gyro_bias) < 0:
            raise ValueError("process noise densities must be non-negative")

    @property
    def diag(self) -> np.ndarray:
        return np.repeat([self.acc, self.gyro, self.acc_bias, self.gyro_bias], 3)

    @property
    def W(self) -> np.ndarray:
        return np.diag(self.diag)

    @classmethod
    def from_noise_config(cls, noise: NoiseConfig, dt: float) -> "ProcessNoise":
        """Densities matching a simulator noise config sampled every ``dt`` seconds."""
        return cls(noise.sigma_a**2 * dt, noise.sigma_g**2 * dt, noise.sigma_ba**2, noise.sigma_bg**2)


def _step(x: NavState, gyro, accel, dt: float, linearize: bool):
    w_dt = (np.asarray(gyro, dtype=float) - x.bg) * dt
    dR = geometry.exp_map(w_dt)
    R_next = x.R @ dR
    Rf = x.R @ (np.asarray(accel, dtype=float) - x.ba)
    acc_w = Rf + GRAVITY
    x_next = NavState._raw(R_next, x.v + acc_w * dt, x.p + x.v * dt + 0.5 * acc_w * dt * dt, x.ba, x.bg)
    if not linearize:
        return x_next, None, None

    S = geometry.hat(Rf)
    A = np.eye(15)
    A[TH, BG] = -R_next @ geometry.right_jacobian(w_dt) * dt
    A[VEL, TH] = -S * dt
    A[VEL, BA] = -x.R * dt
    A[POS, TH] = -0.5 * S * dt * dt
    A[POS, VEL] = _I3 * dt
    A[POS, BA] = -0.5 * x.R * dt * dt

    B = np.zeros((15, 12))
    B[VEL, 0:3] = x.R
    B[POS, 0:3] = 0.5 * dt * x.R
    B[TH, 3:6] = R_next
    B[BA, 6:9] = _I3
    B[BG, 9:12] = _I3
    return x_next, A, B


def propagate_mean(x: NavState, gyro, accel, dt: float) -> NavState:
    return _step(x, gyro, accel, dt, False)[0]


def error_transition(x: NavState, gyro, accel, dt: float):
    """Transition ``A`` (15x15) and noise map ``B`` (15x12) for one step from ``x``."""
    _, A, B = _step(x, gyro, accel, dt, True)
    return A, B


def propagate(x: NavState, P, gyro, accel, dt: float, noise: ProcessNoise = ProcessNoise()):
    """One IMU step of mean and covariance.

    Raises
    ------
    ValueError
        On non-finite IMU data or ``dt`` outside ``(0, 0.05]``.
    """
    gyro = np.asarray(gyro, dtype=float)
    accel = np.asarray(accel, dtype=float)
    if not (np.isfinite(gyro).all() and np.isfinite(accel).all()):
        raise ValueError("non-finite IMU measurement")
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt={dt} outside (0, 0.05] s")
    x_next, A, B = _step(x, gyro, accel, dt, True)
    P_next = A @ P @ A.T + (B * (noise.diag * dt)) @ B.T
    return x_next, 0.5 * (P_next + P_next.T)


def velocity_jacobian(x: NavState) -> np.ndarray:
    """Jacobian of ``R^T v`` with respect to the error state (3x15)."""
    H = np.zeros((3, 15))
    H[:, TH] = x.R.T @ geometry.hat(x.v)
    H[:, VEL] = x.R.T
    return H


def update_velocity(x: NavState, P, v_meas, Sigma, gate: float | None = CHI2_3_999):
    """Kalman update with a body-frame velocity reading and its covariance.

    ``Sigma`` may be a 3-vector of variances or a 3x3 matrix. The covariance
    uses the Joseph form. Pass ``gate=None`` to disable innovation gating.

    Raises
    ------
    InnovationGateRejected
        If the Mahalanobis distance of the innovation exceeds ``gate``.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim == 1:
        Sigma = np.diag(Sigma)
    if np.any(np.diag(Sigma) <= 0):
        raise ValueError("measurement variances must be positive")
    H = velocity_jacobian(x)
    y = np.asarray(v_meas, dtype=float) - x.R.T @ x.v
    S = H @ P @ H.T + Sigma
    S_inv = np.linalg.inv(S)
    d2 = float(y @ S_inv @ y)
    if gate is not None and d2 > gate:
        raise InnovationGateRejected(d2, gate)
    K = P @ H.T @ S_inv
    IKH = np.eye(15) - K @ H
    P_new = IKH @ P @ IKH.T + K @ Sigma @ K.T
    return inject(x, K @ y), 0.5 * (P_new + P_new.T)


def nees(x_true: NavState, x_est: NavState, P) -> float:
    """Normalized estimation error squared."""
    e = state_error(x_true, x_est)
    return float(e @ np.linalg.solve(P, e))


def attitude_from_accel(accel) -> np.ndarray:
    """Roll and pitch from a (quasi-static) specific-force reading, zero yaw."""
    f = np.asarray(accel, dtype=float)
    f = f / np.linalg.norm(f)
    roll = np.arctan2(f[1], f[2])
    pitch = np.arcsin(np.clip(-f[0], -1.0, 1.0))
    cr, sr, cp, sp = np.cos(roll), np.sin(roll), np.cos(pitch), np.sin(pitch)
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Ry @ Rx


# -- predictors -------------------------------------------------------------


class PredictorError(AeroIOError):
    """A velocity source could not produce a reading; the update is skipped."""


class VelocityPredictor:
    """Source of body-frame velocity readings for :func:`run_filter`.

    ``window`` is the number of frames that must be buffered before the first
    reading. :meth:`observe` is called once per frame in order.
    """

    window: int = 1

    def reset(self, seq: SequenceLog) -> None:
        self.seq = seq

    def observe(self, k: int) -> None:
        pass

    def predict(self, k: int, x: NavState, P) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class TruthVelocityPredictor(VelocityPredictor):
    """Ground-truth body velocity plus Gaussian noise with the reported variance."""

    def __init__(self, variance=(1e-4, 1e-4, 1e-4), seed: int = 0, window: int = 1):
        self.variance = np.asarray(variance, dtype=float) * np.ones(3)
        self.seed = seed
        self.window = window

    def reset(self, seq):
        if seq.truth is None:
            raise ValueError("truth predictor needs a sequence with ground truth")
        super().reset(seq)
        self._rng = np.random.default_rng(self.seed)
        self._vb = seq.truth.body_velocity

    def predict(self, k, x, P):
        return self._vb[k] + np.sqrt(self.variance) * self._rng.standard_normal(3), self.variance.copy()


class AeroInversePredictor(VelocityPredictor):
    """Analytic inversion of the drag model on bias-corrected, averaged readings.

    Variance per axis is the accelerometer variance (white noise averaged over
    ``n_average`` frames plus the filter's accelerometer-bias variance) mapped
    through the local drag slope.
    """

    def __init__(self, coefficients, sigma_a: float = 0.05, n_average: int = 5, with_coriolis: bool = False,
                 min_variance: float = 1e-6):
        self.coefficients = coefficients
        self.sigma_a = sigma_a
        self.n_average = n_average
        self.with_coriolis = with_coriolis
        self.min_variance = min_variance
        self.window = n_average

    def predict(self, k, x, P):
        from .aerodynamics import invert_velocity

        sl = slice(k - self.n_average + 1, k + 1)
        accel = self.seq.accel[sl].mean(axis=0) - x.ba
        gyro = self.seq.gyro[sl].mean(axis=0) - x.bg
        w2 = self.seq.omega_m_sq[sl].mean()
        try:
            v = invert_velocity(accel, gyro, w2, self.coefficients, self.with_coriolis)
        except (ValueError, AeroIOError) as exc:
            raise PredictorError(str(exc)) from exc
        lin, quad = self.coefficients.axis_terms(w2)
        slope = lin + 2.0 * quad * np.abs(v)
        var_a = self.sigma_a**2 / self.n_average + np.diag(P)[BA]
        return v, np.maximum(var_a / slope**2, self.min_variance)


# -- filter driver ----------------------------------------------------------


@dataclass
class FilterConfig:
    update_rate: float = 20.0
    process_noise: ProcessNoise = field(default_factory=ProcessNoise)
    init: str = "accel"  # or "truth"
    p0_attitude: float = 1e-2
    p0_velocity: float = 1e-1
    p0_position: float = 1e-4
    p0_acc_bias: float = 1e-3
    p0_gyro_bias: float = 1e-4
    gate: float | None = CHI2_3_999

    def initial_covariance(self) -> np.ndarray:
        return np.diag(np.repeat(
            [self.p0_attitude, self.p0_velocity, self.p0_position, self.p0_acc_bias, self.p0_gyro_bias], 3))


@dataclass
class FilterResult:
    t: np.ndarray
    R: np.ndarray
    v: np.ndarray
    p: np.ndarray
    ba: np.ndarray
    bg: np.ndarray
    P: np.ndarray
    n_updates: int = 0
    n_skipped: int = 0

    def __len__(self):
        return len(self.t)

    def state(self, k) -> NavState:
        return NavState(self.R[k], self.v[k], self.p[k], self.ba[k], self.bg[k])

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diagonal(self.P, axis1=1, axis2=2), 0.0))


def initial_state(seq: SequenceLog, cfg: FilterConfig) -> NavState:
    if cfg.init == "truth":
        if seq.truth is None:
            raise ValueError("init='truth' needs ground truth in the sequence")
        return NavState(seq.truth.R[0].copy(), seq.truth.v[0].copy(), seq.truth.p[0].copy())
    if cfg.init == "accel":
        return NavState(attitude_from_accel(seq.accel[0]), np.zeros(3), np.zeros(3))
    raise ValueError(f"unknown init mode {cfg.init!r}")


def run_filter(seq: SequenceLog, predictor: VelocityPredictor | None = None, cfg: FilterConfig | None = None,
               x0: NavState | None = None, P0=None) -> FilterResult:
    """Propagate at IMU rate and apply velocity updates at ``cfg.update_rate``.

    Updates start once ``predictor.window`` frames are buffered. Predictor
    failures and gate rejections skip the update and are logged.
    """
    cfg = cfg or FilterConfig()
    n = len(seq)
    x = x0.copy() if x0 is not None else initial_state(seq, cfg)
    P = np.array(P0, dtype=float) if P0 is not None else cfg.initial_covariance()
    every = 0
    if predictor is not None:
        predictor.reset(seq)
        if cfg.update_rate > 0:
            every = max(1, int(round(1.0 / (cfg.update_rate * seq.dt))))

    out = FilterResult(seq.t.copy(), np.empty((n, 3, 3)), np.empty((n, 3)), np.empty((n, 3)),
                       np.empty((n, 3)), np.empty((n, 3)), np.empty((n, 15, 15)))
    for k in range(n):
        if k > 0:
            x, P = propagate(x, P, seq.gyro[k - 1], seq.accel[k - 1], seq.t[k] - seq.t[k - 1], cfg.process_noise)
            if k % 100 == 0 and geometry.orthogonality_residual(x.R) > 1e-9:
                x.R = geometry.orthonormalize(x.R)
        if predictor is not None:
            predictor.observe(k)
            if every and k + 1 >= predictor.window and k % every == 0:
                try:
                    v_meas, var = predictor.predict(k, x, P)
                    x, P = update_velocity(x, P, v_meas, var, cfg.gate)
                    out.n_updates += 1
                except (PredictorError, InnovationGateRejected) as exc:
                    out.n_skipped += 1
                    logger.debug("update skipped at t=%.3f: %s", seq.t[k], exc)
        out.R[k], out.v[k], out.p[k], out.ba[k], out.bg[k], out.P[k] = x.R, x.v, x.p, x.ba, x.bg, P
    if out.n_skipped:
        logger.info("%d of %d updates skipped", out.n_skipped, out.n_updates + out.n_skipped)
    return out
