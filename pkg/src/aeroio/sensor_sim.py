"""Synthetic quadrotor flights with IMU and rotor-speed telemetry.

Trajectories are sums of sinusoids per world axis, so position, velocity and
acceleration are available in closed form. Sensor synthesis has two modes:

``"model"`` (default)
    The attitude is re-solved so the kinematic specific force ``R^T (a - g)``
    reproduces the rotor-drag model exactly; accelerometer readings then
    satisfy the drag model *and* integrate back to the trajectory.
``"kinematic"``
    Thrust points along ``a - g`` and the accelerometer reads ``R^T (a - g)``;
    the lateral drag relation does not hold (model-mismatch testing).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import geometry
from .aerodynamics import AeroCoefficients, BodyKinematics, coriolis, predict_specific_force
from .exceptions import MonotonicityViolation, ThrustInfeasible

GRAVITY = np.array([0.0, 0.0, -9.81])
TRAJECTORY_KINDS = ("hover", "circle", "figure_eight", "updown_circle", "updown_eight", "random_smooth")
MIN_SAMPLE_RATE = 50.0


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "circle"
    duration: float = 10.0
    sample_rate: float = 200.0
    radius: float = 2.0
    period: float = 8.0
    height: float = 1.0
    vertical_amplitude: float = 0.5
    vertical_period: float = 4.0
    speed: float = 2.0  # random_smooth: RMS horizontal speed (m/s)
    vertical_speed: float = 0.6  # random_smooth: RMS vertical speed (m/s)
    yaw_amplitude: float = math.radians(30.0)  # random_smooth only, capped at 45 deg
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}; expected one of {TRAJECTORY_KINDS}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if self.period <= 0 or self.vertical_period <= 0:
            raise ValueError("periods must be positive")

    @classmethod
    def from_mapping(cls, mapping) -> "TrajectorySpec":
        kwargs = {}
        for f in cls.__dataclass_fields__.values():
            if f.name in mapping:
                raw = mapping[f.name]
                kwargs[f.name] = raw if f.type == "str" else (int(raw) if f.type == "int" else float(raw))
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown trajectory keys: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class NoiseConfig:
    """White-noise std per sample and bias random-walk std per sqrt(s)."""

    sigma_g: float = 0.0
    sigma_a: float = 0.0
    sigma_bg: float = 0.0
    sigma_ba: float = 0.0
    initial_bias_g: tuple = (0.0, 0.0, 0.0)
    initial_bias_a: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_g, self.sigma_a, self.sigma_bg, self.sigma_ba) < 0:
            raise ValueError("noise standard deviations must be non-negative")
        object.__setattr__(self, "initial_bias_g", tuple(float(x) for x in self.initial_bias_g))
        object.__setattr__(self, "initial_bias_a", tuple(float(x) for x in self.initial_bias_a))
        if len(self.initial_bias_g) != 3 or len(self.initial_bias_a) != 3:
            raise ValueError("initial biases must have three components")

    @classmethod
    def from_mapping(cls, mapping) -> "NoiseConfig":
        kwargs = {}
        for key, raw in mapping.items():
            if key in ("initial_bias_g", "initial_bias_a"):
                kwargs[key] = tuple(float(x) for x in str(raw).replace(" ", "").split(","))
            elif key == "seed":
                kwargs[key] = int(raw)
            elif key in cls.__dataclass_fields__:
                kwargs[key] = float(raw)
            else:
                raise ValueError(f"unknown noise key {key!r}")
        return cls(**kwargs)


@dataclass(frozen=True)
class GroundTruthState:
    t: float
    R: np.ndarray
    p: np.ndarray
    v: np.ndarray
    omega_body: np.ndarray
    a_world: np.ndarray


@dataclass
class GroundTruth:
    """Time-ordered ground-truth track stored column-wise."""

    t: np.ndarray
    R: np.ndarray  # (N, 3, 3)
    p: np.ndarray
    v: np.ndarray
    omega_body: np.ndarray
    a_world: np.ndarray
    yaw: np.ndarray | None = None

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> GroundTruthState:
        return GroundTruthState(float(self.t[i]), self.R[i], self.p[i], self.v[i], self.omega_body[i], self.a_world[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def body_velocity(self) -> np.ndarray:
        return np.einsum("nji,nj->ni", self.R, self.v)


@dataclass(frozen=True)
class SensorFrame:
    t: float
    gyro: np.ndarray
    accel: np.ndarray
    rotor: np.ndarray


@dataclass
class SequenceLog:
    """Sensor stream plus the ground truth sharing its timeline."""

    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    rotor: np.ndarray
    truth: GroundTruth | None = None
    bias_g: np.ndarray | None = None
    bias_a: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if self.t.ndim != 1 or len(self.t) == 0:
            raise ValueError("sequence needs at least one timestamp")
        bad = np.flatnonzero(np.diff(self.t) <= 0)
        if bad.size:
            raise MonotonicityViolation(f"timestamps not strictly increasing at index {bad[0] + 1}")
        if np.any(self.rotor < 0):
            raise ValueError("rotor speeds must be non-negative")

    def __len__(self):
        return len(self.t)

    def frame(self, i) -> SensorFrame:
        return SensorFrame(float(self.t[i]), self.gyro[i], self.accel[i], self.rotor[i])

    def frames(self):
        return (self.frame(i) for i in range(len(self)))

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t))) if len(self.t) > 1 else 0.0

    @property
    def omega_m_sq(self) -> np.ndarray:
        return np.mean(self.rotor**2, axis=1)

    @property
    def coefficients(self) -> AeroCoefficients | None:
        keys = {k[5:]: v for k, v in self.metadata.items() if k.startswith("aero.")}
        return AeroCoefficients.from_mapping(keys) if keys else None

    @property
    def coriolis(self) -> bool:
        return str(self.metadata.get("coriolis", "0")).lower() in ("1", "true", "yes")


class Trajectory:
    """Closed-form position/velocity/acceleration from per-axis sinusoids.

    ``terms[axis]`` is an ``(n, 3)`` array of ``(amplitude, angular_freq, phase)``
    contributing ``amplitude * sin(angular_freq * t + phase)``.
    """

    def __init__(self, offset, terms, yaw_terms=None):
        self.offset = np.asarray(offset, dtype=float)
        self.terms = [np.asarray(t, dtype=float).reshape(-1, 3) for t in terms]
        self.yaw_terms = np.zeros((0, 3)) if yaw_terms is None else np.asarray(yaw_terms, dtype=float).reshape(-1, 3)

    @staticmethod
    def _eval(terms, t, order):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for amp, w, ph in terms:
            arg = w * t + ph
            if order == 0:
                out += amp * np.sin(arg)
            elif order == 1:
                out += amp * w * np.cos(arg)
            else:
                out -= amp * w * w * np.sin(arg)
        return out

    def position(self, t):
        return np.stack([self.offset[i] + self._eval(self.terms[i], t, 0) for i in range(3)], axis=-1)

    def velocity(self, t):
        return np.stack([self._eval(self.terms[i], t, 1) for i in range(3)], axis=-1)

    def acceleration(self, t):
        return np.stack([self._eval(self.terms[i], t, 2) for i in range(3)], axis=-1)

    def yaw(self, t):
        return self._eval(self.yaw_terms, t, 0)

    @classmethod
    def from_spec(cls, spec: TrajectorySpec) -> "Trajectory":
        W = 2 * np.pi / spec.period
        Wz = 2 * np.pi / spec.vertical_period
        r, h = spec.radius, spec.height
        empty = np.zeros((0, 3))
        updown = [(spec.vertical_amplitude, Wz, 0.0)]
        if spec.kind == "hover":
            return cls([0.0, 0.0, h], [empty, empty, empty])
        if spec.kind in ("circle", "updown_circle"):
            xy = [[(r, W, np.pi / 2)], [(r, W, 0.0)]]
            return cls([0.0, 0.0, h], xy + [updown if spec.kind == "updown_circle" else empty])
        if spec.kind in ("figure_eight", "updown_eight"):
            xy = [[(r, W, 0.0)], [(r / 2, 2 * W, 0.0)]]
            return cls([0.0, 0.0, h], xy + [updown if spec.kind == "updown_eight" else empty])

        rng = np.random.default_rng(spec.seed)
        terms = []
        for axis in range(3):
            periods = rng.uniform(2.0, 20.0, 5)
            w = 2 * np.pi / periods
            vel_amp = rng.normal(size=5)
            phase = rng.uniform(0, 2 * np.pi, 5)
            target = spec.speed / np.sqrt(2) if axis < 2 else spec.vertical_speed
            vel_amp *= target / np.sqrt(0.5 * np.sum(vel_amp**2))  # RMS of a sum of sinusoids
            terms.append(np.column_stack([vel_amp / w, w, phase]))
        yaw_amp = min(abs(spec.yaw_amplitude), np.pi / 4)
        yaw_terms = [(yaw_amp, 2 * np.pi / rng.uniform(8.0, 20.0), rng.uniform(0, 2 * np.pi))]
        return cls([0.0, 0.0, h], terms, yaw_terms)


def _rotations(f_world, yaw):
    return geometry.rotations_from_z_yaw(f_world, yaw)


def _body_rates(R, dt):
    """Forward-difference body rates so that ``R[k+1] = R[k] Exp(omega[k] dt)``."""
    n = len(R)
    omega = np.zeros((n, 3))
    if n > 1:
        omega[:-1] = geometry.log_map_many(np.einsum("nji,njk->nik", R[:-1], R[1:])) / dt
        omega[-1] = omega[-2]
    return omega


def generate_trajectory(spec: TrajectorySpec) -> GroundTruth:
    """Sample the analytic trajectory with a thrust-aligned attitude.

    ``a_world[k]`` is the mean acceleration over ``[t_k, t_k + dt]``, which
    differs from the instantaneous value by ``O(dt)``.

    Raises
    ------
    ValueError
        If the sample rate is below 50 Hz.
    """
    if spec.sample_rate < MIN_SAMPLE_RATE:
        raise ValueError(f"sample_rate {spec.sample_rate} Hz below minimum {MIN_SAMPLE_RATE} Hz")
    traj = Trajectory.from_spec(spec)
    n = int(round(spec.duration * spec.sample_rate))
    dt = 1.0 / spec.sample_rate
    t = np.arange(n) * dt
    p, v = traj.position(t), traj.velocity(t)
    # one-step velocity increment rather than the instantaneous acceleration, so
    # that v[k+1] = v[k] + a[k] dt holds exactly, as in a strapdown step
    a = (traj.velocity(t + dt) - v) / dt
    yaw = traj.yaw(t)
    R = _rotations(a - GRAVITY, yaw)
    return GroundTruth(t, R, p, v, _body_rates(R, dt), a, yaw)


def _solve_model_attitude(truth: GroundTruth, c: AeroCoefficients, tol: float = 1e-12, max_iter: int = 100):
    """Tilt the thrust axis until ``R^T (a - g)`` matches the drag model on x/y.

    Returns the rotations and the mean squared rotor speeds.
    """
    f_w = truth.a_world - GRAVITY
    yaw = truth.yaw if truth.yaw is not None else np.zeros(len(truth))
    R = truth.R.copy()
    zero = np.zeros((len(truth), 3))
    for _ in range(max_iter):
        v_b = np.einsum("nji,nj->ni", R, truth.v)
        f_b = np.einsum("nji,nj->ni", R, f_w)
        w2 = _thrust_from_z(f_b[:, 2], v_b[:, 2], c)
        target = predict_specific_force(BodyKinematics(v_b, zero, np.maximum(w2, 0.0)), c, False)
        err = np.max(np.abs(f_b[:, :2] - target[:, :2]))
        if err < tol:
            return R, w2
        R = _rotations(f_w - target[:, :1] * R[:, :, 0] - target[:, 1:2] * R[:, :, 1], yaw)
    raise ThrustInfeasible(f"attitude solve did not converge (residual {err:.3g} m/s^2)")


def _thrust_from_z(f_z, v_z, c: AeroCoefficients):
    return (f_z + c.k5 * v_z + c.k6 * v_z * np.abs(v_z)) / (4 * c.alpha)


def synthesize_sensors(truth: GroundTruth, c: AeroCoefficients, noise: NoiseConfig = NoiseConfig(),
                       mode: str = "model", with_coriolis: bool = False,
                       spec: TrajectorySpec | None = None) -> SequenceLog:
    """Produce IMU and rotor readings for ``truth``.

    In ``"model"`` mode the returned log carries a copy of ``truth`` whose
    attitude and body rates have been re-solved (see module docstring).
    ``with_coriolis`` adds ``-2 omega x v`` on top of the reading; the
    accelerometer then no longer integrates exactly back to the trajectory.

    Raises
    ------
    ThrustInfeasible
        If the maneuver requires a negative mean squared rotor speed.
    """
    if len(truth) == 0:
        raise ValueError("empty ground truth")
    if mode not in ("model", "kinematic"):
        raise ValueError(f"unknown synthesis mode {mode!r}")
    n = len(truth)
    dt = float(np.median(np.diff(truth.t))) if n > 1 else 0.0

    if mode == "model":
        R, w2 = _solve_model_attitude(truth, c)
        truth = replace(truth, R=R, omega_body=_body_rates(R, dt) if n > 1 else truth.omega_body)
    else:
        f_z = np.einsum("ni,ni->n", truth.R[:, :, 2], truth.a_world - GRAVITY)
        w2 = _thrust_from_z(f_z, truth.body_velocity[:, 2], c)
    if np.any(w2 < 0):
        k = int(np.flatnonzero(w2 < 0)[0])
        raise ThrustInfeasible(f"negative thrust required at t={truth.t[k]:.3f} s")

    if mode == "model":
        clean_accel = predict_specific_force(BodyKinematics(truth.body_velocity, truth.omega_body, w2), c, False)
    else:
        clean_accel = np.einsum("nji,nj->ni", truth.R, truth.a_world - GRAVITY)
    if with_coriolis:
        clean_accel = clean_accel + coriolis(truth.omega_body, truth.body_velocity)

    rng = np.random.default_rng(noise.seed)
    delta = rng.uniform(-0.02, 0.02, (n, 4))
    rotor = np.sqrt(w2)[:, None] * (1.0 + delta)
    ms = np.mean(rotor**2, axis=1)
    rotor *= np.sqrt(np.divide(w2, ms, out=np.ones_like(w2), where=ms > 0))[:, None]

    def walk(b0, sigma):
        steps = sigma * np.sqrt(dt) * rng.standard_normal((n, 3))
        steps[-1] = 0.0
        return np.asarray(b0) + np.vstack([np.zeros(3), np.cumsum(steps[:-1], axis=0)])

    bias_g = walk(noise.initial_bias_g, noise.sigma_bg)
    bias_a = walk(noise.initial_bias_a, noise.sigma_ba)
    gyro = truth.omega_body + bias_g + noise.sigma_g * rng.standard_normal((n, 3))
    accel = clean_accel + bias_a + noise.sigma_a * rng.standard_normal((n, 3))

    meta = {"mode": mode, "coriolis": "1" if with_coriolis else "0", "unit": "rad/s"}
    meta.update({f"aero.{k}": repr(v) for k, v in asdict(c).items()})
    for k, v in asdict(noise).items():
        meta[f"noise.{k}"] = ",".join(repr(x) for x in v) if isinstance(v, tuple) else repr(v)
    if spec is not None:
        meta.update({f"trajectory.{k}": (v if isinstance(v, str) else repr(v)) for k, v in asdict(spec).items()})
    return SequenceLog(truth.t.copy(), gyro, accel, rotor, truth, bias_g, bias_a, meta)


def simulate(spec: TrajectorySpec, c: AeroCoefficients, noise: NoiseConfig = NoiseConfig(),
             mode: str = "model", with_coriolis: bool = False) -> SequenceLog:
    """Convenience wrapper: trajectory generation followed by sensor synthesis."""
    return synthesize_sensors(generate_trajectory(spec), c, noise, mode, with_coriolis, spec)
