"""Rotor-drag specific-force model, its inverse, and coefficient identification.

Per body axis the accelerometer sees

    a_x = -lambda_x * w2 * v_x - k1 * v_x - k2 * v_x * |v_x|
    a_y = -lambda_y * w2 * v_y - k3 * v_y - k4 * v_y * |v_y|
    a_z = 4 * alpha * w2       - k5 * v_z - k6 * v_z * |v_z|

with ``w2`` the mean squared rotor speed, plus an optional ``-2 omega x v``
rotating-frame term. ``literal_square_drag=True`` swaps ``v*|v|`` for ``v**2``.

All functions broadcast over leading dimensions: vectors are ``(..., 3)`` and
``omega_m_sq`` is ``(...)``.
"""
from __future__ import annotations

import configparser
import io
import logging
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np
from scipy.optimize import nnls
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import Degenerate, NoRealRoot, RankDeficient
from ._validation import check_samples

logger = logging.getLogger(__name__)

COEFFICIENT_NAMES = ("k1", "k2", "k3", "k4", "k5", "k6", "lambda_x", "lambda_y", "alpha")
MAX_CONDITION = 1e10


@dataclass(frozen=True)
class AeroCoefficients:
    """Drag, induced-drag and thrust constants of the rotor-drag model.

    Linear drag ``k1, k3, k5`` in 1/s, quadratic drag ``k2, k4, k6`` in 1/m,
    induced drag ``lambda_x, lambda_y`` in s, thrust ``alpha`` in m per rad^2.
    """

    k1: float = 0.10
    k2: float = 0.02
    k3: float = 0.10
    k4: float = 0.02
    k5: float = 0.15
    k6: float = 0.03
    lambda_x: float = 2.5e-7
    lambda_y: float = 2.5e-7
    alpha: float = 2.5e-6

    def __post_init__(self):
        values = self.as_array()
        if not np.all(np.isfinite(values)):
            raise ValueError("aerodynamic coefficients must be finite")
        if np.any(values < 0):
            raise ValueError(f"aerodynamic coefficients must be non-negative: {self}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in COEFFICIENT_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> "AeroCoefficients":
        values = np.asarray(values, dtype=float).ravel()
        if values.size != len(COEFFICIENT_NAMES):
            raise ValueError(f"expected {len(COEFFICIENT_NAMES)} coefficients, got {values.size}")
        return cls(**{n: float(v) for n, v in zip(COEFFICIENT_NAMES, values)})

    @property
    def hover_omega_sq(self) -> float:
        """Mean squared rotor speed that balances gravity at rest."""
        return 9.81 / (4.0 * self.alpha)

    def axis_terms(self, omega_m_sq):
        """Per-axis ``(linear, quadratic)`` drag slopes, each shaped ``(..., 3)``."""
        w2 = np.asarray(omega_m_sq, dtype=float)
        lin = np.stack(
            np.broadcast_arrays(self.lambda_x * w2 + self.k1, self.lambda_y * w2 + self.k3, self.k5 + 0 * w2),
            axis=-1,
        )
        quad = np.broadcast_to(np.array([self.k2, self.k4, self.k6]), lin.shape)
        return lin, quad

    def to_ini(self, section: str = "aero") -> str:
        parser = configparser.ConfigParser()
        parser[section] = {k: repr(float(v)) for k, v in asdict(self).items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_mapping(cls, mapping) -> "AeroCoefficients":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown aero keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in mapping.items()})

    @classmethod
    def from_ini(cls, text: str, section: str = "aero") -> "AeroCoefficients":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        if section not in parser:
            raise ValueError(f"missing [{section}] section")
        return cls.from_mapping(dict(parser[section]))


@dataclass
class BodyKinematics:
    """Body-frame velocity (m/s), angular rate (rad/s) and mean squared rotor speed."""

    v: np.ndarray
    omega: np.ndarray
    omega_m_sq: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        self.omega_m_sq = np.asarray(self.omega_m_sq, dtype=float)
        if np.any(self.omega_m_sq < 0):
            raise ValueError("omega_m_sq must be non-negative")


def mean_sq_rotor_speed(w1, w2=None, w3=None, w4=None):
    """Mean of the squared rotor speeds.

    Accepts either four speeds or a single ``(..., 4)`` array.
    """
    if w2 is None:
        speeds = np.asarray(w1, dtype=float)
    else:
        speeds = np.stack(np.broadcast_arrays(*(np.asarray(w, dtype=float) for w in (w1, w2, w3, w4))), axis=-1)
    if speeds.shape[-1] != 4:
        raise ValueError("expected four rotor speeds")
    if np.any(speeds < 0):
        raise ValueError("rotor speeds must be non-negative")
    out = np.mean(speeds**2, axis=-1)
    return float(out) if out.ndim == 0 else out


def _drag(v, lin, quad, literal):
    sq = v * v if literal else v * np.abs(v)
    return -lin * v - quad * sq


def coriolis(omega, v):
    """Rotating-frame term ``-2 omega x v``."""
    return -2.0 * np.cross(omega, v)


def predict_specific_force(kin: BodyKinematics, c: AeroCoefficients, with_coriolis: bool = True,
                           literal_square_drag: bool = False) -> np.ndarray:
    """Noise- and bias-free accelerometer reading implied by the drag model."""
    lin, quad = c.axis_terms(kin.omega_m_sq)
    a = _drag(kin.v, lin, quad, literal_square_drag)
    a[..., 2] += 4.0 * c.alpha * kin.omega_m_sq
    if with_coriolis:
        a = a + coriolis(kin.omega, kin.v)
    return a


def _solve_axes(a_drag, lin, quad, literal):
    """Solve ``a_drag = -lin*v - quad*v|v|`` (or ``v**2``) element-wise."""
    a_drag = np.asarray(a_drag, dtype=float)
    if np.any((lin == 0) & (quad == 0)):
        raise Degenerate("velocity unobservable: all drag terms vanish on an axis")

    if not literal:
        mag = np.abs(a_drag)
        den = lin + np.sqrt(lin * lin + 4.0 * quad * mag)
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(den > 0, 2.0 * mag / den, 0.0)
        return -np.sign(a_drag) * s

    # quad * v^2 + lin * v + a = 0
    with np.errstate(invalid="ignore", divide="ignore"):
        linear_only = quad == 0
        disc = lin * lin - 4.0 * quad * a_drag
        if np.any(disc[~linear_only] < 0):
            raise NoRealRoot("negative discriminant in literal quadratic drag equation")
        sq = np.sqrt(np.where(linear_only, 0.0, disc))
        q = -0.5 * (lin + np.where(lin >= 0, 1.0, -1.0) * sq)
        r1 = np.where(q != 0, q / np.where(quad != 0, quad, 1.0), 0.0)
        r2 = np.where(q != 0, a_drag / np.where(q != 0, q, 1.0), -lin / np.where(quad != 0, quad, 1.0))
        want = -np.sign(a_drag)
        m1 = (np.sign(r1) == want) | (r1 == 0)
        m2 = (np.sign(r2) == want) | (r2 == 0)
        pick_r1 = np.where(m1 & ~m2, True, np.where(m2 & ~m1, False, np.abs(r1) <= np.abs(r2)))
        v = np.where(pick_r1, r1, r2)
        return np.where(linear_only, -a_drag / np.where(lin != 0, lin, 1.0), v)


def invert_velocity(a_meas, omega, omega_m_sq, c: AeroCoefficients, with_coriolis: bool = True,
                    literal_square_drag: bool = False, tol: float = 1e-10, max_iter: int = 50) -> np.ndarray:
    """Body velocity reproducing the (bias-free) accelerometer reading ``a_meas``.

    Raises
    ------
    Degenerate
        If every drag term vanishes on some axis.
    NoRealRoot
        If the literal-square form has no real solution, or the rotating-frame
        iteration fails to converge.
    """
    a_meas = np.asarray(a_meas, dtype=float)
    omega = np.asarray(omega, dtype=float)
    w2 = np.asarray(omega_m_sq, dtype=float)
    if np.any(w2 < 0):
        raise ValueError("omega_m_sq must be non-negative")
    lin, quad = c.axis_terms(w2)

    def solve(a):
        a_drag = a.copy()
        a_drag[..., 2] -= 4.0 * c.alpha * w2
        return _solve_axes(a_drag, lin, quad, literal_square_drag)

    v = solve(a_meas)
    if not with_coriolis or not np.any(omega):
        return v

    if literal_square_drag:
        for _ in range(max_iter):
            v_new = solve(a_meas - coriolis(omega, v))
            if np.max(np.abs(v_new - v)) < tol:
                return v_new
            v = v_new
        raise NoRealRoot("rotating-frame fixed-point iteration did not converge")

    # Newton on F(v) = drag(v) - 2 omega x v - a_drag. The Jacobian
    # -(diag(lin + 2 quad |v|) + 2 hat(omega)) is always invertible.
    kin_shape = v.shape
    v = v.reshape(-1, 3)
    a_flat = np.broadcast_to(a_meas, kin_shape).reshape(-1, 3)
    om = np.broadcast_to(omega, kin_shape).reshape(-1, 3)
    lin_f = np.broadcast_to(lin, kin_shape).reshape(-1, 3)
    quad_f = np.broadcast_to(quad, kin_shape).reshape(-1, 3)
    thrust = np.broadcast_to(4.0 * c.alpha * w2, kin_shape[:-1]).reshape(-1)

    def residual(v):
        r = _drag(v, lin_f, quad_f, False) + coriolis(om, v) - a_flat
        r[:, 2] += thrust
        return r

    eye = np.eye(3)
    hat_om = np.zeros((len(v), 3, 3))
    hat_om[:, 0, 1], hat_om[:, 0, 2] = -om[:, 2], om[:, 1]
    hat_om[:, 1, 0], hat_om[:, 1, 2] = om[:, 2], -om[:, 0]
    hat_om[:, 2, 0], hat_om[:, 2, 1] = -om[:, 1], om[:, 0]
    scale = 1.0 + np.abs(a_flat).max(axis=1)
    r = residual(v)
    for _ in range(max_iter):
        err = np.abs(r).max(axis=1)
        if np.all(err <= 1e-14 * scale):
            break
        J = -(eye * (lin_f + 2.0 * quad_f * np.abs(v))[:, None, :] + 2.0 * hat_om)
        step = np.linalg.solve(J, r[..., None])[..., 0]
        t = np.ones(len(v))
        norm0 = np.linalg.norm(r, axis=1)
        for _ in range(30):
            cand = v - t[:, None] * step
            r_c = residual(cand)
            bad = np.linalg.norm(r_c, axis=1) > norm0
            if not np.any(bad):
                break
            t = np.where(bad, 0.5 * t, t)
        v, r = cand, r_c
    else:
        if np.any(np.abs(r).max(axis=1) > 1e-9 * scale):
            raise NoRealRoot("rotating-frame Newton iteration did not converge")
    return v.reshape(kin_shape)


class FitResult(NamedTuple):
    coefficients: AeroCoefficients
    residual_rms: np.ndarray
    condition_number: float


def design_matrix(kin: BodyKinematics, literal_square_drag: bool = False) -> np.ndarray:
    """Rows ``3i..3i+2`` hold the x/y/z equations of sample ``i``.

    Columns follow ``COEFFICIENT_NAMES``.
    """
    v = kin.v.reshape(-1, 3)
    w2 = np.broadcast_to(kin.omega_m_sq, kin.v.shape[:-1]).reshape(-1)
    sq = v * v if literal_square_drag else v * np.abs(v)
    n = len(v)
    A = np.zeros((n, 3, 9))
    A[:, 0, 0], A[:, 0, 1], A[:, 0, 6] = -v[:, 0], -sq[:, 0], -w2 * v[:, 0]
    A[:, 1, 2], A[:, 1, 3], A[:, 1, 7] = -v[:, 1], -sq[:, 1], -w2 * v[:, 1]
    A[:, 2, 4], A[:, 2, 5], A[:, 2, 8] = -v[:, 2], -sq[:, 2], 4.0 * w2
    return A.reshape(3 * n, 9)


def fit_coefficients(accel, kin: BodyKinematics | None = None, with_coriolis: bool = True,
                     literal_square_drag: bool = False, max_condition: float = MAX_CONDITION) -> FitResult:
    """Least-squares identification of all nine coefficients.

    ``accel`` is ``(N, 3)`` with ``kin`` holding the matching kinematics, or a
    list of ``(a_meas, BodyKinematics)`` pairs with ``kin`` omitted. The
    reported condition number is that of the column-equilibrated design matrix.
    """
    if kin is None:
        accel, kin = check_samples(accel)
    accel = np.asarray(accel, dtype=float).reshape(-1, 3)
    if len(accel) < 9:
        raise ValueError(f"need at least 9 samples, got {len(accel)}")
    target = accel
    if with_coriolis:
        target = accel - coriolis(kin.omega.reshape(-1, 3), kin.v.reshape(-1, 3))

    A = design_matrix(kin, literal_square_drag)
    b = target.reshape(-1)
    col_norm = np.linalg.norm(A, axis=0)
    if np.any(col_norm == 0):
        raise RankDeficient("design matrix has an all-zero column (insufficient excitation)")
    As = A / col_norm
    cond = float(np.linalg.cond(As))
    if not np.isfinite(cond) or cond > max_condition:
        raise RankDeficient(f"design matrix condition number {cond:.3g} exceeds {max_condition:.3g}")

    xs, *_ = np.linalg.lstsq(As, b, rcond=None)
    if np.any(xs < 0):
        logger.info("unconstrained fit has negative coefficients; refitting with NNLS")
        xs, _ = nnls(As, b)
    x = xs / col_norm
    if x[8] <= 0:
        raise RankDeficient("thrust coefficient not identifiable (alpha <= 0)")
    resid = (b - A @ x).reshape(-1, 3)
    rms = np.sqrt(np.mean(resid**2, axis=0))
    return FitResult(AeroCoefficients.from_array(x), rms, cond)


def _split_features(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 7:
        raise ValueError(f"expected X of shape (n_samples, 7), got {X.shape}")
    return BodyKinematics(X[:, 0:3], X[:, 3:6], X[:, 6])


class AeroDragRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around the drag model.

    ``X`` columns are ``vx, vy, vz, wx, wy, wz, omega_m_sq`` (body frame);
    ``y`` is the bias-free accelerometer reading.
    """

    def __init__(self, with_coriolis=True, literal_square_drag=False, max_condition=MAX_CONDITION):
        self.with_coriolis = with_coriolis
        self.literal_square_drag = literal_square_drag
        self.max_condition = max_condition

    def fit(self, X, y):
        kin = _split_features(X)
        y = np.asarray(y, dtype=float)
        if y.shape != (len(kin.v), 3):
            raise ValueError(f"expected y of shape ({len(kin.v)}, 3), got {y.shape}")
        res = fit_coefficients(y, kin, self.with_coriolis, self.literal_square_drag, self.max_condition)
        self.coef_ = res.coefficients
        self.residual_rms_ = res.residual_rms
        self.condition_number_ = res.condition_number
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return predict_specific_force(_split_features(X), self.coef_, self.with_coriolis, self.literal_square_drag)

    def predict_velocity(self, accel, omega, omega_m_sq):
        """Invert the model: body velocity from bias-free accelerometer readings."""
        check_is_fitted(self, "coef_")
        return invert_velocity(accel, omega, omega_m_sq, self.coef_, self.with_coriolis, self.literal_square_drag)

    def score(self, X, y, sample_weight=None):
        from sklearn.metrics import r2_score

        return r2_score(y, self.predict(X), sample_weight=sample_weight, multioutput="uniform_average")
