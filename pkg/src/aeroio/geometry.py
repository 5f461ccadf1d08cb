"""SO(3) helpers: hat map, exponential and logarithm, right Jacobian.

Rotations are plain 3x3 ``numpy`` arrays. Rotation vectors are in radians.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

_SMALL_ANGLE = 1e-6
ORTHO_TOL = 1e-6


def hat(v) -> np.ndarray:
    """Cross-product matrix: ``hat(v) @ w == np.cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S) -> np.ndarray:
    """Inverse of :func:`hat` (uses the antisymmetric part of ``S``)."""
    S = np.asarray(S, dtype=float)
    return 0.5 * np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]])


def exp_map(theta) -> np.ndarray:
    """Rotation matrix for the rotation vector ``theta`` (Rodrigues)."""
    theta = np.asarray(theta, dtype=float)
    K = hat(theta)
    angle = float(np.linalg.norm(theta))
    if angle < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / angle**2
    return np.eye(3) + a * K + b * K @ K


def orthogonality_residual(R) -> float:
    R = np.asarray(R, dtype=float)
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return orthogonality_residual(R) <= tol and abs(np.linalg.det(R) - 1.0) <= tol


def log_map(R) -> np.ndarray:
    """Rotation vector of ``R`` with norm in ``[0, pi]``.

    At exactly ``pi`` the axis is ambiguous up to sign; the returned axis has
    its largest-magnitude component positive.

    Raises
    ------
    ValueError
        If ``R`` is not orthonormal to within ``1e-6``.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError("log_map expects a finite 3x3 matrix")
    if orthogonality_residual(R) > ORTHO_TOL or np.linalg.det(R) < 0:
        raise ValueError("log_map input is not a rotation matrix")

    w = vee(R)  # sin(angle) * axis
    s = float(np.linalg.norm(w))
    c = 0.5 * (np.trace(R) - 1.0)
    angle = float(np.arctan2(s, c))

    if angle < _SMALL_ANGLE:
        return w * (1.0 + angle**2 / 6.0)
    if angle < 0.5 * np.pi:
        return w * (angle / s)

    # Near pi the antisymmetric part vanishes; recover the axis from the
    # symmetric part, (R + R^T)/2 - cos(angle) I = (1 - cos(angle)) u u^T.
    B = 0.5 * (R + R.T) - c * np.eye(3)
    k = int(np.argmax(np.diag(B)))
    u = B[:, k] / np.sqrt(B[k, k])
    u /= np.linalg.norm(u)
    d = float(u @ w)
    if abs(d) > 1e-12:
        if d < 0:
            u = -u
    elif u[int(np.argmax(np.abs(u)))] < 0:
        u = -u
    return angle * u


def right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of SO(3): ``Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    K = hat(phi)
    angle = float(np.linalg.norm(phi))
    if angle < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    a = (1.0 - np.cos(angle)) / angle**2
    b = (angle - np.sin(angle)) / angle**3
    return np.eye(3) - a * K + b * K @ K


def orthonormalize(R) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


def to_quaternion(R) -> np.ndarray:
    """Scalar-first unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    x, y, z, w = _ScipyRotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
    q = np.array([w, x, y, z])
    return -q if w < 0 else q


def from_quaternion(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return _ScipyRotation.from_quat([x, y, z, w]).as_matrix()


def rotation_from_z_yaw(z_axis, yaw: float) -> np.ndarray:
    """Rotation whose third column is ``z_axis`` (normalized) with heading ``yaw``.

    Yaw follows the usual flatness construction: the body x axis is the
    projection of ``(cos yaw, sin yaw, 0)`` onto the plane normal to ``z_axis``.
    """
    b3 = np.asarray(z_axis, dtype=float)
    b3 = b3 / np.linalg.norm(b3)
    xc = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    b2 = np.cross(b3, xc)
    b2 /= np.linalg.norm(b2)
    b1 = np.cross(b2, b3)
    return np.column_stack([b1, b2, b3])


def rotations_from_z_yaw(z_axes, yaw) -> np.ndarray:
    """Batched :func:`rotation_from_z_yaw` over ``(N, 3)`` axes and ``(N,)`` yaws."""
    b3 = np.asarray(z_axes, dtype=float)
    b3 = b3 / np.linalg.norm(b3, axis=1, keepdims=True)
    yaw = np.asarray(yaw, dtype=float)
    xc = np.stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)], axis=1)
    b2 = np.cross(b3, xc)
    b2 /= np.linalg.norm(b2, axis=1, keepdims=True)
    b1 = np.cross(b2, b3)
    return np.stack([b1, b2, b3], axis=2)


def log_map_many(R) -> np.ndarray:
    """Batched :func:`log_map` for an ``(N, 3, 3)`` stack (no orthogonality check)."""
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.stack([R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=1)
    s = np.linalg.norm(w, axis=1)
    c = 0.5 * (np.trace(R, axis1=1, axis2=2) - 1.0)
    angle = np.arctan2(s, c)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(angle < _SMALL_ANGLE, 1.0 + angle**2 / 6.0, angle / s)
    out = w * scale[:, None]
    for i in np.flatnonzero(angle >= 0.5 * np.pi):
        out[i] = log_map(R[i])
    return out
