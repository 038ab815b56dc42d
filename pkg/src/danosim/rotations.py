"""Quaternion helpers.

Quaternions are (w, x, y, z) numpy arrays mapping body frame to world frame.
Rotation vectors (axis-angle products, rad) parameterize the local tangent
of orientation; perturbations compose on the right, q * exp(delta), so the
tangent lives in the body frame.
"""
from __future__ import annotations

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    """Exponential map of an axis-angle vector."""
    v = np.asarray(v, dtype=float)
    angle = float(np.linalg.norm(v))
    half = 0.5 * angle
    if angle > 1e-8:
        s = np.sin(half) / angle
    else:
        # second-order Taylor of sin(a/2)/a
        s = 0.5 - angle * angle / 48.0
    return np.array([np.cos(half), v[0] * s, v[1] * s, v[2] * s])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Logarithm map; returns the minimal-angle axis-angle vector."""
    if q[0] < 0.0:
        q = -q
    vec = q[1:]
    sin_half = float(np.linalg.norm(vec))
    if sin_half < 1e-12:
        return 2.0 * vec
    angle = 2.0 * np.arctan2(sin_half, q[0])
    return (angle / sin_half) * vec


def quat_difference_rotvec(q_from: np.ndarray, q_to: np.ndarray) -> np.ndarray:
    """Right (body-frame) tangent that carries q_from to q_to."""
    return quat_to_rotvec(quat_multiply(quat_conjugate(q_from), q_to))


def integrate_quat(q: np.ndarray, omega_body: np.ndarray, dt: float) -> np.ndarray:
    """Advance the orientation by one step of body-frame angular velocity."""
    return normalize_quat(quat_multiply(q, quat_from_rotvec(np.asarray(omega_body) * dt)))
