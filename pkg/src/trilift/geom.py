"""Rotation and frame utilities shared by every other module.

Conventions (used everywhere in this package):
  - Quaternions are scalar-first ``[w, x, y, z]`` unit quaternions mapping
    body vectors into the inertial frame: ``v_world = R(q) @ v_body``.
  - Angular velocities are body-frame unless a function says otherwise.
  - The load frame has its origin at the load position and axes aligned
    with the inertial axes, so transforming into it is a pure translation.
  - The 6D rotation encoding is the first two columns of the rotation
    matrix, column-major: ``(R00, R10, R20, R01, R11, R21)``.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

_DEGENERATE_TOL = 1e-8


class DegenerateRotation(ValueError):
    """Raised when a 6D rotation encoding cannot be orthonormalized."""


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return q scaled to unit norm. Near-zero input falls back to identity."""
    q = np.asarray(q, dtype=np.float64)
    n = math.sqrt(float(q @ q))
    if n < 1e-12:
        return QUAT_IDENTITY.copy()
    return q / n


def quat_multiply(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """Hamilton product qa ⊗ qb (both scalar-first)."""
    w1, x1, y1, z1 = qa
    w2, x2, y2, z2 = qb
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion (body -> world)."""
    q = np.asarray(q, dtype=np.float64)
    n2 = float(q @ q)
    if abs(n2 - 1.0) > 1e-6:
        warnings.warn("quat_rotate received a non-unit quaternion; normalizing",
                      RuntimeWarning, stacklevel=2)
        q = quat_normalize(q)
    w = q[0]
    u = q[1:]
    v = np.asarray(v, dtype=np.float64)
    # Rodrigues form of the sandwich product q v q*
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion (body -> world)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion of a rotation matrix (Shepperd's method), w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)


def quat_to_rot6d(q: np.ndarray) -> np.ndarray:
    """First two rotation-matrix columns, column-major (6 scalars).

    Continuous in the rotation, so q and -q encode identically.
    """
    R = quat_to_matrix(q)
    return np.concatenate([R[:, 0], R[:, 1]])


def rot6d_to_matrix(r6: np.ndarray) -> np.ndarray:
    """Orthonormalize a 6D encoding into a rotation matrix by Gram-Schmidt.

    Raises DegenerateRotation when the first column is near zero or the
    columns are near parallel.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    a1 = r6[:3]
    a2 = r6[3:]
    n1 = np.linalg.norm(a1)
    if n1 < _DEGENERATE_TOL:
        raise DegenerateRotation("first column norm below tolerance")
    b1 = a1 / n1
    a2p = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(a2p)
    if n2 < _DEGENERATE_TOL:
        raise DegenerateRotation("columns are parallel within tolerance")
    b2 = a2p / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def rot6d_to_quat(r6: np.ndarray) -> np.ndarray:
    return matrix_to_quat(rot6d_to_matrix(r6))


def quat_from_axis_angle(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return QUAT_IDENTITY.copy()
    half = 0.5 * angle_rad
    return np.concatenate([[math.cos(half)], math.sin(half) * axis / n])


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    rv = np.asarray(rv, dtype=np.float64)
    angle = np.linalg.norm(rv)
    if angle < 1e-12:
        return quat_normalize(np.concatenate([[1.0], 0.5 * rv]))
    return quat_from_axis_angle(rv / angle, angle)


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of a unit quaternion, angle in [0, pi]."""
    q = np.asarray(q, dtype=np.float64)
    if q[0] < 0.0:
        q = -q
    vec = q[1:]
    s = np.linalg.norm(vec)
    if s < 1e-12:
        return 2.0 * vec
    angle = 2.0 * math.atan2(s, q[0])
    return vec / s * angle


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """ZYX euler angles (rad) to quaternion."""
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch)
    qx = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), roll)
    return quat_multiply(quat_multiply(qz, qy), qx)


def quat_to_euler(q: np.ndarray) -> tuple[float, float, float]:
    """(roll, pitch, yaw) in rad, ZYX convention."""
    w, x, y, z = q
    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    sp = 2 * (w * y - z * x)
    sp = max(-1.0, min(1.0, sp))
    pitch = math.asin(sp)
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return roll, pitch, yaw


def geodesic_deg(qa: np.ndarray, qb: np.ndarray) -> float:
    """Rotation angle in degrees between two unit quaternions, in [0, 180].

    Uses atan2 on the relative quaternion for accuracy near 0 and 180.
    """
    qe = quat_multiply(quat_conjugate(qa), np.asarray(qb, dtype=np.float64))
    s = np.linalg.norm(qe[1:])
    angle = 2.0 * math.atan2(s, abs(float(qe[0])))
    return math.degrees(angle)


def slerp(qa: np.ndarray, qb: np.ndarray, s: float) -> np.ndarray:
    """Spherical interpolation from qa (s=0) to qb (s=1), shortest arc."""
    qa = quat_normalize(qa)
    qb = quat_normalize(qb)
    if float(qa @ qb) < 0.0:
        qb = -qb
    rel = quat_multiply(quat_conjugate(qa), qb)
    rv = quat_to_rotvec(rel)
    return quat_multiply(qa, quat_from_rotvec(s * rv))


def to_load_frame(x: np.ndarray, load_p: np.ndarray) -> np.ndarray:
    """Express an inertial position in the load frame (pure translation)."""
    return np.asarray(x, dtype=np.float64) - np.asarray(load_p, dtype=np.float64)


def skew(v: np.ndarray) -> np.ndarray:
    """Matrix [v]x with [v]x @ w = v x w."""
    vx, vy, vz = v
    return np.array([
        [0.0, -vz, vy],
        [vz, 0.0, -vx],
        [-vy, vx, 0.0],
    ])


def integrate_quat(q: np.ndarray, omega_body: np.ndarray, dt: float) -> np.ndarray:
    """First-order quaternion integration with body rates, renormalized."""
    dq = 0.5 * quat_multiply(q, np.concatenate([[0.0], omega_body]))
    return quat_normalize(q + dq * dt)
