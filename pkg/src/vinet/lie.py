"""SO(3)/SE(3) math with analytic backward passes.

Rotations are stored as unit quaternions ``(w, x, y, z)`` with ``w >= 0``.
Tangent vectors of a pose are 6-vectors ``(dtheta, dt)``: the rotation is
perturbed on the right, ``q <- q * Exp(dtheta)``, and the translation
additively, ``t <- t + dt``. Every ``*_backward`` function maps a gradient
expressed in that output tangent to the gradient of the inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Half-angle (quaternion) and log branches.
SMALL_ANGLE = 1e-5
# Jacobian coefficients like (theta - sin theta)/theta^3 cancel badly well
# above SMALL_ANGLE, so they switch to their series earlier.
SERIES_ANGLE = 1e-2
NEAR_PI = 1e-6


class AngleNearPi(ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


class NonFiniteValue(ValueError):
    pass


def hat(omega):
    x, y, z = omega
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


# ---------------------------------------------------------------------------
# Scalar coefficient functions of the rotation angle.


def _coeffs(theta):
    """Return (A, B, C) = (sin t/t, (1-cos t)/t^2, (t-sin t)/t^3)."""
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0))
        b = 0.5 - t2 / 24.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0))
        c = 1.0 / 6.0 - t2 / 120.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0))
        return a, b, c
    s = math.sin(theta)
    half = math.sin(0.5 * theta)
    a = s / theta
    b = 2.0 * half * half / (theta * theta)
    c = (theta - s) / theta**3
    return a, b, c


def _coeff_derivs(theta):
    """Return (B'/t, C'/t), derivatives of B and C over theta."""
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        b1 = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0
        c1 = -1.0 / 60.0 + t2 / 1260.0 - t2 * t2 / 60480.0
        return b1, c1
    s = math.sin(theta)
    one_m_cos = 2.0 * math.sin(0.5 * theta) ** 2
    b1 = (theta * s - 2.0 * one_m_cos) / theta**4
    c1 = (theta * one_m_cos - 3.0 * (theta - s)) / theta**5
    return b1, c1


def _inv_left_jacobian_coeff(theta):
    """(1 - A/(2B)) / theta^2, the K^2 coefficient of V^-1."""
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    a, b, _ = _coeffs(theta)
    return (1.0 - a / (2.0 * b)) / (theta * theta)


# ---------------------------------------------------------------------------
# Quaternions.


def quat_mul(a, b):
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


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def canonical_quat(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    # leave already-unit input bit-exact so stored poses round-trip
    if abs(n - 1.0) > 1e-15:
        q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m):
    # Shepperd: pivot on the largest of (trace, diagonal) for stability.
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    k = int(np.argmax([tr, m[0, 0], m[1, 1], m[2, 2]]))
    if k == 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif k == 1:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif k == 2:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return canonical_quat(q)


def quat_exp(omega):
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return canonical_quat(np.concatenate([[1.0 - t2 / 8.0], (0.5 - t2 / 48.0) * omega]))
    half = 0.5 * theta
    return canonical_quat(np.concatenate([[math.cos(half)], (math.sin(half) / theta) * omega]))


def quat_log(q):
    q = canonical_quat(q)
    w = q[0]
    u = q[1:]
    s = float(np.linalg.norm(u))
    theta = 2.0 * math.atan2(s, w)
    if theta > math.pi - NEAR_PI:
        raise AngleNearPi(f"rotation angle {theta!r} is within {NEAR_PI} of pi")
    if s < SMALL_ANGLE:
        factor = 2.0 / w * (1.0 - s * s / (3.0 * w * w))
    else:
        factor = theta / s
    return factor * u


def quat_angle(q):
    """Geodesic rotation angle of ``q`` in [0, pi]."""
    q = canonical_quat(q)
    return 2.0 * math.atan2(float(np.linalg.norm(q[1:])), q[0])


def quat_grad_to_tangent(q, grad_q):
    """Pull an ambient quaternion gradient back to the right-tangent dtheta."""
    w = q[0]
    u = q[1:]
    return 0.5 * (-u * grad_q[0] + w * grad_q[1:] - np.cross(u, grad_q[1:]))


# ---------------------------------------------------------------------------
# SO(3).


def exp_so3(omega):
    omega = np.asarray(omega, dtype=float)
    if not np.all(np.isfinite(omega)):
        raise NonFiniteValue("exp_so3: non-finite rotation vector")
    theta = float(np.linalg.norm(omega))
    a, b, _ = _coeffs(theta)
    k = hat(omega)
    return np.eye(3) + a * k + b * (k @ k)


def log_so3(r):
    return quat_log(matrix_to_quat(r))


def left_jacobian(omega):
    theta = float(np.linalg.norm(omega))
    _, b, c = _coeffs(theta)
    k = hat(omega)
    return np.eye(3) + b * k + c * (k @ k)


def right_jacobian(omega):
    return left_jacobian(-np.asarray(omega, dtype=float))


def inv_left_jacobian(omega):
    theta = float(np.linalg.norm(omega))
    k = hat(omega)
    return np.eye(3) - 0.5 * k + _inv_left_jacobian_coeff(theta) * (k @ k)


def geodesic_angle(r1, r2):
    """Angle of the relative rotation r1^T r2, in radians."""
    return quat_angle(matrix_to_quat(np.asarray(r1).T @ np.asarray(r2)))


# ---------------------------------------------------------------------------
# Value types.


@dataclass(frozen=True)
class Twist:
    """se(3) element: rotation vector ``omega`` (rad) and ``v`` (m)."""

    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float).reshape(3)
        v = np.array(self.v, dtype=float).reshape(3)
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(v))):
            raise NonFiniteValue("Twist components must be finite")
        if np.linalg.norm(omega) >= math.pi:
            raise ValueError("Twist rotation must satisfy |omega| < pi")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_vector(cls, xi):
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:3], xi[3:])

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self):
        return np.concatenate([self.omega, self.v])


@dataclass(frozen=True)
class Pose:
    """SE(3) element as unit quaternion ``q = (w, x, y, z)`` and translation ``t``."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(4)
        t = np.array(self.t, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise NonFiniteValue("Pose components must be finite")
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"Pose quaternion norm {n!r} is not 1")
        object.__setattr__(self, "q", canonical_quat(q))
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rotation(cls, r, t=(0.0, 0.0, 0.0)):
        return cls(matrix_to_quat(r), t)

    @property
    def rotation(self):
        return quat_to_matrix(self.q)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.t
        return m

    def as_vector(self):
        """7-vector ``(qw, qx, qy, qz, tx, ty, tz)``."""
        return np.concatenate([self.q, self.t])

    def apply(self, p):
        return quat_to_matrix(self.q) @ np.asarray(p, dtype=float) + self.t


# ---------------------------------------------------------------------------
# SE(3).


def exp_se3(xi: Twist) -> Pose:
    return Pose(quat_exp(xi.omega), left_jacobian(xi.omega) @ xi.v)


def log_se3(pose: Pose) -> Twist:
    omega = quat_log(pose.q)
    return Twist(omega, inv_left_jacobian(omega) @ pose.t)


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(canonical_quat(quat_mul(a.q, b.q)), a.t + quat_to_matrix(a.q) @ b.t)


def inverse(pose: Pose) -> Pose:
    qi = quat_conj(pose.q)
    return Pose(qi, -(quat_to_matrix(qi) @ pose.t))


def relative(a: Pose, b: Pose) -> Pose:
    """a^-1 * b."""
    return compose(inverse(a), b)


def oplus(pose: Pose, delta) -> Pose:
    """Retraction used by every backward pass in this module."""
    delta = np.asarray(delta, dtype=float)
    return Pose(canonical_quat(quat_mul(pose.q, quat_exp(delta[:3]))), pose.t + delta[3:])


def ominus(b: Pose, a: Pose):
    """Local tangent difference with ``oplus(a, ominus(b, a)) == b``."""
    dq = quat_mul(quat_conj(a.q), b.q)
    return np.concatenate([quat_log(dq), b.t - a.t])


def _translation_jacobian(omega, v):
    """d(V(omega) v)/d omega."""
    theta = float(np.linalg.norm(omega))
    _, b, c = _coeffs(theta)
    b1, c1 = _coeff_derivs(theta)
    kv = np.cross(omega, v)
    kkv = np.cross(omega, kv)
    wv = float(omega @ v)
    return (
        np.outer(kv, omega) * b1
        - b * hat(v)
        + np.outer(kkv, omega) * c1
        + c * (wv * np.eye(3) + np.outer(omega, v) - 2.0 * np.outer(v, omega))
    )


def exp_se3_jacobian(xi: Twist):
    """6x6 Jacobian of exp_se3 into the output pose tangent."""
    jac = np.zeros((6, 6))
    jac[:3, :3] = right_jacobian(xi.omega)
    jac[3:, :3] = _translation_jacobian(xi.omega, xi.v)
    jac[3:, 3:] = left_jacobian(xi.omega)
    return jac


def exp_se3_backward(xi: Twist, grad_out):
    return exp_se3_jacobian(xi).T @ np.asarray(grad_out, dtype=float)


def compose_backward(a: Pose, b: Pose, grad_out):
    grad_out = np.asarray(grad_out, dtype=float)
    g_rot, g_t = grad_out[:3], grad_out[3:]
    ra = quat_to_matrix(a.q)
    rb = quat_to_matrix(b.q)
    rat_gt = ra.T @ g_t
    grad_a = np.concatenate([rb @ g_rot + hat(b.t) @ rat_gt, g_t])
    grad_b = np.concatenate([g_rot, rat_gt])
    return grad_a, grad_b
