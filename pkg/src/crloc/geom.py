"""SE(3) / se(3) primitives used by every factor and the simulator.

Conventions:
    - A rigid transform T = (R, t) maps body-frame points into the parent
      frame: p_parent = R @ p_body + t.
    - Twists are ordered (linear; angular), i.e. xi = [rho, phi].
    - exp/log use the closed-form Rodrigues / V-matrix expressions with
      Taylor fallbacks below ``SMALL_ANGLE``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMALL_ANGLE = 1e-8

# Projection that drops the homogeneous component of a 4-vector.
HOM_PROJECTION = np.hstack([np.eye(3), np.zeros((3, 1))])


def wedge(a: np.ndarray) -> np.ndarray:
    """Skew matrix of a 3-vector: wedge(a) @ b == cross(a, b)."""
    a = np.asarray(a, dtype=float)
    return np.array(
        [
            [0.0, -a[2], a[1]],
            [a[2], 0.0, -a[0]],
            [-a[1], a[0], 0.0],
        ]
    )


def unwedge(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`wedge` for an antisymmetric 3x3 matrix."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def to_homogeneous(points: np.ndarray) -> np.ndarray:
    """Append a unit homogeneous coordinate along the last axis."""
    points = np.asarray(points, dtype=float)
    ones = np.ones(points.shape[:-1] + (1,))
    return np.concatenate([points, ones], axis=-1)


def odot(p: np.ndarray) -> np.ndarray:
    """4x6 matrix such that odot(p) @ xi equals the twist action on p.

    For a homogeneous point p = [a, b], returns [[b*I3, -wedge(a)], [0, 0]].
    Accepts a batch of points with shape (..., 4) and returns (..., 4, 6).
    """
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        a, b = p[:3], p[3]
        out = np.zeros((4, 6))
        out[:3, :3] = b * np.eye(3)
        out[:3, 3:] = -wedge(a)
        return out
    out = np.zeros(p.shape[:-1] + (4, 6))
    b = p[..., 3]
    out[..., 0, 0] = b
    out[..., 1, 1] = b
    out[..., 2, 2] = b
    ax, ay, az = p[..., 0], p[..., 1], p[..., 2]
    out[..., 0, 4] = az
    out[..., 0, 5] = -ay
    out[..., 1, 3] = -az
    out[..., 1, 5] = ax
    out[..., 2, 3] = ay
    out[..., 2, 4] = -ax
    return out


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rotation matrix from a rotation vector (Rodrigues formula)."""
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    w = wedge(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + w + 0.5 * (w @ w)
    s, c = np.sin(angle), np.cos(angle)
    return np.eye(3) + (s / angle) * w + ((1.0 - c) / angle**2) * (w @ w)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix; angle in [0, pi]."""
    rotation = np.asarray(rotation, dtype=float)
    cos_angle = np.clip(0.5 * (np.trace(rotation) - 1.0), -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    if angle < SMALL_ANGLE:
        return 0.5 * unwedge(rotation - rotation.T)
    if np.pi - angle < 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from
        # the dominant diagonal entry of R + I.
        m = rotation + np.eye(3)
        col = int(np.argmax(np.diag(m)))
        axis = m[:, col] / np.linalg.norm(m[:, col])
        # Fix the sign using the (still informative) antisymmetric part.
        w = unwedge(rotation - rotation.T)
        if np.dot(axis, w) < 0.0:
            axis = -axis
        return angle * axis
    return (angle / (2.0 * np.sin(angle))) * unwedge(rotation - rotation.T)


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    w = wedge(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + 0.5 * w + (w @ w) / 6.0
    s, c = np.sin(angle), np.cos(angle)
    return (
        np.eye(3)
        + ((1.0 - c) / angle**2) * w
        + ((angle - s) / angle**3) * (w @ w)
    )


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    w = wedge(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) - 0.5 * w + (w @ w) / 12.0
    half = 0.5 * angle
    cot_term = 1.0 / angle**2 - (1.0 + np.cos(angle)) / (
        2.0 * angle * np.sin(angle)
    )
    return np.eye(3) - 0.5 * w + cot_term * (w @ w)


@dataclass
class Transform:
    """Rigid transform with a 3x3 rotation and a 3-vector translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)

    @staticmethod
    def identity() -> "Transform":
        return Transform()

    @staticmethod
    def from_matrix(matrix: np.ndarray) -> "Transform":
        matrix = np.asarray(matrix, dtype=float)
        return Transform(matrix[:3, :3].copy(), matrix[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def __matmul__(self, other: "Transform") -> "Transform":
        return Transform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Transform":
        rt = self.rotation.T
        return Transform(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a batch (..., 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation


def exp_se3(xi: np.ndarray) -> Transform:
    """Closed-form exponential map; xi = [linear, angular]."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[:3], xi[3:]
    return Transform(so3_exp(phi), so3_left_jacobian(phi) @ rho)


def log_se3(transform: Transform) -> np.ndarray:
    """Inverse of :func:`exp_se3` for rotation angles below pi."""
    phi = so3_log(transform.rotation)
    rho = so3_left_jacobian_inv(phi) @ transform.translation
    return np.concatenate([rho, phi])


def adjoint(transform: Transform) -> np.ndarray:
    """6x6 adjoint [[R, wedge(t) R], [0, R]] for (linear; angular) twists."""
    out = np.zeros((6, 6))
    r = transform.rotation
    out[:3, :3] = r
    out[3:, 3:] = r
    out[:3, 3:] = wedge(transform.translation) @ r
    return out


def _se3_q_matrix(xi: np.ndarray) -> np.ndarray:
    """Translation-rotation coupling block of the SE(3) left Jacobian."""
    rho, phi = xi[:3], xi[3:]
    rx = wedge(rho)
    px = wedge(phi)
    px2 = px @ px
    angle = float(np.linalg.norm(phi))
    if angle < SMALL_ANGLE:
        c1, c2, c3 = 1.0 / 6.0, 1.0 / 24.0, 1.0 / 120.0
    else:
        s, c = np.sin(angle), np.cos(angle)
        c1 = (angle - s) / angle**3
        c2 = (1.0 - 0.5 * angle**2 - c) / angle**4
        c3 = 0.5 * (c2 - 3.0 * (angle - s - angle**3 / 6.0) / angle**5)
    return (
        0.5 * rx
        + c1 * (px @ rx + rx @ px + px @ rx @ px)
        - c2 * (px2 @ rx + rx @ px2 - 3.0 * px @ rx @ px)
        - c3 * (px @ rx @ px2 + px2 @ rx @ px)
    )


def se3_left_jacobian(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    j = so3_left_jacobian(xi[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = j
    out[3:, 3:] = j
    out[:3, 3:] = _se3_q_matrix(xi)
    return out


def se3_left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    j_inv = so3_left_jacobian_inv(xi[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = j_inv
    out[3:, 3:] = j_inv
    out[:3, 3:] = -j_inv @ _se3_q_matrix(xi) @ j_inv
    return out


def se3_right_jacobian(xi: np.ndarray) -> np.ndarray:
    return se3_left_jacobian(-np.asarray(xi, dtype=float))


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    return se3_left_jacobian_inv(-np.asarray(xi, dtype=float))


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def geodesic(t_a: Transform, t_b: Transform, u: float) -> Transform:
    """Constant-twist path from t_a (u=0) to t_b (u=1), body-frame relative."""
    rel = log_se3(t_a.inverse() @ t_b)
    return t_a @ exp_se3(u * rel)


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    cos_angle = np.clip(0.5 * (np.trace(rotation) - 1.0), -1.0, 1.0)
    return float(np.arccos(cos_angle))


def rotation_between(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices (symmetric)."""
    return rotation_angle(r_a.T @ r_b)
