"""Kinematic pseudo-rigid-body continuum robot.

The robot is a chain of short rigid links joined by spherical joints with
prescribed rotation trajectories. Between link midpoints the backbone
follows the constant-twist geodesic connecting the midpoint frames, which
is exactly the constant-curvature arc tangent to both links; this gives a
continuous pose, strain, and curvature profile along the whole length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import geom
from ..geom import Transform

STRAIGHT_TWIST = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])


@dataclass
class SimRobot:
    link_length: float
    link_count: int
    joint_trajectory: Callable[[float], np.ndarray]  # t -> (J, 3) rotvecs
    base_pose: Transform = field(default_factory=Transform.identity)
    ring_stations: tuple = ()
    ring_axial_offsets: tuple = ()

    def __post_init__(self):
        self._frame_cache: dict[float, np.ndarray] = {}

    @property
    def total_length(self) -> float:
        return self.link_length * self.link_count

    @property
    def num_joints(self) -> int:
        return self.link_count - 1

    def joint_rotations(self, t: float) -> np.ndarray:
        rotvecs = np.asarray(self.joint_trajectory(float(t)), dtype=float)
        if rotvecs.shape != (self.num_joints, 3):
            raise ValueError(
                f"joint trajectory returned {rotvecs.shape}, expected "
                f"({self.num_joints}, 3)"
            )
        return rotvecs

    def midpoint_frames(self, t: float) -> np.ndarray:
        """(link_count, 4, 4) world poses of every link midpoint."""
        t = float(t)
        cached = self._frame_cache.get(t)
        if cached is not None:
            return cached
        rotvecs = self.joint_rotations(t)
        half = np.eye(4)
        half[0, 3] = 0.5 * self.link_length
        full = np.eye(4)
        full[0, 3] = self.link_length
        frames = np.empty((self.link_count, 4, 4))
        cursor = self.base_pose.matrix()
        for i in range(self.link_count):
            frames[i] = cursor @ half
            cursor = cursor @ full
            if i < self.num_joints:
                joint = np.eye(4)
                joint[:3, :3] = geom.so3_exp(rotvecs[i])
                cursor = cursor @ joint
        if len(self._frame_cache) > 4096:
            self._frame_cache.clear()
        self._frame_cache[t] = frames
        return frames

    def pose_at(self, s: float, t: float) -> Transform:
        """Backbone pose at arclength ``s``; straight beyond the end arcs."""
        if s < -1e-9 or s > self.total_length + 1e-9:
            raise ValueError(f"arclength {s} outside [0, {self.total_length}]")
        frames = self.midpoint_frames(t)
        half = 0.5 * self.link_length
        first_mid = half
        last_mid = self.total_length - half
        if s <= first_mid or self.link_count == 1:
            offset = np.eye(4)
            offset[0, 3] = s - first_mid
            return Transform.from_matrix(frames[0] @ offset)
        if s >= last_mid:
            offset = np.eye(4)
            offset[0, 3] = s - last_mid
            return Transform.from_matrix(frames[-1] @ offset)
        seg = min(int((s - first_mid) / self.link_length), self.link_count - 2)
        u = (s - first_mid - seg * self.link_length) / self.link_length
        return geom.geodesic(
            Transform.from_matrix(frames[seg]),
            Transform.from_matrix(frames[seg + 1]),
            u,
        )

    def strain_twist_at(self, s: float, t: float) -> np.ndarray:
        """Local strain: the per-unit-arclength twist of the current arc."""
        frames = self.midpoint_frames(t)
        half = 0.5 * self.link_length
        if s <= half or s >= self.total_length - half or self.link_count == 1:
            return STRAIGHT_TWIST.copy()
        seg = min(
            int((s - half) / self.link_length), self.link_count - 2
        )
        rel = np.linalg.solve(frames[seg], frames[seg + 1])
        return geom.log_se3(Transform.from_matrix(rel)) / self.link_length

    def angle_curvature_at(self, s: float, t: float) -> tuple[float, float]:
        """(bending angle, curvature) of the local constant-curvature arc."""
        twist = self.strain_twist_at(s, t)
        kappa = float(np.hypot(twist[4], twist[5]))
        theta = float(np.arctan2(-twist[4], twist[5])) if kappa > 1e-12 else 0.0
        return theta, kappa

    def body_angular_rate(self, s: float, t: float,
                          dt: float = 1e-3) -> np.ndarray:
        """Body-frame angular velocity by central differencing of poses."""
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        r_before = self.pose_at(s, t - dt / 2).rotation
        r_after = self.pose_at(s, t + dt / 2).rotation
        return geom.so3_log(r_before.T @ r_after) / dt

    def body_velocity(self, s: float, t: float, dt: float = 1e-3) -> np.ndarray:
        """Full body twist (linear; angular) by central differencing."""
        before = self.pose_at(s, t - dt / 2)
        after = self.pose_at(s, t + dt / 2)
        return geom.log_se3(before.inverse() @ after) / dt


def smoothstep(x: float) -> float:
    x = min(max(x, 0.0), 1.0)
    return x * x * (3.0 - 2.0 * x)


def make_joint_trajectory(kind: str, link_count: int, total_length: float,
                          amplitude: float = 0.03, frequency: float = 0.25,
                          plane_rate: float = 0.6, start_time: float = 1.0,
                          ramp_time: float = 1.5,
                          constant_bend: float = 0.0,
                          bend_axis=(0.0, 0.0, 1.0)):
    """Prescribed joint rotation profiles.

    "static": all joints zero. "constant_bend": every joint rotates by the
    same angle about ``bend_axis``. "ramped_sweep": bending ramps in after
    ``start_time``, oscillates at ``frequency``, and slowly rotates its
    bending plane; the per-joint amplitude grows quadratically from the
    base so the clamped base region stays straight.
    """
    joints = link_count - 1
    stations = np.arange(1, joints + 1) * (total_length / link_count)
    if kind == "static":
        def static(t):
            return np.zeros((joints, 3))
        return static
    if kind == "constant_bend":
        axis = np.asarray(bend_axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        def constant(t):
            return np.tile(constant_bend * axis, (joints, 1))
        return constant
    if kind == "ramped_sweep":
        envelope = amplitude * (stations / total_length) ** 2
        def sweep(t):
            ramp = smoothstep((t - start_time) / ramp_time)
            magnitude = ramp * (
                0.6 + 0.4 * np.sin(2.0 * np.pi * frequency * (t - start_time))
            )
            psi = plane_rate * (t - start_time)
            axis = np.array([0.0, -np.sin(psi), np.cos(psi)])
            return (envelope * magnitude)[:, None] * axis
        return sweep
    raise ValueError(f"unknown trajectory kind {kind!r}")
