"""Simulated ToF, gyro, and strain sensors on the kinematic robot.

Noise-free outputs are exact geometry: ray casting returns true ranges and
the strain/gyro channels differentiate the kinematic model. Noise follows
the configured models (range-dependent Gaussian for ToF, fixed-sigma
Gaussian for gyro and strain); all draws come from per-sensor generators
spawned from one seed, so logs are bit-identical across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import geom
from ..factors import GyroMeasurement, StrainMeasurement, ToFScan, tof_sigma
from ..factors import TOF_MIN_RANGE
from ..geom import Transform
from .mesh import cast_rays
from .robot import SimRobot
from .scene import SimScene


@dataclass
class SensorSpec:
    tof_grid: int = 8
    tof_fov: float = np.deg2rad(45.0)
    tof_max_range: float = 4.0
    tof_rate: float = 15.0
    gyro_sigma: float = 0.01
    gyro_rate: float = 100.0
    gyro_bias: np.ndarray = field(
        default_factory=lambda: np.zeros(3)
    )
    strain_sigma_kappa: float = 0.01
    strain_sigma_theta: float = 0.015
    strain_rate: float = 20.0
    strain_spacing: float = 0.03

    def __post_init__(self):
        if min(self.tof_rate, self.gyro_rate, self.strain_rate) <= 0.0:
            raise ValueError("sensor rates must be positive")
        if not 0.0 < self.tof_fov < np.pi:
            raise ValueError("ToF field of view must be in (0, pi)")


def tof_ray_directions(grid: int = 8, fov: float = np.deg2rad(45.0)):
    """Unit ray directions at the centers of a grid x grid angular split.

    Sensor convention: boresight +z, grid axes along sensor x and y.
    """
    centers = -fov / 2 + (np.arange(grid) + 0.5) * (fov / grid)
    tx, ty = np.meshgrid(np.tan(centers), np.tan(centers), indexing="ij")
    dirs = np.column_stack([tx.ravel(), ty.ravel(), np.ones(grid * grid)])
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


@dataclass
class ToFMount:
    """One ToF sensor: its ring, station, and sensor-to-ring extrinsic."""

    sensor_id: str
    ring_id: int
    arclength: float
    extrinsic: Transform


def radial_extrinsic(azimuth: float, radius: float) -> Transform:
    """Sensor frame with +z pointing radially outward at ``azimuth``.

    The azimuth is measured in the ring's y-z plane from +y; sensor x stays
    aligned with the backbone.
    """
    direction = np.array([0.0, np.cos(azimuth), np.sin(azimuth)])
    x_axis = np.array([1.0, 0.0, 0.0])
    y_axis = np.cross(direction, x_axis)
    rotation = np.column_stack([x_axis, y_axis, direction])
    return Transform(rotation, radius * direction)


def forward_extrinsic(offset: float = 0.0) -> Transform:
    """Tip sensor frame with +z along the backbone (+x of the body)."""
    rotation = np.column_stack(
        [np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]),
         np.array([1.0, 0.0, 0.0])]
    )
    return Transform(rotation, np.array([offset, 0.0, 0.0]))


def build_rig(ring_stations, ring_axial_offsets=None, sensors_per_ring: int = 3,
              disc_radius: float = 0.015, tip_arclength: float | None = None):
    """Mounts for radially distributed ring sensors plus an optional tip.

    Consecutive rings are axially offset (60 degrees by default) so their
    sensors stagger around the backbone.
    """
    mounts = []
    if ring_axial_offsets is None:
        ring_axial_offsets = [
            np.deg2rad(60.0) * i for i in range(len(ring_stations))
        ]
    for ring, (station, offset) in enumerate(
        zip(ring_stations, ring_axial_offsets)
    ):
        for j in range(sensors_per_ring):
            azimuth = offset + j * (2.0 * np.pi / sensors_per_ring)
            mounts.append(
                ToFMount(
                    f"tof_r{ring}s{j}", ring, float(station),
                    radial_extrinsic(azimuth, disc_radius),
                )
            )
    if tip_arclength is not None:
        mounts.append(
            ToFMount(
                "tof_tip", len(ring_stations), float(tip_arclength),
                forward_extrinsic(),
            )
        )
    return mounts


def raycast_tof(scene: SimScene, sensor_pose: Transform, spec: SensorSpec,
                rng: np.random.Generator | None = None, sensor_id: str = "tof",
                timestamp: float = 0.0, arclength: float = 0.0,
                extrinsic: Transform | None = None):
    """One simulated frame: returns (ToFScan, per-ray hit label indices).

    ``sensor_pose`` is the sensor frame in the world. Rays beyond the max
    range produce no return; noisy ranges below the validity threshold are
    flagged invalid. Pass ``rng=None`` for noise-free output.
    """
    dirs_sensor = tof_ray_directions(spec.tof_grid, spec.tof_fov)
    dirs_world = dirs_sensor @ sensor_pose.rotation.T
    origins = np.tile(sensor_pose.translation, (len(dirs_world), 1))
    dists, mesh_idx, _ = cast_rays(
        scene.meshes(), origins, dirs_world, spec.tof_max_range
    )
    hit = np.isfinite(dists)
    distances = np.where(hit, dists, 0.0)
    if rng is not None and np.any(hit):
        sigma = np.array([tof_sigma(max(d, TOF_MIN_RANGE)) for d in distances])
        noise = rng.standard_normal(len(distances)) * sigma
        distances = np.where(hit, distances + noise, 0.0)
    valid = hit & (distances >= TOF_MIN_RANGE)
    scan = ToFScan(
        sensor_id,
        float(timestamp),
        float(arclength),
        extrinsic if extrinsic is not None else Transform.identity(),
        dirs_sensor,
        distances,
        valid,
    )
    labels = np.where(hit, mesh_idx, -1)
    return scan, labels


def sim_gyro(robot: SimRobot, s: float, t: float, spec: SensorSpec,
             rng: np.random.Generator | None = None, dt: float = 1e-3,
             sensor_id: str = "gyro") -> GyroMeasurement:
    """Body angular rate at the ring plus the constant bias, plus noise."""
    rate = robot.body_angular_rate(s, t, dt) + np.asarray(spec.gyro_bias)
    if rng is not None:
        rate = rate + spec.gyro_sigma * rng.standard_normal(3)
    return GyroMeasurement(rate, float(s), float(t), sensor_id)


def sim_strain(robot: SimRobot, t: float, spec: SensorSpec,
               rng: np.random.Generator | None = None):
    """Bending angle / curvature samples at every strain station."""
    stations = np.arange(
        spec.strain_spacing, robot.total_length + 1e-9, spec.strain_spacing
    )
    out = []
    for s in stations:
        theta, kappa = robot.angle_curvature_at(float(s), t)
        if rng is not None:
            kappa = max(kappa + spec.strain_sigma_kappa * rng.standard_normal(), 0.0)
            theta = theta + spec.strain_sigma_theta * rng.standard_normal()
        out.append(StrainMeasurement(theta, kappa, float(s), float(t)))
    return out


@dataclass
class RingPoseRecord:
    ring_id: int
    arclength: float
    timestamp: float
    pose: np.ndarray  # (4, 4)


@dataclass
class SimRecords:
    """Everything one rollout produces, before serialization."""

    scans: list = field(default_factory=list)
    scan_labels: list = field(default_factory=list)
    gyro: list = field(default_factory=list)
    strain: list = field(default_factory=list)
    truth: list = field(default_factory=list)
    label_names: list = field(default_factory=list)


def run_simulation(robot: SimRobot, scene: SimScene, mounts, spec: SensorSpec,
                   duration: float, seed: int = 0,
                   gyro_dt: float = 1e-3) -> SimRecords:
    """Roll the robot through the scene and log every sensor channel.

    Ground-truth ring poses are recorded at every sensor timestamp. The
    tip station is logged as its own ring for evaluation.
    """
    seeds = np.random.SeedSequence(seed).spawn(len(mounts) + 2)
    tof_rngs = [np.random.default_rng(s) for s in seeds[:len(mounts)]]
    gyro_rng = np.random.default_rng(seeds[len(mounts)])
    strain_rng = np.random.default_rng(seeds[len(mounts) + 1])
    records = SimRecords(label_names=scene.labels())
    tof_times = np.arange(0.0, duration + 1e-9, 1.0 / spec.tof_rate)
    gyro_times = np.arange(0.0, duration + 1e-9, 1.0 / spec.gyro_rate)
    strain_times = np.arange(0.0, duration + 1e-9, 1.0 / spec.strain_rate)
    for t in tof_times:
        for mount, rng in zip(mounts, tof_rngs):
            body = robot.pose_at(mount.arclength, t)
            scan, labels = raycast_tof(
                scene, body @ mount.extrinsic, spec, rng,
                sensor_id=mount.sensor_id, timestamp=t,
                arclength=mount.arclength, extrinsic=mount.extrinsic,
            )
            records.scans.append(scan)
            records.scan_labels.append(labels)
    ring_stations = sorted({(m.ring_id, m.arclength) for m in mounts})
    gyro_stations = sorted(
        {(m.ring_id, m.arclength) for m in mounts if m.sensor_id != "tof_tip"}
    )
    for t in gyro_times:
        for ring_id, s in gyro_stations:
            records.gyro.append(
                sim_gyro(
                    robot, s, t, spec, gyro_rng, dt=gyro_dt,
                    sensor_id=f"gyro_r{ring_id}",
                )
            )
    for t in strain_times:
        records.strain.extend(sim_strain(robot, t, spec, strain_rng))
    truth_times = np.unique(
        np.concatenate([tof_times, gyro_times, strain_times])
    )
    for t in truth_times:
        for ring_id, s in ring_stations:
            records.truth.append(
                RingPoseRecord(
                    ring_id, s, float(t), robot.pose_at(s, t).matrix()
                )
            )
    return records
