"""Measurement and prior factors for the MAP estimation problem.

Pose perturbation conventions. The solver's per-node pose variable is a
left-multiplicative twist on the body-to-inertial pose, T_ib <- exp(d) T_ib
("state twist"). The ToF linearization is also available in the
body-from-inertial convention, T_bi <- exp(d) T_bi, which is related by
d_bi = -Ad(T_bi) d_state; :func:`tof_jacobian` reports that row together
with the state-twist row used in assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .envmap import EnvironmentMap, MapPoint
from .errors import InvalidMeasurementError
from .geom import Transform
from .state import StateGrid

TOF_MIN_RANGE = 0.025

# (d_low, d_high, coeff_low, coeff_high): sigma = lerp(coeff) * d.
TOF_SIGMA_SEGMENTS = (
    (0.025, 0.6, 0.014, 0.012),
    (0.6, 1.2, 0.012, 0.006),
)
TOF_SIGMA_FAR_COEFF = 0.006


# -- measurement containers -------------------------------------------------


@dataclass
class ToFMeasurement:
    """One ToF ray: range plus ray geometry in the sensor frame."""

    distance: float
    ray_direction: np.ndarray
    sensor_extrinsic: Transform
    arclength: float
    timestamp: float
    sensor_id: str

    def __post_init__(self):
        self.ray_direction = np.asarray(self.ray_direction, dtype=float)
        norm = np.linalg.norm(self.ray_direction)
        if abs(norm - 1.0) > 1e-9:
            self.ray_direction = self.ray_direction / norm

    def body_point(self) -> np.ndarray:
        """Homogeneous measured point in the ring body frame."""
        hit = self.sensor_extrinsic.apply(self.distance * self.ray_direction)
        return geom.to_homogeneous(hit)


@dataclass
class GyroMeasurement:
    angular_rate: np.ndarray
    arclength: float
    timestamp: float
    sensor_id: str

    def __post_init__(self):
        self.angular_rate = np.asarray(self.angular_rate, dtype=float)


@dataclass
class StrainMeasurement:
    bending_angle: float
    curvature: float
    arclength: float
    timestamp: float


@dataclass
class ToFScan:
    """One 8x8 frame from a single sensor, self-contained for projection."""

    sensor_id: str
    timestamp: float
    arclength: float
    sensor_extrinsic: Transform
    ray_directions: np.ndarray  # (64, 3) unit vectors, sensor frame
    distances: np.ndarray  # (64,) meters; ignored where not valid
    valid: np.ndarray  # (64,) bool

    def to_measurements(self) -> list[ToFMeasurement]:
        out = []
        for i in np.flatnonzero(self.valid):
            out.append(
                ToFMeasurement(
                    float(self.distances[i]),
                    self.ray_directions[i],
                    self.sensor_extrinsic,
                    self.arclength,
                    self.timestamp,
                    self.sensor_id,
                )
            )
        return out


# -- noise model --------------------------------------------------------------


def tof_sigma(distance: float) -> float:
    """Range-dependent ToF standard deviation (meters).

    Piecewise model: the coefficient interpolates 0.014 -> 0.012 on
    [0.025, 0.6), 0.012 -> 0.006 on [0.6, 1.2), and stays 0.006 beyond;
    sigma is coefficient * distance. Ranges below 0.025 m are invalid.
    """
    d = float(distance)
    if d < TOF_MIN_RANGE:
        raise InvalidMeasurementError(f"ToF range {d} m below {TOF_MIN_RANGE} m")
    for lo, hi, c_lo, c_hi in TOF_SIGMA_SEGMENTS:
        if d < hi:
            coeff = c_lo + (c_hi - c_lo) * (d - lo) / (hi - lo)
            return coeff * d
    return TOF_SIGMA_FAR_COEFF * d


@dataclass
class NoiseModel:
    """Measurement and prior process noise parameters.

    ``sigma_extra`` inflates the ToF variance beyond the range model to
    absorb unmodeled process errors. Prior sigmas are per Delta-normalized
    twist component for the shape and motion consistency factors, and per
    raw difference for the strain/velocity smoothness factors.
    """

    sigma_extra: float = 0.005
    gyro_sigma: float = 0.01
    strain_sigma: float = 0.02
    shape_prior_sigma: float = 0.02
    motion_prior_sigma: float = 0.05
    smoothness_sigma: float = 0.1

    def tof_variance(self, distance: float) -> float:
        """Scalar variance for the point-to-plane residual at this range."""
        return tof_sigma(distance) ** 2 + self.sigma_extra**2

    def r_tof(self, distance: float) -> np.ndarray:
        """Isotropic 3x3 point covariance at this range."""
        return self.tof_variance(distance) * np.eye(3)

    @property
    def gyro_covariance(self) -> np.ndarray:
        return self.gyro_sigma**2 * np.eye(3)

    @property
    def strain_covariance(self) -> np.ndarray:
        return self.strain_sigma**2 * np.eye(6)


def cauchy_weight(error: float, variance: float) -> float:
    """Effective inverse variance of the Cauchy loss under IRLS.

    Returns 1/R / (1 + e^2 / R); recomputed from the current residual at
    every Gauss-Newton iteration.
    """
    if variance <= 0.0:
        raise ValueError("variance must be positive")
    return (1.0 / variance) / (1.0 + error**2 / variance)


def cauchy_cost(error: float, variance: float) -> float:
    """Robust cost whose IRLS weight is :func:`cauchy_weight`."""
    return 0.5 * np.log1p(error**2 / variance)


# -- ToF point-to-plane factor ------------------------------------------------


@dataclass
class ToFCorrespondence:
    error: float
    alpha: float
    match: MapPoint
    world_point: np.ndarray
    body_point: np.ndarray  # homogeneous


def tof_residual(grid: StateGrid, measurement: ToFMeasurement,
                 env_map: EnvironmentMap,
                 max_radius: float = 0.1) -> ToFCorrespondence | None:
    """Planarity-weighted point-to-plane error for one ToF ray.

    Returns None when no map point lies within ``max_radius`` of the
    measured point in the inertial frame (the ray is dropped this
    iteration).
    """
    if measurement.distance < TOF_MIN_RANGE:
        raise InvalidMeasurementError(
            f"ToF range {measurement.distance} m below {TOF_MIN_RANGE} m"
        )
    q_body = measurement.body_point()
    pose = grid.interpolate_pose(measurement.arclength, measurement.timestamp)
    world = pose.matrix() @ q_body
    match = env_map.query_nn(world[:3], max_radius=max_radius)
    if match is None:
        return None
    error = match.planarity * float(
        match.normal @ (match.position - world[:3])
    )
    return ToFCorrespondence(error, match.planarity, match, world[:3], q_body)


@dataclass
class ToFJacobian:
    row: np.ndarray  # 1x6 w.r.t. the body-from-inertial perturbation
    row_state: np.ndarray  # 1x6 w.r.t. the state twist used in assembly
    corners: list  # [(n, k), ...] nodes the row distributes to
    weights: np.ndarray  # matching bilinear weights


def tof_jacobian(grid: StateGrid, measurement: ToFMeasurement,
                 match: MapPoint) -> ToFJacobian:
    """Analytic row of the linearized point-to-plane error.

    ``row`` is alpha * n^T D (T_ib q)^odot Ad(T_ib), the sensitivity to a
    left perturbation of the inverse pose; ``row_state`` is the equivalent
    sensitivity to the state twist. Rows distribute to the enclosing cell
    corners with the bilinear interpolation weights.
    """
    pose = grid.interpolate_pose(measurement.arclength, measurement.timestamp)
    world = pose.matrix() @ measurement.body_point()
    row_state = tof_state_rows(
        world[None, :3], match.normal[None, :], np.array([match.planarity])
    )[0]
    row = -row_state @ geom.adjoint(pose)
    corner_weights = grid.interpolation_weights(
        measurement.arclength, measurement.timestamp
    )
    corners = [nk for nk, _ in corner_weights]
    weights = np.array([w for _, w in corner_weights])
    return ToFJacobian(row, row_state, corners, weights)


def tof_state_rows(world_points: np.ndarray, normals: np.ndarray,
                   alphas: np.ndarray) -> np.ndarray:
    """Vectorized state-twist rows: -alpha * [n, world x n] per ray."""
    rows = np.empty((len(world_points), 6))
    rows[:, :3] = normals
    rows[:, 3:] = np.cross(world_points, normals)
    return -alphas[:, None] * rows


def point_to_plane_errors(world_points: np.ndarray, map_points: np.ndarray,
                          normals: np.ndarray,
                          alphas: np.ndarray) -> np.ndarray:
    """Vectorized counterpart of :func:`tof_residual`'s error expression."""
    return alphas * np.einsum(
        "ij,ij->i", normals, map_points - world_points
    )


# -- gyro factor ---------------------------------------------------------------


def gyro_residual(grid: StateGrid, measurement: GyroMeasurement,
                  bias: np.ndarray) -> np.ndarray:
    """Angular-velocity error: interpolated body rate minus calibrated rate."""
    velocity = grid.interpolate_velocity(
        measurement.arclength, measurement.timestamp
    )
    return velocity[3:] - (measurement.angular_rate - np.asarray(bias))


# -- strain factor ---------------------------------------------------------------


def strain_from_angle_curvature(bending_angle: float,
                                curvature: float) -> np.ndarray:
    """Map a (bending angle, curvature) pair to a generalized strain.

    The bending angle selects the bending plane by rotating the reference
    strain [1, 0, 0, 0, 0, kappa] with the adjoint of a rotation about the
    local x axis.
    """
    reference = np.array([1.0, 0.0, 0.0, 0.0, 0.0, float(curvature)])
    twist_frame = Transform(geom.rot_x(bending_angle), np.zeros(3))
    return geom.adjoint(twist_frame) @ reference


def strain_residual(grid: StateGrid,
                    measurement: StrainMeasurement) -> np.ndarray:
    """Interpolated strain minus the measured strain, as a 6-vector."""
    measured = strain_from_angle_curvature(
        measurement.bending_angle, measurement.curvature
    )
    return grid.interpolate_strain(
        measurement.arclength, measurement.timestamp
    ) - measured


# -- prior factors ----------------------------------------------------------------


class PriorFactor:
    """Base for lattice prior factors.

    Subclasses expose the residual, per-variable Jacobian blocks, and a
    constant information matrix. Variables are (n, k, block) with block in
    {"pose", "strain", "velocity"}; Jacobians are w.r.t. the state twist
    for pose blocks and additive offsets otherwise.
    """

    kind = "prior"

    def variables(self) -> list:
        return []

    def residual(self, grid: StateGrid) -> np.ndarray:
        return np.zeros(0)

    def jacobians(self, grid: StateGrid) -> dict:
        return {}


class BaseClampFactor(PriorFactor):
    """Marker for the hard clamp of the base row; contributes no residual."""

    kind = "base_clamp"


@dataclass
class ArclengthConsistencyFactor(PriorFactor):
    """Adjacent arclength knots must agree with the stored strain.

    Residual: log(T(n+1,k)^-1 T(n,k) exp(ds * strain(n,k))), which vanishes
    when the pose advances by the constant-strain displacement.
    """

    n: int
    k: int
    information: np.ndarray

    kind = "arclength_consistency"

    def variables(self):
        return [
            (self.n, self.k, "pose"),
            (self.n + 1, self.k, "pose"),
            (self.n, self.k, "strain"),
        ]

    def _terms(self, grid: StateGrid):
        ds = grid.arclengths[self.n + 1] - grid.arclengths[self.n]
        t_a = grid.pose(self.n, self.k)
        t_b = grid.pose(self.n + 1, self.k)
        step = ds * grid.strains[self.n, self.k]
        propagated = t_a @ geom.exp_se3(step)
        residual = geom.log_se3(t_b.inverse() @ propagated)
        return ds, t_a, t_b, step, propagated, residual

    def residual(self, grid: StateGrid) -> np.ndarray:
        return self._terms(grid)[-1]

    def jacobians(self, grid: StateGrid) -> dict:
        ds, t_a, t_b, step, propagated, residual = self._terms(grid)
        jr_inv = geom.se3_right_jacobian_inv(residual)
        gamma = jr_inv @ geom.adjoint(propagated.inverse())
        return {
            (self.n, self.k, "pose"): gamma,
            (self.n + 1, self.k, "pose"): -gamma,
            (self.n, self.k, "strain"): jr_inv @ (
                ds * geom.se3_right_jacobian(step)
            ),
        }


@dataclass
class TimeConsistencyFactor(PriorFactor):
    """Adjacent time knots must agree with the stored body velocity."""

    n: int
    k: int
    information: np.ndarray

    kind = "time_consistency"

    def variables(self):
        return [
            (self.n, self.k, "pose"),
            (self.n, self.k + 1, "pose"),
            (self.n, self.k, "velocity"),
        ]

    def _terms(self, grid: StateGrid):
        dt = grid.times[self.k + 1] - grid.times[self.k]
        t_a = grid.pose(self.n, self.k)
        t_b = grid.pose(self.n, self.k + 1)
        step = dt * grid.velocities[self.n, self.k]
        propagated = t_a @ geom.exp_se3(step)
        residual = geom.log_se3(t_b.inverse() @ propagated)
        return dt, t_a, t_b, step, propagated, residual

    def residual(self, grid: StateGrid) -> np.ndarray:
        return self._terms(grid)[-1]

    def jacobians(self, grid: StateGrid) -> dict:
        dt, t_a, t_b, step, propagated, residual = self._terms(grid)
        jr_inv = geom.se3_right_jacobian_inv(residual)
        gamma = jr_inv @ geom.adjoint(propagated.inverse())
        return {
            (self.n, self.k, "pose"): gamma,
            (self.n, self.k + 1, "pose"): -gamma,
            (self.n, self.k, "velocity"): jr_inv @ (
                dt * geom.se3_right_jacobian(step)
            ),
        }


@dataclass
class SmoothnessFactor(PriorFactor):
    """White-noise prior on a field difference between adjacent knots."""

    field_name: str  # "strain" or "velocity"
    axis: str  # "s" or "t"
    n: int
    k: int
    information: np.ndarray

    kind = "smoothness"

    def _next(self):
        return (self.n + 1, self.k) if self.axis == "s" else (self.n, self.k + 1)

    def variables(self):
        return [
            (self.n, self.k, self.field_name),
            (*self._next(), self.field_name),
        ]

    def residual(self, grid: StateGrid) -> np.ndarray:
        values = grid.strains if self.field_name == "strain" else grid.velocities
        n2, k2 = self._next()
        return values[n2, k2] - values[self.n, self.k]

    def jacobians(self, grid: StateGrid) -> dict:
        n2, k2 = self._next()
        return {
            (self.n, self.k, self.field_name): -np.eye(6),
            (n2, k2, self.field_name): np.eye(6),
        }


@dataclass
class NodePriorFactor(PriorFactor):
    """Unary anchor on a node's full state, used for window head priors."""

    n: int
    k: int
    pose_target: Transform
    strain_target: np.ndarray
    velocity_target: np.ndarray
    information: np.ndarray  # 18x18

    kind = "node_prior"

    def variables(self):
        return [
            (self.n, self.k, "pose"),
            (self.n, self.k, "strain"),
            (self.n, self.k, "velocity"),
        ]

    def residual(self, grid: StateGrid) -> np.ndarray:
        pose_err = geom.log_se3(
            grid.pose(self.n, self.k) @ self.pose_target.inverse()
        )
        return np.concatenate(
            [
                pose_err,
                grid.strains[self.n, self.k] - self.strain_target,
                grid.velocities[self.n, self.k] - self.velocity_target,
            ]
        )

    def jacobians(self, grid: StateGrid) -> dict:
        pose_err = geom.log_se3(
            grid.pose(self.n, self.k) @ self.pose_target.inverse()
        )
        return {
            (self.n, self.k, "pose"): np.vstack(
                [geom.se3_left_jacobian_inv(pose_err), np.zeros((12, 6))]
            ),
            (self.n, self.k, "strain"): np.vstack(
                [np.zeros((6, 6)), np.eye(6), np.zeros((6, 6))]
            ),
            (self.n, self.k, "velocity"): np.vstack(
                [np.zeros((12, 6)), np.eye(6)]
            ),
        }


def prior_factors(grid: StateGrid, noise: NoiseModel) -> list[PriorFactor]:
    """All lattice priors: consistency, smoothness, and the base clamp."""
    out: list[PriorFactor] = [BaseClampFactor()]
    n_s, n_t = grid.num_arclengths, grid.num_times
    smooth_info = np.eye(6) / noise.smoothness_sigma**2
    for k in range(n_t):
        for n in range(n_s - 1):
            ds = grid.arclengths[n + 1] - grid.arclengths[n]
            info = np.eye(6) / (noise.shape_prior_sigma * ds) ** 2
            out.append(ArclengthConsistencyFactor(n, k, info))
            out.append(SmoothnessFactor("strain", "s", n, k, smooth_info))
            out.append(SmoothnessFactor("velocity", "s", n, k, smooth_info))
    for n in range(n_s):
        for k in range(n_t - 1):
            dt = grid.times[k + 1] - grid.times[k]
            info = np.eye(6) / (noise.motion_prior_sigma * dt) ** 2
            out.append(TimeConsistencyFactor(n, k, info))
            out.append(SmoothnessFactor("strain", "t", n, k, smooth_info))
            out.append(SmoothnessFactor("velocity", "t", n, k, smooth_info))
    return out
