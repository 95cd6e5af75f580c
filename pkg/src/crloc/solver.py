"""Sliding-window Gauss-Newton MAP solver with IRLS robust reweighting.

Each iteration re-matches ToF correspondences against the map, recomputes
the Cauchy IRLS weights from the current residuals, assembles the normal
equations over the free lattice nodes, and applies the solved update.
Steps that increase the (fixed-correspondence) robust cost are retried
with Levenberg damping. Posterior covariances come from the Laplace
approximation: per-node blocks of the inverse information matrix at the
solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import factors as fx
from . import geom
from .envmap import EnvironmentMap
from .errors import InsufficientCalibrationError, UnobservableProblemError
from .geom import Transform
from .state import NODE_DIM, StateGrid

_BLOCK_OFFSET = {"pose": 0, "strain": 6, "velocity": 12}


@dataclass
class GNOptions:
    max_iterations: int = 20
    step_tolerance: float = 1e-6
    damping_init: float = 1e-6
    damping_factor: float = 10.0
    damping_cap: float = 1e2
    match_radius: float = 0.1
    weak_pose_std: float = 5e-3  # meters; flags prior-dominated solutions


@dataclass
class ToFFactorGroup:
    """All valid rays of one scan; they share a single pose query."""

    sensor_id: str
    timestamp: float
    arclength: float
    body_points: np.ndarray  # (M, 4) homogeneous, ring body frame
    variances: np.ndarray  # (M,) scalar residual variances

    @staticmethod
    def from_scan(scan: fx.ToFScan, noise: fx.NoiseModel) -> "ToFFactorGroup":
        ok = scan.valid & (scan.distances >= fx.TOF_MIN_RANGE)
        dirs = scan.ray_directions[ok]
        dists = scan.distances[ok]
        hits = scan.sensor_extrinsic.apply(dists[:, None] * dirs)
        variances = np.array([noise.tof_variance(d) for d in dists])
        return ToFFactorGroup(
            scan.sensor_id,
            float(scan.timestamp),
            float(scan.arclength),
            geom.to_homogeneous(hits),
            variances,
        )


@dataclass
class GyroFactorGroup:
    """All measurements of one gyro, with its calibrated bias."""

    sensor_id: str
    arclength: float
    timestamps: np.ndarray  # (M,)
    rates: np.ndarray  # (M, 3)
    bias: np.ndarray  # (3,)


@dataclass
class StrainFactorBatch:
    arclengths: np.ndarray  # (M,)
    timestamps: np.ndarray  # (M,)
    measured: np.ndarray  # (M, 6) mapped strain values


@dataclass
class Problem:
    """One sliding-window MAP problem over a state grid."""

    grid: StateGrid
    env_map: EnvironmentMap | None
    noise: fx.NoiseModel
    tof_groups: list = field(default_factory=list)
    gyro_groups: list = field(default_factory=list)
    strain_batch: StrainFactorBatch | None = None
    priors: list = field(default_factory=list)
    head_priors: list = field(default_factory=list)
    window_length: float = 2.0
    options: GNOptions = field(default_factory=GNOptions)

    @property
    def window(self) -> tuple[float, float]:
        return float(self.grid.times[0]), float(self.grid.times[-1])


@dataclass
class SolveReport:
    iterations: int = 0
    final_cost: float = 0.0
    cost_trace: list = field(default_factory=list)
    converged: bool = False
    step_norms: list = field(default_factory=list)
    damping_events: int = 0
    matched_rays: int = 0
    total_rays: int = 0
    weak_observability: bool = False
    max_pose_std: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_cost": self.final_cost,
            "cost_trace": list(self.cost_trace),
            "converged": self.converged,
            "step_norms": list(self.step_norms),
            "damping_events": self.damping_events,
            "matched_rays": self.matched_rays,
            "total_rays": self.total_rays,
            "weak_observability": self.weak_observability,
            "max_pose_std": self.max_pose_std,
        }


def build_problem(grid: StateGrid, env_map: EnvironmentMap | None,
                  noise: fx.NoiseModel, scans=(), gyro_measurements=(),
                  strain_measurements=(), biases=None,
                  window_length: float = 2.0,
                  options: GNOptions | None = None) -> Problem:
    """Assemble a window problem from raw measurements inside the grid span."""
    options = options or GNOptions()
    t_lo, t_hi = grid.times[0] - 1e-9, grid.times[-1] + 1e-9
    biases = biases or {}
    tof_groups = [
        ToFFactorGroup.from_scan(scan, noise)
        for scan in scans
        if t_lo <= scan.timestamp <= t_hi
    ]
    tof_groups = [g for g in tof_groups if len(g.body_points)]
    by_sensor: dict[str, list] = {}
    for m in gyro_measurements:
        if t_lo <= m.timestamp <= t_hi:
            by_sensor.setdefault(m.sensor_id, []).append(m)
    gyro_groups = []
    for sensor_id, items in sorted(by_sensor.items()):
        gyro_groups.append(
            GyroFactorGroup(
                sensor_id,
                float(items[0].arclength),
                np.array([m.timestamp for m in items]),
                np.stack([m.angular_rate for m in items]),
                np.asarray(
                    biases.get(sensor_id, np.zeros(3)), dtype=float
                ),
            )
        )
    strain_batch = None
    kept = [m for m in strain_measurements if t_lo <= m.timestamp <= t_hi]
    if kept:
        strain_batch = StrainFactorBatch(
            np.array([m.arclength for m in kept]),
            np.array([m.timestamp for m in kept]),
            np.stack(
                [
                    fx.strain_from_angle_curvature(m.bending_angle, m.curvature)
                    for m in kept
                ]
            ),
        )
    return Problem(
        grid=grid,
        env_map=env_map,
        noise=noise,
        tof_groups=tof_groups,
        gyro_groups=gyro_groups,
        strain_batch=strain_batch,
        priors=fx.prior_factors(grid, noise),
        window_length=window_length,
        options=options,
    )


# -- free-variable layout ------------------------------------------------------


class _Layout:
    """Maps free node blocks to offsets; the base row is excluded."""

    def __init__(self, grid: StateGrid):
        self.n_arc = grid.num_arclengths
        self.n_time = grid.num_times
        self.n_free = grid.num_free_nodes
        self.dim = NODE_DIM * self.n_free

    def node_offset(self, n: int, k: int) -> int | None:
        if n == 0:
            return None
        return (k * (self.n_arc - 1) + (n - 1)) * NODE_DIM

    def block_offset(self, n: int, k: int, block: str) -> int | None:
        base = self.node_offset(n, k)
        if base is None:
            return None
        return base + _BLOCK_OFFSET[block]


class _Accumulator:
    """Dense normal-equation accumulator that tracks its used bandwidth."""

    def __init__(self, dim: int):
        self.h = np.zeros((dim, dim))
        self.b = np.zeros(dim)
        self.bandwidth = 0

    def reset(self):
        self.h.fill(0.0)
        self.b.fill(0.0)
        self.bandwidth = 0

    def add_block(self, off_r: int, off_c: int, block: np.ndarray):
        rows, cols = block.shape
        self.h[off_r:off_r + rows, off_c:off_c + cols] += block
        self.bandwidth = max(
            self.bandwidth, abs(off_r - off_c) + max(rows, cols) - 1
        )

    def add_gradient(self, off: int, vec: np.ndarray):
        self.b[off:off + len(vec)] -= vec


# -- per-iteration ToF matching -----------------------------------------------


@dataclass
class _TofMatch:
    """Frozen correspondences of one group for a single iteration."""

    ray_mask: np.ndarray  # (M,) bool, rays with a map match
    map_points: np.ndarray
    normals: np.ndarray
    alphas: np.ndarray
    variances: np.ndarray


def _match_tof(problem: Problem, grid: StateGrid):
    matches = []
    matched = total = 0
    for group in problem.tof_groups:
        total += len(group.body_points)
        pose = grid.interpolate_pose(group.arclength, group.timestamp)
        world = (group.body_points @ pose.matrix().T)[:, :3]
        idx, _ = problem.env_map.query_nn_batch(
            world, problem.options.match_radius
        )
        ok = idx >= 0
        matched += int(ok.sum())
        i = idx[ok]
        matches.append(
            _TofMatch(
                ok,
                problem.env_map.positions[i],
                problem.env_map.normals[i],
                problem.env_map.planarity[i],
                group.variances[ok],
            )
        )
    return matches, matched, total


def _tof_errors(group: ToFFactorGroup, match: _TofMatch, grid: StateGrid):
    pose = grid.interpolate_pose(group.arclength, group.timestamp)
    world = (group.body_points[match.ray_mask] @ pose.matrix().T)[:, :3]
    errors = fx.point_to_plane_errors(
        world, match.map_points, match.normals, match.alphas
    )
    return pose, world, errors


def _quadratic_residuals(problem: Problem, grid: StateGrid):
    """Residual/jacobian/information triples for all non-ToF factors."""
    out = []
    for factor in problem.priors + problem.head_priors:
        residual = factor.residual(grid)
        if residual.size == 0:
            continue
        out.append((factor, residual))
    return out


def _total_cost(problem: Problem, grid: StateGrid, matches) -> float:
    cost = 0.0
    for group, match in zip(problem.tof_groups, matches):
        _, _, errors = _tof_errors(group, match, grid)
        cost += float(np.sum(0.5 * np.log1p(errors**2 / match.variances)))
    for group in problem.gyro_groups:
        res = _gyro_residuals(group, grid)
        cost += float(0.5 * np.sum(res**2) / problem.noise.gyro_sigma**2)
    if problem.strain_batch is not None:
        res = _strain_residuals(problem.strain_batch, grid)
        cost += float(0.5 * np.sum(res**2) / problem.noise.strain_sigma**2)
    for factor, residual in _quadratic_residuals(problem, grid):
        cost += float(0.5 * residual @ factor.information @ residual)
    return cost


def _gyro_residuals(group: GyroFactorGroup, grid: StateGrid) -> np.ndarray:
    out = np.empty((len(group.timestamps), 3))
    for i, t in enumerate(group.timestamps):
        out[i] = grid.interpolate_velocity(group.arclength, t)[3:]
    return out - (group.rates - group.bias)


def _strain_residuals(batch: StrainFactorBatch, grid: StateGrid) -> np.ndarray:
    out = np.empty((len(batch.timestamps), 6))
    for i in range(len(batch.timestamps)):
        out[i] = grid.interpolate_strain(batch.arclengths[i], batch.timestamps[i])
    return out - batch.measured


def _assemble(problem: Problem, grid: StateGrid, matches,
              acc: _Accumulator, layout: _Layout):
    acc.reset()
    # ToF point-to-plane factors with IRLS weights.
    for group, match in zip(problem.tof_groups, matches):
        if not np.any(match.ray_mask):
            continue
        pose, world, errors = _tof_errors(group, match, grid)
        weights = (1.0 / match.variances) / (1.0 + errors**2 / match.variances)
        rows = fx.tof_state_rows(world, match.normals, match.alphas)
        h_local = rows.T @ (rows * weights[:, None])
        g_local = rows.T @ (weights * errors)
        corner_weights = grid.interpolation_weights(
            group.arclength, group.timestamp
        )
        for (n_a, k_a), w_a in corner_weights:
            off_a = layout.block_offset(n_a, k_a, "pose")
            if off_a is None or w_a == 0.0:
                continue
            acc.add_gradient(off_a, w_a * g_local)
            for (n_b, k_b), w_b in corner_weights:
                off_b = layout.block_offset(n_b, k_b, "pose")
                if off_b is None or w_b == 0.0:
                    continue
                acc.add_block(off_a, off_b, (w_a * w_b) * h_local)
    # Gyro factors: angular velocity of the interpolated body rate.
    inv_gyro_var = 1.0 / problem.noise.gyro_sigma**2
    eye3 = np.eye(3)
    for group in problem.gyro_groups:
        res = _gyro_residuals(group, grid)
        for i, t in enumerate(group.timestamps):
            corner_weights = grid.interpolation_weights(group.arclength, t)
            for (n_a, k_a), w_a in corner_weights:
                off_a = layout.block_offset(n_a, k_a, "velocity")
                if off_a is None or w_a == 0.0:
                    continue
                acc.add_gradient(off_a + 3, w_a * inv_gyro_var * res[i])
                for (n_b, k_b), w_b in corner_weights:
                    off_b = layout.block_offset(n_b, k_b, "velocity")
                    if off_b is None or w_b == 0.0:
                        continue
                    acc.add_block(
                        off_a + 3, off_b + 3, (w_a * w_b * inv_gyro_var) * eye3
                    )
    # Strain factors.
    if problem.strain_batch is not None:
        inv_strain_var = 1.0 / problem.noise.strain_sigma**2
        eye6 = np.eye(6)
        batch = problem.strain_batch
        res = _strain_residuals(batch, grid)
        for i in range(len(batch.timestamps)):
            corner_weights = grid.interpolation_weights(
                batch.arclengths[i], batch.timestamps[i]
            )
            for (n_a, k_a), w_a in corner_weights:
                off_a = layout.block_offset(n_a, k_a, "strain")
                if off_a is None or w_a == 0.0:
                    continue
                acc.add_gradient(off_a, w_a * inv_strain_var * res[i])
                for (n_b, k_b), w_b in corner_weights:
                    off_b = layout.block_offset(n_b, k_b, "strain")
                    if off_b is None or w_b == 0.0:
                        continue
                    acc.add_block(
                        off_a, off_b, (w_a * w_b * inv_strain_var) * eye6
                    )
    # Prior and head-prior factors.
    for factor, residual in _quadratic_residuals(problem, grid):
        jacobians = factor.jacobians(grid)
        info = factor.information
        weighted = info @ residual
        entries = []
        for (n, k, block), jac in jacobians.items():
            off = layout.block_offset(n, k, block)
            if off is None:
                continue
            entries.append((off, jac))
            acc.add_gradient(off, jac.T @ weighted)
        for off_a, jac_a in entries:
            jw = jac_a.T @ info
            for off_b, jac_b in entries:
                acc.add_block(off_a, off_b, jw @ jac_b)


def _solve_normal_equations(acc: _Accumulator, damping: float) -> np.ndarray:
    dim = len(acc.b)
    h = acc.h
    if damping > 0.0:
        h = h + damping * np.eye(dim)
    bandwidth = min(acc.bandwidth, dim - 1)
    if bandwidth < dim // 3:
        ab = np.zeros((bandwidth + 1, dim))
        for d in range(bandwidth + 1):
            ab[bandwidth - d, d:] = np.diagonal(h, offset=d)
        delta = scipy.linalg.solveh_banded(ab, acc.b, lower=False)
    else:
        delta = scipy.linalg.solve(h, acc.b, assume_a="pos")
    if not np.all(np.isfinite(delta)):
        raise np.linalg.LinAlgError("non-finite solution")
    return delta


def gauss_newton_solve(problem: Problem) -> tuple[StateGrid, SolveReport]:
    """Minimize the window MAP cost; returns the new grid and a report.

    Raises :class:`UnobservableProblemError` when the normal equations stay
    singular at the damping cap.
    """
    grid = problem.grid.copy()
    options = problem.options
    layout = _Layout(grid)
    report = SolveReport()
    if layout.dim == 0:
        report.converged = True
        return grid, report
    acc = _Accumulator(layout.dim)
    for iteration in range(options.max_iterations):
        matches, matched, total = _match_tof(problem, grid)
        report.matched_rays, report.total_rays = matched, total
        cost = _total_cost(problem, grid, matches)
        if iteration == 0:
            report.cost_trace.append(cost)
        _assemble(problem, grid, matches, acc, layout)
        damping = 0.0
        accepted = None
        while True:
            try:
                delta = _solve_normal_equations(acc, damping)
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                delta = None
            if delta is not None:
                candidate = grid.apply_update(delta)
                new_cost = _total_cost(problem, candidate, matches)
                if new_cost <= cost * (1.0 + 1e-12) + 1e-15:
                    accepted = (candidate, new_cost, delta)
                    break
            report.damping_events += 1
            damping = (
                options.damping_init if damping == 0.0
                else damping * options.damping_factor
            )
            if damping > options.damping_cap:
                if delta is None:
                    raise UnobservableProblemError(
                        "normal equations singular at damping cap"
                    )
                break
        report.iterations = iteration + 1
        if accepted is None:
            break
        grid, cost, delta = accepted
        report.cost_trace.append(cost)
        step_norm = float(np.max(np.abs(delta)))
        report.step_norms.append(step_norm)
        if step_norm < options.step_tolerance:
            report.converged = True
            break
    report.final_cost = report.cost_trace[-1]
    problem.grid = grid
    return grid, report


def extract_covariances(problem: Problem, grid: StateGrid,
                        columns=None) -> None:
    """Fill per-node 18x18 Laplace covariance blocks in ``grid``.

    ``columns`` selects time-knot indices (all by default). The base row
    keeps zero covariance: it is clamped by construction.
    """
    layout = _Layout(grid)
    if layout.dim == 0:
        return
    matches, _, _ = _match_tof(problem, grid)
    acc = _Accumulator(layout.dim)
    _assemble(problem, grid, matches, acc, layout)
    if columns is None:
        columns = range(grid.num_times)
    offsets = []
    nodes = []
    for k in columns:
        for n in range(1, grid.num_arclengths):
            offsets.append(layout.node_offset(n, k))
            nodes.append((n, k))
    rhs = np.zeros((layout.dim, NODE_DIM * len(nodes)))
    for j, off in enumerate(offsets):
        for i in range(NODE_DIM):
            rhs[off + i, j * NODE_DIM + i] = 1.0
    solution = _solve_covariance(acc, rhs, problem.options)
    for j, (n, k) in enumerate(nodes):
        block = solution[
            offsets[j]:offsets[j] + NODE_DIM,
            j * NODE_DIM:(j + 1) * NODE_DIM,
        ]
        grid.covariances[n, k] = 0.5 * (block + block.T)


def _solve_covariance(acc: _Accumulator, rhs: np.ndarray,
                      options: GNOptions) -> np.ndarray:
    damping = 0.0
    while True:
        h = acc.h if damping == 0.0 else acc.h + damping * np.eye(len(acc.b))
        try:
            bandwidth = min(acc.bandwidth, len(acc.b) - 1)
            if bandwidth < len(acc.b) // 3:
                ab = np.zeros((bandwidth + 1, len(acc.b)))
                for d in range(bandwidth + 1):
                    ab[bandwidth - d, d:] = np.diagonal(h, offset=d)
                cb = scipy.linalg.cholesky_banded(ab, lower=False)
                return scipy.linalg.cho_solve_banded((cb, False), rhs)
            return scipy.linalg.cho_solve(scipy.linalg.cho_factor(h), rhs)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            damping = (
                options.damping_init if damping == 0.0
                else damping * options.damping_factor
            )
            if damping > options.damping_cap:
                raise UnobservableProblemError(
                    "information matrix singular at damping cap"
                ) from None


def observability_stats(grid: StateGrid, options: GNOptions):
    """Max pose translation std over free nodes and the weak-obs flag."""
    diag = np.diagonal(grid.covariances[1:, :, :3, :3], axis1=2, axis2=3)
    max_std = float(np.sqrt(np.clip(diag, 0.0, None).max())) if diag.size else 0.0
    return max_std, max_std > options.weak_pose_std


# -- sliding window -------------------------------------------------------------


_DEFAULT_HEAD_INFO = np.diag(
    np.concatenate([np.full(6, 1e8), np.full(12, 1e4)])
)


def slide_window(problem: Problem, new_time: float, new_scans=(),
                 new_gyro=(), new_strain=()) -> Problem:
    """Advance the window: freeze old knots, append an extrapolated column.

    Knots older than ``new_time - window_length`` drop out of the problem;
    the new head column receives unary priors at its current estimate with
    its Laplace covariance block (a strong default anchor when the block
    was never filled). The appended column extrapolates each node by its
    body velocity. Measurements outside the new window are discarded;
    freshly arrived ones are passed in by the caller.
    """
    grid = problem.grid
    if new_time <= grid.times[-1]:
        raise ValueError("new_time must extend the window")
    keep = grid.times >= new_time - problem.window_length - 1e-9
    k0 = int(np.argmax(keep))
    kept_times = grid.times[k0:]
    dt_new = new_time - grid.times[-1]
    new_grid = StateGrid(
        grid.arclengths.copy(),
        np.concatenate([kept_times, [new_time]]),
        grid.base_pose,
    )
    n_kept = len(kept_times)
    new_grid.poses[:, :n_kept] = grid.poses[:, k0:]
    new_grid.strains[:, :n_kept] = grid.strains[:, k0:]
    new_grid.velocities[:, :n_kept] = grid.velocities[:, k0:]
    new_grid.covariances[:, :n_kept] = grid.covariances[:, k0:]
    for n in range(grid.num_arclengths):
        last = Transform.from_matrix(grid.poses[n, -1])
        step = dt_new * grid.velocities[n, -1]
        new_grid.poses[n, n_kept] = (last @ geom.exp_se3(step)).matrix()
    new_grid.strains[:, n_kept] = grid.strains[:, -1]
    new_grid.velocities[:, n_kept] = grid.velocities[:, -1]
    head_priors = []
    for n in range(1, new_grid.num_arclengths):
        cov = new_grid.covariances[n, 0]
        if np.trace(cov) > 0.0:
            info = np.linalg.inv(cov + 1e-12 * np.eye(NODE_DIM))
            info = 0.5 * (info + info.T)
        else:
            info = _DEFAULT_HEAD_INFO
        head_priors.append(
            fx.NodePriorFactor(
                n, 0,
                new_grid.pose(n, 0),
                new_grid.strains[n, 0].copy(),
                new_grid.velocities[n, 0].copy(),
                info,
            )
        )
    t_lo = new_grid.times[0] - 1e-9
    t_hi = new_grid.times[-1] + 1e-9
    tof_groups = [
        g for g in problem.tof_groups if t_lo <= g.timestamp <= t_hi
    ]
    for scan in new_scans:
        if t_lo <= scan.timestamp <= t_hi:
            group = ToFFactorGroup.from_scan(scan, problem.noise)
            if len(group.body_points):
                tof_groups.append(group)
    gyro_groups = []
    new_gyro = list(new_gyro)
    for group in problem.gyro_groups:
        mask = (group.timestamps >= t_lo) & (group.timestamps <= t_hi)
        extra_t = [
            m.timestamp for m in new_gyro
            if m.sensor_id == group.sensor_id and t_lo <= m.timestamp <= t_hi
        ]
        extra_r = [
            m.angular_rate for m in new_gyro
            if m.sensor_id == group.sensor_id and t_lo <= m.timestamp <= t_hi
        ]
        timestamps = np.concatenate([group.timestamps[mask], extra_t])
        rates = (
            np.vstack([group.rates[mask]] + [np.atleast_2d(r) for r in extra_r])
            if extra_r else group.rates[mask]
        )
        if len(timestamps):
            gyro_groups.append(
                GyroFactorGroup(
                    group.sensor_id, group.arclength, timestamps, rates,
                    group.bias,
                )
            )
    strain_batch = problem.strain_batch
    new_strain = [m for m in new_strain if t_lo <= m.timestamp <= t_hi]
    if strain_batch is not None or new_strain:
        arcs, times, meas = [], [], []
        if strain_batch is not None:
            mask = (strain_batch.timestamps >= t_lo) & (
                strain_batch.timestamps <= t_hi
            )
            arcs.append(strain_batch.arclengths[mask])
            times.append(strain_batch.timestamps[mask])
            meas.append(strain_batch.measured[mask])
        if new_strain:
            arcs.append(np.array([m.arclength for m in new_strain]))
            times.append(np.array([m.timestamp for m in new_strain]))
            meas.append(
                np.stack(
                    [
                        fx.strain_from_angle_curvature(
                            m.bending_angle, m.curvature
                        )
                        for m in new_strain
                    ]
                )
            )
        arclengths = np.concatenate(arcs)
        strain_batch = (
            StrainFactorBatch(
                arclengths, np.concatenate(times), np.vstack(meas)
            )
            if len(arclengths) else None
        )
    return Problem(
        grid=new_grid,
        env_map=problem.env_map,
        noise=problem.noise,
        tof_groups=tof_groups,
        gyro_groups=gyro_groups,
        strain_batch=strain_batch,
        priors=fx.prior_factors(new_grid, problem.noise),
        head_priors=head_priors,
        window_length=problem.window_length,
        options=problem.options,
    )


# -- gyro bias calibration --------------------------------------------------------


def estimate_gyro_bias(stationary_measurements,
                       min_samples: int = 50) -> dict[str, np.ndarray]:
    """Per-sensor mean angular rate over a stationary log."""
    by_sensor: dict[str, list] = {}
    for m in stationary_measurements:
        by_sensor.setdefault(m.sensor_id, []).append(m.angular_rate)
    if not by_sensor:
        raise InsufficientCalibrationError("no stationary gyro samples")
    out = {}
    for sensor_id, rates in sorted(by_sensor.items()):
        if len(rates) < min_samples:
            raise InsufficientCalibrationError(
                f"{sensor_id}: {len(rates)} stationary samples, "
                f"need {min_samples}"
            )
        out[sensor_id] = np.mean(np.stack(rates), axis=0)
    return out
