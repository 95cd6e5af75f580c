"""End-to-end stages: simulate, localize, reconstruct, detect, evaluate.

Each stage reads and writes plain artifacts (JSON-lines logs, PLY clouds,
JSON estimates, CSV metrics) so stages can be rerun independently; under a
fixed seed every artifact is byte-identical across runs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import config as cfg
from . import envmap, logs, ply, recon, solver
from .envmap import build_map
from .errors import DataError
from .factors import NoiseModel
from .geom import Transform
from .simkit import (
    AnomalyEdit,
    SensorSpec,
    SimRobot,
    SimScene,
    apply_anomalies,
    box_mesh,
    build_rig,
    load_obj,
    load_stl,
    make_box_room,
    make_joint_trajectory,
    poisson_disk_sample,
    run_simulation,
    tof_ray_directions,
)
from .state import StateGrid


# -- config adapters -------------------------------------------------------


def sensor_spec(config: cfg.RunConfig) -> SensorSpec:
    s = config.sensors
    return SensorSpec(
        tof_grid=s.tof_grid,
        tof_fov=np.deg2rad(s.tof_fov_deg),
        tof_max_range=s.tof_max_range,
        tof_rate=s.tof_rate_hz,
        gyro_sigma=s.gyro_sigma,
        gyro_rate=s.gyro_rate_hz,
        gyro_bias=np.asarray(s.gyro_bias, dtype=float),
        strain_sigma_kappa=s.strain_sigma_kappa,
        strain_sigma_theta=s.strain_sigma_theta,
        strain_rate=s.strain_rate_hz,
        strain_spacing=s.strain_spacing,
    )


def rig_mounts(config: cfg.RunConfig):
    r = config.robot
    offsets = [
        np.deg2rad(r.ring_axial_offset_deg) * i
        for i in range(len(r.ring_stations))
    ]
    return build_rig(
        r.ring_stations,
        offsets,
        sensors_per_ring=r.sensors_per_ring,
        disc_radius=r.disc_radius,
        tip_arclength=r.length if r.tip_sensor else None,
    )


def make_robot(config: cfg.RunConfig) -> SimRobot:
    r = config.robot
    t = config.sim.trajectory
    trajectory = make_joint_trajectory(
        t.kind,
        r.link_count,
        r.length,
        amplitude=t.amplitude,
        frequency=t.frequency,
        plane_rate=t.plane_rate,
        start_time=t.start_time,
        ramp_time=t.ramp_time,
    )
    return SimRobot(
        r.length / r.link_count,
        r.link_count,
        trajectory,
        base_pose=Transform(np.eye(3), np.asarray(r.base_position, dtype=float)),
        ring_stations=tuple(r.ring_stations),
    )


def load_scene_file(path) -> SimScene:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        mesh = load_obj(path, label=path.stem)
    elif path.suffix.lower() == ".stl":
        mesh = load_stl(path, label=path.stem)
    else:
        raise DataError(f"{path}: unsupported mesh format")
    return SimScene().add(mesh)


def make_scenes(config: cfg.RunConfig, scene_file=None):
    """(prior scene, true scene): anomaly edits only affect the true one."""
    if scene_file is not None:
        prior = load_scene_file(scene_file)
    else:
        prior = SimScene()
        prior.add(make_box_room(config.sim.room_size))
        for obstacle in config.sim.obstacles:
            prior.add(
                box_mesh(obstacle.center, obstacle.size, obstacle.label)
            )
    edits = [
        AnomalyEdit(
            a.op, a.label,
            box_mesh(a.center, a.size, a.label) if a.op == "add" else None,
        )
        for a in config.sim.anomalies
    ]
    return prior, apply_anomalies(prior, edits)


def noise_model(config: cfg.RunConfig) -> NoiseModel:
    return NoiseModel(
        sigma_extra=config.noise.sigma_extra,
        gyro_sigma=config.noise.gyro_sigma,
        strain_sigma=config.noise.strain_sigma,
        shape_prior_sigma=config.priors.shape_sigma,
        motion_prior_sigma=config.priors.motion_sigma,
        smoothness_sigma=config.priors.smoothness_sigma,
    )


def gn_options(config: cfg.RunConfig) -> solver.GNOptions:
    s = config.solver
    return solver.GNOptions(
        max_iterations=s.max_iterations,
        step_tolerance=s.step_tolerance,
        damping_init=s.damping_init,
        damping_factor=s.damping_factor,
        damping_cap=s.damping_cap,
        match_radius=s.match_radius,
        weak_pose_std=s.weak_pose_std,
    )


# -- stages ---------------------------------------------------------------


def run_simulate(config: cfg.RunConfig, out_dir, scene_file=None) -> dict:
    """Generate sensor/truth logs plus prior- and true-scene maps."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prior_scene, true_scene = make_scenes(config, scene_file)
    robot = make_robot(config)
    mounts = rig_mounts(config)
    spec = sensor_spec(config)
    records = run_simulation(
        robot, true_scene, mounts, spec, config.sim.duration,
        seed=config.sim.seed,
    )
    paths = {
        "sensor_log": out / "sensor_log.jsonl",
        "ground_truth": out / "ground_truth.jsonl",
        "prior_map": out / "prior_map.ply",
        "true_map": out / "true_map.ply",
    }
    logs.write_sensor_log(paths["sensor_log"], records)
    logs.write_ground_truth(paths["ground_truth"], records.truth)
    sample_seed = np.random.SeedSequence([config.sim.seed, 7]).spawn(2)
    for scene, key, seed in (
        (prior_scene, "prior_map", sample_seed[0]),
        (true_scene, "true_map", sample_seed[1]),
    ):
        points = poisson_disk_sample(
            scene.meshes(), config.map.sample_spacing,
            np.random.default_rng(seed),
        )
        ply.write_points(paths[key], points)
    return {k: str(v) for k, v in paths.items()}


def load_environment_map(config: cfg.RunConfig, map_path) -> envmap.EnvironmentMap:
    points, _ = ply.read_points(map_path)
    return build_map(
        points,
        voxel_size=config.map.voxel_size,
        k_neighbors=config.map.k_neighbors,
        sigma_nn=config.map.sigma_nn,
        orient_toward=np.asarray(config.map.orient_center, dtype=float),
    )


def run_localize(config: cfg.RunConfig, log_path, map_path, out_dir) -> dict:
    """Sliding-window estimation over the full log; writes the estimate."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mounts = rig_mounts(config)
    spec = sensor_spec(config)
    rays = tof_ray_directions(spec.tof_grid, spec.tof_fov)
    records, skipped = logs.read_sensor_log(log_path, mounts, rays)
    env_map = load_environment_map(config, map_path)
    noise = noise_model(config)
    options = gn_options(config)
    biases = solver.estimate_gyro_bias(
        [
            m for m in records.gyro
            if m.timestamp <= config.sim.stationary_duration + 1e-9
        ]
    )
    grid_result, reports = _sliding_estimation(
        config, records, env_map, noise, options, biases
    )
    max_std, weak = solver.observability_stats(grid_result, options)
    estimate_path = out / "estimate.json"
    with open(estimate_path, "w", encoding="ascii") as fh:
        json.dump(grid_result.to_dict(), fh, sort_keys=True)
    report_path = out / "solve_report.json"
    with open(report_path, "w", encoding="ascii") as fh:
        json.dump(
            {
                "windows": [r.to_dict() for r in reports],
                "skipped_records": skipped,
                "gyro_biases": {k: v.tolist() for k, v in sorted(biases.items())},
                "weak_observability": weak,
                "max_pose_std": max_std,
            },
            fh,
            sort_keys=True,
        )
    envmap.save_map_ply(env_map, out / "augmented_map.ply")
    return {
        "estimate": str(estimate_path),
        "report": str(report_path),
        "grid": grid_result,
        "weak_observability": weak,
    }


def _sliding_estimation(config, records, env_map, noise, options, biases):
    knot_dt = 1.0 / config.grid.time_rate_hz
    ds = config.grid.arclength_spacing
    arclengths = np.arange(0.0, config.robot.length + 1e-9, ds)
    base_pose = Transform(
        np.eye(3), np.asarray(config.robot.base_position, dtype=float)
    )
    stamps = [s.timestamp for s in records.scans]
    stamps += [m.timestamp for m in records.gyro]
    stamps += [m.timestamp for m in records.strain]
    if not stamps:
        raise DataError("sensor log carries no measurements")
    t_end = max(stamps)
    total_knots = int(np.ceil(t_end / knot_dt - 1e-9)) + 1
    knots = np.arange(total_knots) * knot_dt
    window_knots = min(
        int(round(config.solver.window_length / knot_dt)) + 1, total_knots
    )
    grid = StateGrid.create(arclengths, knots[:window_knots], base_pose)
    scan_times = np.array([s.timestamp for s in records.scans])
    gyro_times = np.array([m.timestamp for m in records.gyro])
    strain_times = np.array([m.timestamp for m in records.strain])

    def in_range(times, lo, hi):
        return np.flatnonzero((times > lo + 1e-12) & (times <= hi + 1e-12))

    problem = solver.build_problem(
        grid, env_map, noise,
        scans=records.scans,
        gyro_measurements=records.gyro,
        strain_measurements=records.strain,
        biases=biases,
        window_length=config.solver.window_length,
        options=options,
    )
    grid, report = solver.gauss_newton_solve(problem)
    reports = [report]
    stride = config.solver.slide_stride_knots
    snapshots: dict[float, tuple] = {}
    tail = window_knots - 1

    def snapshot(columns):
        for k in columns:
            t = float(problem.grid.times[k])
            snapshots[t] = (
                problem.grid.poses[:, k].copy(),
                problem.grid.strains[:, k].copy(),
                problem.grid.velocities[:, k].copy(),
                problem.grid.covariances[:, k].copy(),
            )

    while tail < total_knots - 1:
        advance = min(stride, total_knots - 1 - tail)
        solver.extract_covariances(
            problem, problem.grid, columns=range(advance + 1)
        )
        snapshot(range(advance))
        for step in range(advance):
            t_new = float(knots[tail + 1 + step])
            t_old = float(problem.grid.times[-1])
            problem = solver.slide_window(
                problem, t_new,
                new_scans=[
                    records.scans[i]
                    for i in in_range(scan_times, t_old, t_new)
                ],
                new_gyro=[
                    records.gyro[i]
                    for i in in_range(gyro_times, t_old, t_new)
                ],
                new_strain=[
                    records.strain[i]
                    for i in in_range(strain_times, t_old, t_new)
                ],
            )
        grid, report = solver.gauss_newton_solve(problem)
        reports.append(report)
        tail += advance
    solver.extract_covariances(problem, problem.grid)
    snapshot(range(problem.grid.num_times))
    times = np.array(sorted(snapshots))
    result = StateGrid(arclengths, times, base_pose)
    for k, t in enumerate(times):
        poses, strains, velocities, covariances = snapshots[float(t)]
        result.poses[:, k] = poses
        result.strains[:, k] = strains
        result.velocities[:, k] = velocities
        result.covariances[:, k] = covariances
    return result, reports


def load_estimate(path) -> StateGrid:
    with open(path, "r", encoding="ascii") as fh:
        return StateGrid.from_dict(json.load(fh))


def _scans_with_labels(config: cfg.RunConfig, log_path):
    mounts = rig_mounts(config)
    spec = sensor_spec(config)
    rays = tof_ray_directions(spec.tof_grid, spec.tof_fov)
    records, _ = logs.read_sensor_log(log_path, mounts, rays)
    return records


def run_reconstruct(config: cfg.RunConfig, estimate_path, log_path,
                    out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = load_estimate(estimate_path)
    records = _scans_with_labels(config, log_path)
    cloud = recon.reconstruct_scene(
        grid, records.scans, noise_model(config),
        scan_labels=records.scan_labels,
    )
    cloud_path = out / "reconstruction.ply"
    recon.save_cloud_ply(cloud, cloud_path)
    return {"cloud": str(cloud_path), "num_points": len(cloud)}


def run_detect(config: cfg.RunConfig, estimate_path, log_path, map_path,
               out_dir, tau: float | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = load_estimate(estimate_path)
    records = _scans_with_labels(config, log_path)
    env_map = load_environment_map(config, map_path)
    cloud = recon.reconstruct_scene(
        grid, records.scans, noise_model(config),
        scan_labels=records.scan_labels,
    )
    anomaly_labels = {
        a.label for a in config.sim.anomalies if a.op == "add"
    }
    true_anomalous = None
    if anomaly_labels and cloud.source_labels is not None:
        names = records.label_names
        anomalous_ids = {
            i for i, name in enumerate(names) if name in anomaly_labels
        }
        true_anomalous = np.isin(
            cloud.source_labels, sorted(anomalous_ids)
        )
    report = recon.detect_anomalies(
        cloud, env_map,
        tau=config.detect.tau if tau is None else tau,
        nn_radius=config.detect.nn_radius,
        true_anomalous=true_anomalous,
    )
    report_path = out / "anomalies.json"
    with open(report_path, "w", encoding="ascii") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True)
    return {"report": str(report_path), "anomalies": report}


def run_eval(config: cfg.RunConfig, estimate_path, truth_path,
             out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = load_estimate(estimate_path)
    truth = logs.read_ground_truth(truth_path)
    table = recon.evaluate_localization(
        grid, truth, time_tolerance=config.eval.time_tolerance
    )
    metrics_path = out / "metrics.csv"
    table.to_csv(metrics_path)
    return {"metrics": str(metrics_path), "table": table}
