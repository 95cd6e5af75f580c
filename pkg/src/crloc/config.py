"""Run configuration: defaults, YAML load/save, env-var overrides.

Every tunable of the estimator, simulator, and pipeline lives here with
its default. Parsing is strict: unknown keys are rejected so typos fail
loudly. Environment variables prefixed ``CRLOC_`` override single values,
e.g. ``CRLOC_SOLVER__MAX_ITERATIONS=30`` (section and field joined by a
double underscore).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError

ENV_PREFIX = "CRLOC_"


@dataclass
class RobotConfig:
    length: float = 0.5
    link_count: int = 50
    disc_radius: float = 0.015
    ring_stations: list = field(default_factory=lambda: [0.15, 0.30, 0.45])
    ring_axial_offset_deg: float = 60.0
    sensors_per_ring: int = 3
    tip_sensor: bool = True
    base_position: list = field(default_factory=lambda: [-0.35, 0.0, 0.0])


@dataclass
class GridConfig:
    arclength_spacing: float = 0.1
    time_rate_hz: float = 10.0


@dataclass
class SensorsConfig:
    tof_grid: int = 8
    tof_fov_deg: float = 45.0
    tof_max_range: float = 4.0
    tof_rate_hz: float = 15.0
    gyro_sigma: float = 0.01
    gyro_rate_hz: float = 100.0
    gyro_bias: list = field(default_factory=lambda: [0.002, -0.001, 0.0015])
    strain_sigma_kappa: float = 0.01
    strain_sigma_theta: float = 0.015
    strain_rate_hz: float = 20.0
    strain_spacing: float = 0.03


@dataclass
class NoiseConfig:
    sigma_extra: float = 0.005
    gyro_sigma: float = 0.01
    strain_sigma: float = 0.02


@dataclass
class PriorsConfig:
    shape_sigma: float = 0.02
    motion_sigma: float = 0.05
    smoothness_sigma: float = 0.1


@dataclass
class SolverConfig:
    window_length: float = 2.0
    slide_stride_knots: int = 5
    max_iterations: int = 20
    step_tolerance: float = 1e-6
    damping_init: float = 1e-6
    damping_factor: float = 10.0
    damping_cap: float = 100.0
    match_radius: float = 0.1
    weak_pose_std: float = 5e-3


@dataclass
class MapConfig:
    voxel_size: float = 0.05
    k_neighbors: int = 20
    sigma_nn: float = 0.001
    sample_spacing: float = 0.02
    orient_center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class ObstacleConfig:
    label: str = "obstacle"
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    size: list = field(default_factory=lambda: [0.1, 0.1, 0.1])


@dataclass
class AnomalyConfig:
    op: str = "add"
    label: str = "anomaly"
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    size: list = field(default_factory=lambda: [0.1, 0.1, 0.1])


@dataclass
class TrajectoryConfig:
    kind: str = "ramped_sweep"
    amplitude: float = 0.03
    frequency: float = 0.25
    plane_rate: float = 0.6
    start_time: float = 1.0
    ramp_time: float = 1.5


@dataclass
class SimConfig:
    duration: float = 10.0
    seed: int = 42
    room_size: float = 1.0
    stationary_duration: float = 1.0
    obstacles: list = field(
        default_factory=lambda: [
            ObstacleConfig("crate", [0.3, -0.35, -0.3], [0.25, 0.25, 0.35]),
            ObstacleConfig("shelf", [-0.2, 0.38, 0.28], [0.3, 0.2, 0.16]),
            ObstacleConfig("post", [0.38, 0.3, 0.0], [0.12, 0.12, 0.9]),
        ]
    )
    anomalies: list = field(default_factory=list)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)


@dataclass
class DetectConfig:
    tau: float = 9.0
    nn_radius: float = 1.0


@dataclass
class EvalConfig:
    time_tolerance: float = 1e-3


@dataclass
class PathsConfig:
    out_dir: str = "out"
    scene: str | None = None
    map: str | None = None
    log: str | None = None
    estimate: str | None = None
    truth: str | None = None


@dataclass
class RunConfig:
    robot: RobotConfig = field(default_factory=RobotConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    sensors: SensorsConfig = field(default_factory=SensorsConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    priors: PriorsConfig = field(default_factory=PriorsConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    map: MapConfig = field(default_factory=MapConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self):
        positive = {
            "sensors.gyro_sigma": self.sensors.gyro_sigma,
            "sensors.strain_sigma_kappa": self.sensors.strain_sigma_kappa,
            "sensors.strain_sigma_theta": self.sensors.strain_sigma_theta,
            "noise.sigma_extra": self.noise.sigma_extra,
            "noise.gyro_sigma": self.noise.gyro_sigma,
            "noise.strain_sigma": self.noise.strain_sigma,
            "priors.shape_sigma": self.priors.shape_sigma,
            "priors.motion_sigma": self.priors.motion_sigma,
            "priors.smoothness_sigma": self.priors.smoothness_sigma,
            "map.voxel_size": self.map.voxel_size,
            "map.sigma_nn": self.map.sigma_nn,
            "map.sample_spacing": self.map.sample_spacing,
            "grid.arclength_spacing": self.grid.arclength_spacing,
            "grid.time_rate_hz": self.grid.time_rate_hz,
            "solver.window_length": self.solver.window_length,
            "robot.length": self.robot.length,
        }
        for name, value in positive.items():
            if value <= 0.0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.robot.link_count < 2:
            raise ConfigError("robot.link_count must be at least 2")
        for s in self.robot.ring_stations:
            if not 0.0 <= s <= self.robot.length:
                raise ConfigError(
                    f"ring station {s} outside [0, {self.robot.length}]"
                )
        if self.solver.slide_stride_knots < 1:
            raise ConfigError("solver.slide_stride_knots must be >= 1")
        return self


_LIST_FIELDS = {
    ("sim", "obstacles"): ObstacleConfig,
    ("sim", "anomalies"): AnomalyConfig,
}


def _from_dict(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(
            f"{path or 'config'}: unknown keys {sorted(unknown)}"
        )
    kwargs = {}
    for name, value in data.items():
        spec = known[name]
        target = spec.type if isinstance(spec.type, type) else None
        sub_path = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(target):
            kwargs[name] = _from_dict(target, value, sub_path)
        elif isinstance(value, dict) and _nested_type(cls, name):
            kwargs[name] = _from_dict(_nested_type(cls, name), value, sub_path)
        elif isinstance(value, list) and _list_element(cls, name):
            element = _list_element(cls, name)
            kwargs[name] = [
                _from_dict(element, item, f"{sub_path}[{i}]")
                for i, item in enumerate(value)
            ]
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _nested_type(cls, name):
    default = getattr(cls(), name, None)
    return type(default) if dataclasses.is_dataclass(default) else None


def _list_element(cls, name):
    for (owner, field_name), element in _LIST_FIELDS.items():
        if field_name == name and cls.__name__.lower().startswith(owner):
            return element
    return None


def _to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {
            f.name: _to_dict(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
        }
    if isinstance(obj, (list, tuple)):
        return [_to_dict(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def default_config() -> RunConfig:
    return RunConfig()


def load_config(path=None, apply_env: bool = True) -> RunConfig:
    """Config from YAML (defaults when ``path`` is None), env applied last."""
    if path is None:
        config = RunConfig()
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        config = _from_dict(RunConfig, data)
    if apply_env:
        config = apply_env_overrides(config)
    return config.validate()


def save_config(config: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(_to_dict(config), fh, sort_keys=False)


def config_dict(config: RunConfig) -> dict:
    return _to_dict(config)


def apply_env_overrides(config: RunConfig,
                        environ=None) -> RunConfig:
    """Apply ``CRLOC_SECTION__FIELD=value`` overrides (YAML-parsed values)."""
    environ = os.environ if environ is None else environ
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        if len(parts) != 2:
            raise ConfigError(
                f"{key}: expected {ENV_PREFIX}SECTION__FIELD"
            )
        section, field_name = parts
        if not hasattr(config, section):
            raise ConfigError(f"{key}: unknown config section {section!r}")
        target = getattr(config, section)
        if not hasattr(target, field_name):
            raise ConfigError(
                f"{key}: unknown field {field_name!r} in {section!r}"
            )
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{key}: unparseable value {raw!r}") from exc
        setattr(target, field_name, value)
    return config
