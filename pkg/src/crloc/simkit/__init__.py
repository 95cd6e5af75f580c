"""Deterministic desk-scale simulator: robot kinematics, scenes, sensors."""

from .mesh import TriangleMesh, box_mesh, cast_rays, load_obj, load_stl, \
    point_mesh_distance
from .robot import SimRobot, make_joint_trajectory
from .sampling import poisson_disk_sample
from .scene import AnomalyEdit, SimScene, apply_anomalies, build_desk_scene, \
    make_box_room
from .sensors import (
    RingPoseRecord,
    SensorSpec,
    SimRecords,
    ToFMount,
    build_rig,
    forward_extrinsic,
    radial_extrinsic,
    raycast_tof,
    run_simulation,
    sim_gyro,
    sim_strain,
    tof_ray_directions,
)

__all__ = [
    "AnomalyEdit",
    "RingPoseRecord",
    "SensorSpec",
    "SimRecords",
    "SimRobot",
    "SimScene",
    "ToFMount",
    "TriangleMesh",
    "apply_anomalies",
    "box_mesh",
    "build_desk_scene",
    "build_rig",
    "cast_rays",
    "forward_extrinsic",
    "load_obj",
    "load_stl",
    "make_box_room",
    "make_joint_trajectory",
    "point_mesh_distance",
    "poisson_disk_sample",
    "radial_extrinsic",
    "raycast_tof",
    "run_simulation",
    "sim_gyro",
    "sim_strain",
    "tof_ray_directions",
]
