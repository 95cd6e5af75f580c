"""Continuum-robot localization from sparse distributed ToF, gyro, and
strain sensing against a prior point-cloud map, with a deterministic
desk-scale simulator."""

from .envmap import EnvironmentMap, MapPoint, build_map
from .factors import (
    GyroMeasurement,
    NoiseModel,
    StrainMeasurement,
    ToFMeasurement,
    ToFScan,
    cauchy_weight,
    gyro_residual,
    prior_factors,
    strain_from_angle_curvature,
    strain_residual,
    tof_jacobian,
    tof_residual,
    tof_sigma,
)
from .geom import Transform, adjoint, exp_se3, log_se3, odot, wedge
from .recon import (
    AnomalyReport,
    ReconstructedCloud,
    detect_anomalies,
    evaluate_localization,
    project_point,
    reconstruct_scene,
)
from .solver import (
    GNOptions,
    Problem,
    SolveReport,
    build_problem,
    estimate_gyro_bias,
    gauss_newton_solve,
    slide_window,
)
from .state import StateGrid, StateNode

__version__ = "0.1.0"
