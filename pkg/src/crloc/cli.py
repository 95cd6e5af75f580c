"""Command-line front end.

Subcommands run the pipeline stages: simulate, localize, reconstruct,
detect, eval. Exit codes: 0 success, 2 configuration error, 3 data error,
4 solver failure.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError, CrlocError, DataError, \
    InsufficientCalibrationError, UnobservableProblemError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SOLVER = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crloc",
        description=(
            "Continuum-robot localization against a prior map from "
            "distributed ToF, gyro, and strain sensing, with a deterministic "
            "desk-scale simulator."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file (defaults if omitted)")
        p.add_argument("--out", help="output directory (default from config)")

    p_sim = sub.add_parser("simulate", help="generate sensor logs and maps")
    common(p_sim)
    p_sim.add_argument("--seed", type=int, help="override sim.seed")
    p_sim.add_argument("--scene", help="OBJ/STL scene file instead of the "
                                       "built-in box room")

    p_loc = sub.add_parser("localize", help="estimate the trajectory")
    common(p_loc)
    p_loc.add_argument("--log", help="sensor log (JSON lines)")
    p_loc.add_argument("--map", help="prior map PLY")
    p_loc.add_argument("--window", type=float, help="override window length [s]")

    p_rec = sub.add_parser("reconstruct", help="project returns into a cloud")
    common(p_rec)
    p_rec.add_argument("--estimate", help="estimate JSON from localize")
    p_rec.add_argument("--log", help="sensor log (JSON lines)")

    p_det = sub.add_parser("detect", help="flag anomalies against the map")
    common(p_det)
    p_det.add_argument("--estimate", help="estimate JSON from localize")
    p_det.add_argument("--log", help="sensor log (JSON lines)")
    p_det.add_argument("--map", help="prior map PLY")
    p_det.add_argument("--tau", type=float, help="override detect.tau")

    p_eval = sub.add_parser("eval", help="localization error metrics")
    common(p_eval)
    p_eval.add_argument("--estimate", help="estimate JSON from localize")
    p_eval.add_argument("--truth", help="ground-truth log (JSON lines)")
    return parser


def _resolve(flag_value, config_value, name):
    value = flag_value if flag_value is not None else config_value
    if value is None:
        raise ConfigError(f"missing required input: {name}")
    return value


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        out_dir = args.out if args.out is not None else config.paths.out_dir
        if args.command == "simulate":
            if args.seed is not None:
                config.sim.seed = args.seed
            scene = args.scene if args.scene is not None else config.paths.scene
            paths = pipeline.run_simulate(config, out_dir, scene_file=scene)
            for key, value in sorted(paths.items()):
                print(f"{key}: {value}")
        elif args.command == "localize":
            if args.window is not None:
                config.solver.window_length = args.window
            log = _resolve(args.log, config.paths.log, "--log")
            map_path = _resolve(args.map, config.paths.map, "--map")
            result = pipeline.run_localize(config, log, map_path, out_dir)
            print(f"estimate: {result['estimate']}")
            print(f"report: {result['report']}")
            if result["weak_observability"]:
                print("warning: weak observability (pose covariance high)")
        elif args.command == "reconstruct":
            estimate = _resolve(args.estimate, config.paths.estimate,
                                "--estimate")
            log = _resolve(args.log, config.paths.log, "--log")
            result = pipeline.run_reconstruct(config, estimate, log, out_dir)
            print(f"cloud: {result['cloud']} ({result['num_points']} points)")
        elif args.command == "detect":
            estimate = _resolve(args.estimate, config.paths.estimate,
                                "--estimate")
            log = _resolve(args.log, config.paths.log, "--log")
            map_path = _resolve(args.map, config.paths.map, "--map")
            result = pipeline.run_detect(
                config, estimate, log, map_path, out_dir, tau=args.tau
            )
            report = result["anomalies"]
            print(f"report: {result['report']}")
            print(
                f"flagged {int(report.flagged.sum())} of "
                f"{len(report.scores)} points at tau={report.tau}"
            )
        elif args.command == "eval":
            estimate = _resolve(args.estimate, config.paths.estimate,
                                "--estimate")
            truth = _resolve(args.truth, config.paths.truth, "--truth")
            result = pipeline.run_eval(config, estimate, truth, out_dir)
            pooled = result["table"].pooled
            print(f"metrics: {result['metrics']}")
            print(
                f"pooled translation MAE {pooled.translation_mae * 100:.3f} cm, "
                f"rotation MAE {pooled.rotation_mae * 180 / 3.141592653589793:.3f} deg"
            )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UnobservableProblemError, InsufficientCalibrationError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CrlocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
