"""JSON-lines sensor logs and ground-truth logs.

One record per line: a leading meta record names the scene objects, then
``tof`` records (one per frame, with per-ray hit labels for evaluation
only), ``gyro`` and ``strain`` records, in simulation order. Floats are
serialized with repr so identical runs produce identical files.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError
from .factors import GyroMeasurement, StrainMeasurement, ToFScan
from .geom import Transform
from .simkit.sensors import RingPoseRecord, SimRecords


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_sensor_log(path, records: SimRecords):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_dump({"type": "meta", "labels": records.label_names}) + "\n")
        for scan, labels in zip(records.scans, records.scan_labels):
            fh.write(
                _dump(
                    {
                        "type": "tof",
                        "sensor_id": scan.sensor_id,
                        "timestamp": scan.timestamp,
                        "arclength": scan.arclength,
                        "distances": scan.distances.tolist(),
                        "valid": scan.valid.astype(int).tolist(),
                        "hit_labels": np.asarray(labels).tolist(),
                    }
                )
                + "\n"
            )
        for m in records.gyro:
            fh.write(
                _dump(
                    {
                        "type": "gyro",
                        "sensor_id": m.sensor_id,
                        "timestamp": m.timestamp,
                        "arclength": m.arclength,
                        "rate": m.angular_rate.tolist(),
                    }
                )
                + "\n"
            )
        for m in records.strain:
            fh.write(
                _dump(
                    {
                        "type": "strain",
                        "timestamp": m.timestamp,
                        "arclength": m.arclength,
                        "bending_angle": m.bending_angle,
                        "curvature": m.curvature,
                    }
                )
                + "\n"
            )


def read_sensor_log(path, mounts, ray_directions) -> tuple[SimRecords, int]:
    """Parse a sensor log; returns (records, skipped-record count).

    ``mounts`` supplies the per-sensor extrinsics; ``ray_directions`` the
    shared (64, 3) sensor-frame ray grid. Unparseable lines are skipped
    and counted rather than fatal; an empty log raises.
    """
    extrinsics = {m.sensor_id: m.extrinsic for m in mounts}
    records = SimRecords()
    skipped = 0
    total = 0
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                rec = json.loads(line)
                kind = rec["type"]
                if kind == "meta":
                    records.label_names = list(rec["labels"])
                elif kind == "tof":
                    extrinsic = extrinsics.get(rec["sensor_id"])
                    if extrinsic is None:
                        raise KeyError(rec["sensor_id"])
                    records.scans.append(
                        ToFScan(
                            rec["sensor_id"],
                            float(rec["timestamp"]),
                            float(rec["arclength"]),
                            extrinsic,
                            ray_directions,
                            np.asarray(rec["distances"], dtype=float),
                            np.asarray(rec["valid"], dtype=bool),
                        )
                    )
                    records.scan_labels.append(
                        np.asarray(rec["hit_labels"], dtype=np.int64)
                    )
                elif kind == "gyro":
                    records.gyro.append(
                        GyroMeasurement(
                            np.asarray(rec["rate"], dtype=float),
                            float(rec["arclength"]),
                            float(rec["timestamp"]),
                            rec["sensor_id"],
                        )
                    )
                elif kind == "strain":
                    records.strain.append(
                        StrainMeasurement(
                            float(rec["bending_angle"]),
                            float(rec["curvature"]),
                            float(rec["arclength"]),
                            float(rec["timestamp"]),
                        )
                    )
                else:
                    skipped += 1
            except (KeyError, ValueError, TypeError, json.JSONDecodeError):
                skipped += 1
    if total == 0 or total == skipped:
        raise DataError(f"{path}: empty or fully unparseable sensor log")
    return records, skipped


def write_ground_truth(path, truth_records):
    with open(path, "w", encoding="ascii") as fh:
        for record in truth_records:
            fh.write(
                _dump(
                    {
                        "type": "ring_pose",
                        "ring_id": record.ring_id,
                        "arclength": record.arclength,
                        "timestamp": record.timestamp,
                        "pose": np.asarray(record.pose).reshape(-1).tolist(),
                    }
                )
                + "\n"
            )


def read_ground_truth(path) -> list[RingPoseRecord]:
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("type") != "ring_pose":
                continue
            out.append(
                RingPoseRecord(
                    rec["ring_id"],
                    float(rec["arclength"]),
                    float(rec["timestamp"]),
                    np.asarray(rec["pose"], dtype=float).reshape(4, 4),
                )
            )
    if not out:
        raise DataError(f"{path}: no ring poses found")
    return out
