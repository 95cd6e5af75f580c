"""Minimal PLY point-cloud reader/writer (ASCII and binary little-endian).

Only vertex elements are handled; faces are ignored on read. Writing is
ASCII with repr-exact floats so that identical inputs produce identical
files.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

_PLY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "<u1",
    "uint8": "<u1",
    "char": "<i1",
    "int8": "<i1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}


def read_ply(path) -> dict[str, np.ndarray]:
    """Read vertex properties into a dict of 1-D arrays keyed by name."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise DataError(f"{path}: not a PLY file")
        fmt = None
        counts: list[tuple[str, int]] = []
        props: dict[str, list[tuple[str, str]]] = {}
        current = None
        while True:
            line = fh.readline()
            if not line:
                raise DataError(f"{path}: missing end_header")
            tokens = line.decode("ascii", "replace").split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                current = tokens[1]
                counts.append((current, int(tokens[2])))
                props[current] = []
            elif tokens[0] == "property":
                if tokens[1] == "list":
                    props[current].append(("list", " ".join(tokens[2:])))
                else:
                    props[current].append((tokens[1], tokens[2]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise DataError(f"{path}: unsupported PLY format {fmt!r}")
        out: dict[str, np.ndarray] = {}
        for element, count in counts:
            if element != "vertex":
                _skip_element(fh, fmt, props[element], count, path)
                continue
            spec = props[element]
            if any(t == "list" for t, _ in spec):
                raise DataError(f"{path}: list properties on vertices")
            if fmt == "ascii":
                rows = []
                for _ in range(count):
                    rows.append([float(v) for v in fh.readline().split()])
                data = np.asarray(rows, dtype=float)
                for j, (_, name) in enumerate(spec):
                    out[name] = data[:, j]
            else:
                dtype = np.dtype(
                    [(name, _ply_dtype(t, path)) for t, name in spec]
                )
                raw = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype)
                for _, name in spec:
                    out[name] = raw[name].astype(float)
        return out


def _ply_dtype(type_name: str, path) -> str:
    try:
        return _PLY_TYPES[type_name]
    except KeyError:
        raise DataError(f"{path}: unsupported PLY type {type_name!r}") from None


def _skip_element(fh, fmt, spec, count, path):
    if fmt == "ascii":
        for _ in range(count):
            fh.readline()
        return
    if any(t == "list" for t, _ in spec):
        raise DataError(f"{path}: cannot skip binary list element")
    size = sum(np.dtype(_ply_dtype(t, path)).itemsize for t, _ in spec)
    fh.read(size * count)


def read_points(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Positions (N, 3) plus any extra per-vertex properties."""
    data = read_ply(path)
    for axis in ("x", "y", "z"):
        if axis not in data:
            raise DataError(f"{path}: vertex property {axis!r} missing")
    pts = np.column_stack([data.pop("x"), data.pop("y"), data.pop("z")])
    return pts, data


def write_points(path, positions: np.ndarray, extras: dict | None = None):
    """Write positions and optional extra float properties as ASCII PLY."""
    positions = np.asarray(positions, dtype=float)
    extras = extras or {}
    columns = [positions[:, 0], positions[:, 1], positions[:, 2]]
    names = ["x", "y", "z"]
    for name, values in extras.items():
        values = np.asarray(values, dtype=float)
        if values.shape != (len(positions),):
            raise ValueError(f"extra property {name!r} has wrong length")
        columns.append(values)
        names.append(name)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(positions)}\n")
        for name in names:
            fh.write(f"property double {name}\n")
        fh.write("end_header\n")
        for row in zip(*columns):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
