"""Scene containers and anomaly editing.

A scene is an ordered set of labeled triangle meshes. Anomaly edits add
or remove whole objects; the simulator raycasts the edited (true) scene
while the estimator receives the map sampled from the unedited prior
scene, reproducing a map-mismatch condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from .mesh import TriangleMesh, box_mesh


@dataclass
class AnomalyEdit:
    op: str  # "add" or "remove"
    label: str
    mesh: TriangleMesh | None = None


@dataclass
class SimScene:
    objects: dict[str, TriangleMesh] = field(default_factory=dict)

    def add(self, mesh: TriangleMesh) -> "SimScene":
        if mesh.label in self.objects:
            raise DataError(f"duplicate scene label {mesh.label!r}")
        self.objects[mesh.label] = mesh
        return self

    def meshes(self) -> list[TriangleMesh]:
        return list(self.objects.values())

    def labels(self) -> list[str]:
        return list(self.objects.keys())

    def copy(self) -> "SimScene":
        return SimScene(dict(self.objects))

    def total_area(self) -> float:
        return float(sum(m.areas().sum() for m in self.meshes()))


def apply_anomalies(scene: SimScene, edits) -> SimScene:
    """Return an edited copy of the scene; the input is untouched."""
    out = scene.copy()
    for edit in edits:
        if edit.op == "add":
            if edit.mesh is None:
                raise DataError(f"add edit {edit.label!r} carries no mesh")
            mesh = edit.mesh
            if mesh.label != edit.label:
                mesh = TriangleMesh(mesh.vertices, mesh.faces, edit.label)
            out.add(mesh)
        elif edit.op == "remove":
            if edit.label not in out.objects:
                raise DataError(f"cannot remove unknown label {edit.label!r}")
            del out.objects[edit.label]
        else:
            raise DataError(f"unknown anomaly op {edit.op!r}")
    return out


def make_box_room(size=1.0, label: str = "room") -> TriangleMesh:
    """Cubic room centered at the origin (faces cast from either side)."""
    return box_mesh(np.zeros(3), size, label)


def build_desk_scene(room_size=1.0, obstacles=None) -> SimScene:
    """Default desk-scale scene: a box room plus primitive obstacles.

    ``obstacles`` is a list of (label, center, size) triples; the default
    set breaks the room's symmetries without entering the robot workspace.
    """
    if obstacles is None:
        obstacles = [
            ("crate", (0.3, -0.35, -0.3), (0.25, 0.25, 0.35)),
            ("shelf", (-0.2, 0.38, 0.28), (0.3, 0.2, 0.16)),
            ("post", (0.38, 0.3, 0.0), (0.12, 0.12, 0.9)),
        ]
    scene = SimScene()
    scene.add(make_box_room(room_size))
    for label, center, size in obstacles:
        scene.add(box_mesh(center, size, label))
    return scene
