"""Estimation state on a time x arclength lattice.

The grid stores a pose, a generalized strain, and a generalized velocity at
every (arclength, time) knot. Queries between knots use a tensor-product
tangent-space scheme: constant-twist (geodesic) interpolation along time on
the two bracketing arclength rows, then a geodesic blend along arclength.
The scheme is exact at knots, continuous across cell boundaries, and local
to the four corners of the enclosing cell. Strain and velocity interpolate
bilinearly.

The base row (arclength index 0) is clamped: it never appears among the
free variables and updates leave it untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom
from .errors import QueryOutOfBoundsError
from .geom import Transform

NODE_DIM = 18  # pose(6) + strain(6) + velocity(6)
HOME_STRAIN = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])


@dataclass
class StateNode:
    """View of one lattice node: pose, strain, velocity, 18x18 covariance."""

    pose: Transform
    strain: np.ndarray
    velocity: np.ndarray
    covariance: np.ndarray


def _locate(knots: np.ndarray, value: float, label: str):
    """Cell index and fraction for a query on a strictly increasing axis."""
    lo, hi = knots[0], knots[-1]
    if value < lo - 1e-9 or value > hi + 1e-9:
        raise QueryOutOfBoundsError(
            f"{label}={value!r} outside [{lo!r}, {hi!r}]"
        )
    if len(knots) == 1:
        return 0, 0.0
    idx = int(np.searchsorted(knots, value, side="right")) - 1
    idx = min(max(idx, 0), len(knots) - 2)
    frac = (value - knots[idx]) / (knots[idx + 1] - knots[idx])
    return idx, float(min(max(frac, 0.0), 1.0))


class StateGrid:
    """Robot poses, strains, and velocities on a time x arclength lattice."""

    def __init__(self, arclengths, times, base_pose: Transform):
        self.arclengths = np.asarray(arclengths, dtype=float)
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.arclengths) <= 0.0):
            raise ValueError("arclength knots must be strictly increasing")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("time knots must be strictly increasing")
        self.base_pose = base_pose
        n_s, n_t = len(self.arclengths), len(self.times)
        self.poses = np.tile(np.eye(4), (n_s, n_t, 1, 1))
        self.strains = np.tile(HOME_STRAIN, (n_s, n_t, 1))
        self.velocities = np.zeros((n_s, n_t, 6))
        self.covariances = np.zeros((n_s, n_t, NODE_DIM, NODE_DIM))

    # -- construction helpers -------------------------------------------

    @staticmethod
    def create(arclengths, times, base_pose: Transform,
               strain: np.ndarray | None = None) -> "StateGrid":
        """Grid initialized by propagating a constant strain from the base."""
        grid = StateGrid(arclengths, times, base_pose)
        eps = HOME_STRAIN if strain is None else np.asarray(strain, dtype=float)
        grid.strains[:] = eps
        for n, s in enumerate(grid.arclengths):
            pose = base_pose @ geom.exp_se3((s - grid.arclengths[0]) * eps)
            grid.poses[n, :] = pose.matrix()
        return grid

    # -- basic accessors -------------------------------------------------

    @property
    def num_arclengths(self) -> int:
        return len(self.arclengths)

    @property
    def num_times(self) -> int:
        return len(self.times)

    @property
    def num_free_nodes(self) -> int:
        return (self.num_arclengths - 1) * self.num_times

    def node(self, n: int, k: int) -> StateNode:
        return StateNode(
            Transform.from_matrix(self.poses[n, k]),
            self.strains[n, k].copy(),
            self.velocities[n, k].copy(),
            self.covariances[n, k].copy(),
        )

    def pose(self, n: int, k: int) -> Transform:
        return Transform.from_matrix(self.poses[n, k])

    def set_pose(self, n: int, k: int, pose: Transform):
        self.poses[n, k] = pose.matrix()

    def copy(self) -> "StateGrid":
        out = StateGrid(self.arclengths.copy(), self.times.copy(), self.base_pose)
        out.poses = self.poses.copy()
        out.strains = self.strains.copy()
        out.velocities = self.velocities.copy()
        out.covariances = self.covariances.copy()
        return out

    # -- interpolation ----------------------------------------------------

    def locate(self, s: float, t: float):
        """Cell indices and fractions (n, u, k, v) for a query point."""
        n, u = _locate(self.arclengths, s, "arclength")
        k, v = _locate(self.times, t, "time")
        return n, u, k, v

    def interpolation_weights(self, s: float, t: float):
        """Corner nodes and bilinear weights for a query point.

        Returns a list of ((n, k), weight) covering the enclosing cell.
        Zero-weight corners are kept so callers see a fixed structure.
        """
        n, u, k, v = self.locate(s, t)
        single_s = self.num_arclengths == 1
        single_t = self.num_times == 1
        out = [((n, k), (1.0 - u) * (1.0 - v))]
        if not single_s:
            out.append(((n + 1, k), u * (1.0 - v)))
        if not single_t:
            out.append(((n, k + 1), (1.0 - u) * v))
        if not single_s and not single_t:
            out.append(((n + 1, k + 1), u * v))
        return out

    def _row_pose_at(self, n: int, k: int, v: float) -> Transform:
        if v == 0.0:
            return self.pose(n, k)
        if v == 1.0:
            return self.pose(n, k + 1)
        return geom.geodesic(self.pose(n, k), self.pose(n, k + 1), v)

    def interpolate_pose(self, s: float, t: float) -> Transform:
        n, u, k, v = self.locate(s, t)
        lower = self._row_pose_at(n, k, v)
        if u == 0.0:
            return lower
        upper = self._row_pose_at(n + 1, k, v)
        if u == 1.0:
            return upper
        return geom.geodesic(lower, upper, u)

    def _bilinear(self, field: np.ndarray, s: float, t: float) -> np.ndarray:
        out = np.zeros(field.shape[-1])
        for (n, k), w in self.interpolation_weights(s, t):
            if w != 0.0:
                out += w * field[n, k]
        return out

    def interpolate_strain(self, s: float, t: float) -> np.ndarray:
        return self._bilinear(self.strains, s, t)

    def interpolate_velocity(self, s: float, t: float) -> np.ndarray:
        return self._bilinear(self.velocities, s, t)

    def pose_covariance_at(self, s: float, t: float) -> np.ndarray:
        """6x6 pose covariance taken from the nearest knot."""
        n, u, k, v = self.locate(s, t)
        n = n + 1 if u > 0.5 else n
        k = k + 1 if v > 0.5 else k
        return self.covariances[n, k, :6, :6].copy()

    # -- updates -----------------------------------------------------------

    def free_nodes(self):
        """Free (n, k) pairs in update-vector order (time-major)."""
        return [
            (n, k)
            for k in range(self.num_times)
            for n in range(1, self.num_arclengths)
        ]

    def apply_update(self, delta: np.ndarray) -> "StateGrid":
        """Left-multiplicative pose update, additive strain/velocity update.

        ``delta`` stacks one 18-vector (pose twist, strain, velocity) per
        free node in :meth:`free_nodes` order. The clamped base row is not
        part of the vector and never changes.
        """
        delta = np.asarray(delta, dtype=float)
        expected = NODE_DIM * self.num_free_nodes
        if delta.shape != (expected,):
            raise ValueError(
                f"delta has shape {delta.shape}, expected ({expected},)"
            )
        out = self.copy()
        for i, (n, k) in enumerate(self.free_nodes()):
            block = delta[i * NODE_DIM:(i + 1) * NODE_DIM]
            if np.any(block[:6]):
                updated = geom.exp_se3(block[:6]) @ self.pose(n, k)
                out.poses[n, k] = updated.matrix()
            out.strains[n, k] += block[6:12]
            out.velocities[n, k] += block[12:18]
        return out

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        nodes = []
        for n in range(self.num_arclengths):
            for k in range(self.num_times):
                nodes.append(
                    {
                        "pose": self.poses[n, k].reshape(-1).tolist(),
                        "strain": self.strains[n, k].tolist(),
                        "velocity": self.velocities[n, k].tolist(),
                        "cov_diag": np.diag(self.covariances[n, k]).tolist(),
                        "pose_cov": self.covariances[n, k, :6, :6]
                        .reshape(-1)
                        .tolist(),
                    }
                )
        return {
            "arclengths": self.arclengths.tolist(),
            "times": self.times.tolist(),
            "base_pose": self.base_pose.matrix().reshape(-1).tolist(),
            "nodes": nodes,
        }

    @staticmethod
    def from_dict(data: dict) -> "StateGrid":
        base = Transform.from_matrix(
            np.asarray(data["base_pose"], dtype=float).reshape(4, 4)
        )
        grid = StateGrid(data["arclengths"], data["times"], base)
        idx = 0
        for n in range(grid.num_arclengths):
            for k in range(grid.num_times):
                rec = data["nodes"][idx]
                idx += 1
                grid.poses[n, k] = np.asarray(rec["pose"]).reshape(4, 4)
                grid.strains[n, k] = rec["strain"]
                grid.velocities[n, k] = rec["velocity"]
                cov = np.diag(rec["cov_diag"]).astype(float)
                cov[:6, :6] = np.asarray(rec["pose_cov"]).reshape(6, 6)
                grid.covariances[n, k] = cov
        return grid
