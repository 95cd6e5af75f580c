"""Prior environment map: a point cloud with normals and planarity weights
stored in a hashed voxel structure for nearest-neighbor lookup.

Normals and planarity come from PCA over each point's k nearest neighbors.
With eigenvalue square roots s1 >= s2 >= s3, the planarity weight is
(s2 - s3) / s1: near 1 on planar patches, near 0 on isotropic blobs and
linear features. Queries search the voxel hash in expanding Chebyshev
shells and stop once the best candidate is provably nearest, so results
match a brute-force scan exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import ply
from .errors import DataError

_KEY_BASE = np.int64(1) << 20
_KEY_OFFSET = np.int64(1) << 19


@dataclass
class MapPoint:
    """One map point: position, unit normal, planarity, prior covariance."""

    position: np.ndarray
    normal: np.ndarray
    planarity: float
    prior_covariance: np.ndarray
    index: int
    degenerate: bool = False


def _pack_cells(cells: np.ndarray) -> np.ndarray:
    shifted = cells.astype(np.int64) + _KEY_OFFSET
    if np.any(shifted < 0) or np.any(shifted >= _KEY_BASE):
        raise ValueError("point coordinates exceed the voxel hash range")
    return (shifted[..., 0] * _KEY_BASE + shifted[..., 1]) * _KEY_BASE + shifted[
        ..., 2
    ]


class EnvironmentMap:
    """Voxel-hashed point cloud with per-point normal and planarity."""

    def __init__(self, positions, normals, planarity, prior_covariances,
                 voxel_size: float, degenerate=None):
        self.positions = np.asarray(positions, dtype=float)
        self.normals = np.asarray(normals, dtype=float)
        self.planarity = np.asarray(planarity, dtype=float)
        self.prior_covariances = np.asarray(prior_covariances, dtype=float)
        self.voxel_size = float(voxel_size)
        n = len(self.positions)
        self.degenerate = (
            np.zeros(n, dtype=bool) if degenerate is None
            else np.asarray(degenerate, dtype=bool)
        )
        cells = self.cell_of(self.positions)
        keys = _pack_cells(cells)
        order = np.argsort(keys, kind="stable")
        self._order = order
        self._sorted_positions = self.positions[order]
        sorted_keys = keys[order]
        unique_keys, starts, counts = np.unique(
            sorted_keys, return_index=True, return_counts=True
        )
        self._cell_keys = unique_keys
        self._cell_starts = starts
        self._cell_counts = counts
        # Cell dict for single-point shell queries: key -> point indices.
        self.cells: dict[int, np.ndarray] = {
            int(key): order[start:start + count]
            for key, start, count in zip(unique_keys, starts, counts)
        }

    def __len__(self) -> int:
        return len(self.positions)

    def cell_of(self, positions: np.ndarray) -> np.ndarray:
        """Integer voxel coordinates containing each position."""
        return np.floor(
            np.asarray(positions, dtype=float) / self.voxel_size
        ).astype(np.int64)

    def point(self, index: int) -> MapPoint:
        return MapPoint(
            self.positions[index].copy(),
            self.normals[index].copy(),
            float(self.planarity[index]),
            self.prior_covariances[index].copy(),
            int(index),
            bool(self.degenerate[index]),
        )

    # -- queries ----------------------------------------------------------

    def query_nn(self, point, max_radius: float = 0.1) -> MapPoint | None:
        """Euclidean-nearest map point within ``max_radius``, or None.

        Searches the query's voxel and expanding Chebyshev shells until any
        unsearched cell provably cannot contain a closer point.
        """
        point = np.asarray(point, dtype=float)
        center = self.cell_of(point)
        best_idx = -1
        best_d2 = np.inf
        shell = 0
        while (shell - 1) * self.voxel_size < min(
            np.sqrt(best_d2), max_radius
        ):
            for offset in _shell_offsets(shell):
                key = int(_pack_cells(center + offset))
                indices = self.cells.get(key)
                if indices is None:
                    continue
                diffs = self.positions[indices] - point
                d2 = np.einsum("ij,ij->i", diffs, diffs)
                j = int(np.argmin(d2))
                if d2[j] < best_d2 or (
                    d2[j] == best_d2 and indices[j] < best_idx
                ):
                    best_d2 = float(d2[j])
                    best_idx = int(indices[j])
            shell += 1
        if best_idx < 0 or best_d2 > max_radius**2:
            return None
        return self.point(best_idx)

    def query_nn_batch(self, points: np.ndarray, max_radius: float = 0.1):
        """Vectorized nearest-neighbor lookup over the voxel hash.

        Returns (indices, distances); index -1 marks queries with no map
        point within ``max_radius``. Matches :meth:`query_nn` exactly.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n_query = len(points)
        out_idx = np.full(n_query, -1, dtype=np.int64)
        out_dist = np.full(n_query, np.inf)
        if n_query == 0 or len(self.positions) == 0:
            return out_idx, out_dist
        reach = int(np.floor(max_radius / self.voxel_size)) + 1
        span = np.arange(-reach, reach + 1, dtype=np.int64)
        offsets = (
            np.stack(np.meshgrid(span, span, span, indexing="ij"), axis=-1)
            .reshape(-1, 3)
        )
        center = self.cell_of(points)
        keys = _pack_cells(
            center[:, None, :] + offsets[None, :, :]
        ).reshape(-1)
        qidx = np.repeat(np.arange(n_query), len(offsets))
        pos = np.searchsorted(self._cell_keys, keys)
        pos[pos >= len(self._cell_keys)] = 0
        hit = self._cell_keys[pos] == keys
        if not np.any(hit):
            return out_idx, out_dist
        starts = self._cell_starts[pos[hit]]
        counts = self._cell_counts[pos[hit]]
        qhit = qidx[hit]
        total = int(counts.sum())
        ends = np.cumsum(counts)
        within = np.arange(total) - np.repeat(ends - counts, counts)
        rows = np.repeat(starts, counts) + within
        qq = np.repeat(qhit, counts)
        diffs = self._sorted_positions[rows] - points[qq]
        d2 = np.einsum("ij,ij->i", diffs, diffs)
        original = self._order[rows]
        order = np.lexsort((original, d2, qq))
        winners, first = np.unique(qq[order], return_index=True)
        best = order[first]
        dist = np.sqrt(d2[best])
        keep = dist <= max_radius
        out_idx[winners[keep]] = original[best][keep]
        out_dist[winners[keep]] = dist[keep]
        return out_idx, out_dist


def _shell_offsets(shell: int) -> np.ndarray:
    """Integer offsets at exactly Chebyshev distance ``shell``."""
    if shell == 0:
        return np.zeros((1, 3), dtype=np.int64)
    rng = np.arange(-shell, shell + 1, dtype=np.int64)
    grid = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(
        -1, 3
    )
    cheb = np.abs(grid).max(axis=1)
    return grid[cheb == shell]


def build_map(points, voxel_size: float = 0.05, k_neighbors: int = 20,
              sigma_nn: float = 1e-3,
              orient_toward: np.ndarray | None = None) -> EnvironmentMap:
    """Build the prior map: PCA normals, planarity weights, voxel hash.

    ``sigma_nn`` sets the isotropic per-point prior standard deviation
    (meters) used by the anomaly gate. ``orient_toward`` is an interior
    point normals should face; without it normals are oriented toward +z.
    """
    points = np.asarray(points, dtype=float)
    if voxel_size <= 0.0:
        raise ValueError("voxel_size must be positive")
    if len(points) < k_neighbors + 1:
        raise DataError(
            f"map build needs at least {k_neighbors + 1} points, got {len(points)}"
        )
    tree = cKDTree(points)
    _, neighbor_idx = tree.query(points, k=k_neighbors + 1)
    clusters = points[neighbor_idx]
    centered = clusters - clusters.mean(axis=1, keepdims=True)
    covs = np.einsum("nki,nkj->nij", centered, centered) / (k_neighbors + 1)
    eigvals, eigvecs = np.linalg.eigh(covs)
    sig = np.sqrt(np.clip(eigvals, 0.0, None))  # ascending: s3, s2, s1
    degenerate = sig[:, 2] < 1e-12
    big = np.where(degenerate, 1.0, sig[:, 2])
    planarity = np.clip((sig[:, 1] - sig[:, 0]) / big, 0.0, 1.0)
    planarity[degenerate] = 0.0
    normals = eigvecs[:, :, 0].copy()
    normals[degenerate] = (0.0, 0.0, 1.0)
    if orient_toward is not None:
        inward = np.asarray(orient_toward, dtype=float) - points
        flip = np.einsum("ij,ij->i", normals, inward) < 0.0
    else:
        flip = normals[:, 2] < 0.0
        ties = normals[:, 2] == 0.0
        if np.any(ties):
            lead = np.where(
                normals[ties, 0] != 0.0, normals[ties, 0], normals[ties, 1]
            )
            flip[ties] = lead < 0.0
    normals[flip] *= -1.0
    prior_covs = np.tile(sigma_nn**2 * np.eye(3), (len(points), 1, 1))
    return EnvironmentMap(
        points, normals, planarity, prior_covs, voxel_size, degenerate
    )


def save_map_ply(env_map: EnvironmentMap, path):
    """Write the augmented map (normals, planarity) as an ASCII PLY."""
    ply.write_points(
        path,
        env_map.positions,
        {
            "nx": env_map.normals[:, 0],
            "ny": env_map.normals[:, 1],
            "nz": env_map.normals[:, 2],
            "planarity": env_map.planarity,
        },
    )
