import numpy as np
import pytest

from crloc import envmap, ply
from crloc.errors import DataError


def brute_force_nn(points, query, max_radius):
    # Independent O(N) oracle for nearest-neighbor queries.
    d = np.linalg.norm(points - query, axis=1)
    j = int(np.argmin(d))
    return (j, d[j]) if d[j] <= max_radius else (None, None)


def plane_cloud(rng, n=500, extent=1.0):
    pts = np.zeros((n, 3))
    pts[:, :2] = rng.uniform(-extent, extent, size=(n, 2))
    return pts


def neighborhood_pca_oracle(cloud, index, k):
    # Independent PCA over the k nearest neighbors (plus self) of one point.
    d = np.linalg.norm(cloud - cloud[index], axis=1)
    idx = np.argsort(d)[: k + 1]
    cluster = cloud[idx] - cloud[idx].mean(axis=0)
    cov = cluster.T @ cluster / (k + 1)
    vals, vecs = np.linalg.eigh(cov)
    sig = np.sqrt(np.clip(vals, 0.0, None))  # ascending
    return sig[::-1], vecs[:, ::-1]  # descending sigmas, matching vectors


class TestBuildMap:
    def test_plane_normals_and_planarity(self):
        rng = np.random.default_rng(0)
        cloud = plane_cloud(rng)
        k = 10
        m = envmap.build_map(cloud, voxel_size=0.1, k_neighbors=k)
        np.testing.assert_allclose(np.abs(m.normals[:, 2]), 1.0, atol=1e-6)
        # On an exact plane s3 = 0, so planarity reduces to s2/s1.
        for index in [0, 17, 253, 499]:
            sig, _ = neighborhood_pca_oracle(cloud, index, k)
            assert sig[2] == pytest.approx(0.0, abs=1e-12)
            assert m.planarity[index] == pytest.approx(sig[1] / sig[0], rel=1e-9)
        assert np.all(m.planarity <= 1.0)

    def test_isotropic_blob_low_planarity(self):
        rng = np.random.default_rng(1)
        cloud = rng.standard_normal((800, 3))
        m = envmap.build_map(cloud, voxel_size=0.5, k_neighbors=20)
        assert np.median(m.planarity) < 0.35

    def test_line_cloud_low_planarity(self):
        rng = np.random.default_rng(2)
        cloud = np.zeros((400, 3))
        cloud[:, 0] = rng.uniform(0.0, 1.0, 400)
        m = envmap.build_map(cloud, voxel_size=0.1, k_neighbors=10)
        # PCA of a 1-D distribution: s2 ~ s3 ~ 0.
        assert np.all(m.planarity < 0.05)

    def test_degenerate_neighborhood(self):
        cloud = np.zeros((30, 3))
        m = envmap.build_map(cloud, voxel_size=0.1, k_neighbors=10)
        assert np.all(m.degenerate)
        assert np.all(m.planarity == 0.0)
        np.testing.assert_array_equal(m.normals, np.tile([0, 0, 1.0], (30, 1)))

    def test_planarity_bounds_random(self):
        rng = np.random.default_rng(3)
        cloud = rng.uniform(-1, 1, size=(600, 3))
        cloud[:, 2] *= 0.05
        m = envmap.build_map(cloud, voxel_size=0.2)
        assert np.all(m.planarity >= 0.0) and np.all(m.planarity <= 1.0)

    def test_normal_orthogonal_to_principal_direction(self):
        rng = np.random.default_rng(4)
        cloud = plane_cloud(rng)
        cloud[:, 2] = 1e-3 * rng.standard_normal(len(cloud))
        k = 15
        m = envmap.build_map(cloud, voxel_size=0.2, k_neighbors=k)
        for index in [3, 99, 310]:
            _, vecs = neighborhood_pca_oracle(cloud, index, k)
            assert abs(np.dot(m.normals[index], vecs[:, 0])) < 1e-6

    def test_orientation_toward_interior(self):
        rng = np.random.default_rng(5)
        cloud = plane_cloud(rng)
        m = envmap.build_map(
            cloud, voxel_size=0.2, orient_toward=np.array([0.0, 0.0, -2.0])
        )
        assert np.all(m.normals[:, 2] < 0.0)

    def test_too_few_points(self):
        with pytest.raises(DataError):
            envmap.build_map(np.zeros((5, 3)), k_neighbors=20)

    def test_points_hash_to_containing_cell(self):
        rng = np.random.default_rng(6)
        cloud = rng.uniform(-1, 1, size=(200, 3))
        m = envmap.build_map(cloud, voxel_size=0.13)
        for key, indices in m.cells.items():
            cells = m.cell_of(m.positions[indices])
            np.testing.assert_array_equal(
                envmap._pack_cells(cells), np.full(len(indices), key)
            )


class TestQueryNN:
    def test_exact_hit(self):
        rng = np.random.default_rng(7)
        cloud = rng.uniform(-1, 1, size=(100, 3))
        m = envmap.build_map(cloud, voxel_size=0.1)
        hit = m.query_nn(cloud[42], max_radius=0.5)
        assert hit is not None and hit.index == 42
        assert np.linalg.norm(hit.position - cloud[42]) == 0.0

    def test_picks_nearer_of_two(self):
        cloud = np.zeros((30, 3))
        cloud[:28, 0] = np.linspace(10.0, 12.0, 28)  # far filler
        cloud[28] = (1.0, 0.0, 0.0)
        cloud[29] = (2.0, 0.0, 0.0)
        m = envmap.build_map(cloud, voxel_size=0.3, k_neighbors=5)
        hit = m.query_nn(np.zeros(3), max_radius=3.0)
        assert hit.index == 28

    def test_none_outside_radius(self):
        cloud = np.random.default_rng(8).uniform(5, 6, size=(50, 3))
        m = envmap.build_map(cloud, voxel_size=0.1, k_neighbors=5)
        assert m.query_nn(np.zeros(3), max_radius=0.1) is None

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        cloud = rng.uniform(-1, 1, size=(1000, 3))
        m = envmap.build_map(cloud, voxel_size=0.07)
        for _ in range(100):
            q = rng.uniform(-1.2, 1.2, size=3)
            expected_idx, expected_d = brute_force_nn(cloud, q, 0.25)
            hit = m.query_nn(q, max_radius=0.25)
            if expected_idx is None:
                assert hit is None
            else:
                assert hit.index == expected_idx
                assert np.linalg.norm(hit.position - q) == pytest.approx(
                    expected_d
                )

    def test_batch_matches_single(self):
        rng = np.random.default_rng(10)
        cloud = rng.uniform(-1, 1, size=(800, 3))
        m = envmap.build_map(cloud, voxel_size=0.09)
        queries = rng.uniform(-1.3, 1.3, size=(200, 3))
        idx, dist = m.query_nn_batch(queries, max_radius=0.2)
        for i, q in enumerate(queries):
            hit = m.query_nn(q, max_radius=0.2)
            if hit is None:
                assert idx[i] == -1
            else:
                assert idx[i] == hit.index
                assert dist[i] == pytest.approx(
                    np.linalg.norm(hit.position - q)
                )


class TestPlyRoundTrip:
    def test_map_ply_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        cloud = plane_cloud(rng, n=120)
        m = envmap.build_map(cloud, voxel_size=0.2, k_neighbors=8)
        path = tmp_path / "map.ply"
        envmap.save_map_ply(m, path)
        pts, extras = ply.read_points(path)
        np.testing.assert_allclose(pts, cloud)
        np.testing.assert_allclose(extras["planarity"], m.planarity)
        np.testing.assert_allclose(extras["nz"], m.normals[:, 2])

    def test_binary_ply_read(self, tmp_path):
        path = tmp_path / "bin.ply"
        pts = np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]], dtype="<f4")
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            "element vertex 2\n"
            "property float x\nproperty float y\nproperty float z\n"
            "end_header\n"
        )
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(pts.tobytes())
        out, _ = ply.read_points(path)
        np.testing.assert_allclose(out, pts.astype(float))
