import numpy as np
import pytest

from crloc import geom
from crloc.errors import QueryOutOfBoundsError
from crloc.geom import Transform
from crloc.state import HOME_STRAIN, NODE_DIM, StateGrid


def random_grid(rng, n_s=4, n_t=3, twist_scale=0.2):
    grid = StateGrid.create(
        np.linspace(0.0, 0.1 * (n_s - 1), n_s),
        np.linspace(0.0, 0.1 * (n_t - 1), n_t),
        Transform.identity(),
    )
    for n in range(n_s):
        for k in range(n_t):
            wobble = geom.exp_se3(twist_scale * rng.standard_normal(6))
            grid.poses[n, k] = (grid.pose(n, k) @ wobble).matrix()
            grid.strains[n, k] = HOME_STRAIN + 0.1 * rng.standard_normal(6)
            grid.velocities[n, k] = 0.1 * rng.standard_normal(6)
    return grid


class TestInterpolation:
    def test_knot_reproduction_exact(self):
        grid = random_grid(np.random.default_rng(0))
        for n in range(grid.num_arclengths):
            for k in range(grid.num_times):
                t = grid.interpolate_pose(grid.arclengths[n], grid.times[k])
                np.testing.assert_array_equal(t.matrix(), grid.poses[n, k])

    def test_constant_field(self):
        pose = geom.exp_se3([0.1, -0.2, 0.3, 0.2, 0.1, -0.3])
        grid = StateGrid([0.0, 0.1, 0.2], [0.0, 0.1], Transform.identity())
        grid.poses[:] = pose.matrix()
        for s, t in [(0.05, 0.03), (0.17, 0.1), (0.2, 0.099)]:
            out = grid.interpolate_pose(s, t)
            np.testing.assert_allclose(out.matrix(), pose.matrix(), atol=1e-9)

    def test_translation_midpoint(self):
        grid = StateGrid([0.0, 0.1], [0.0], Transform.identity())
        grid.poses[1, 0] = Transform(np.eye(3), [0.0, 0.0, 0.1]).matrix()
        mid = grid.interpolate_pose(0.05, 0.0)
        np.testing.assert_allclose(mid.translation, [0.0, 0.0, 0.05], atol=1e-12)

    def test_out_of_bounds(self):
        grid = random_grid(np.random.default_rng(1))
        with pytest.raises(QueryOutOfBoundsError):
            grid.interpolate_pose(-0.05, 0.0)
        with pytest.raises(QueryOutOfBoundsError):
            grid.interpolate_pose(0.0, 10.0)

    def test_continuity_at_knot_crossings(self):
        # Approaching a knot line from either side must agree to machine
        # precision, along arclength and along time.
        grid = random_grid(np.random.default_rng(2))
        eps = 1e-12
        s_knot, t_mid = grid.arclengths[1], 0.137
        below = grid.interpolate_pose(s_knot - eps, t_mid)
        above = grid.interpolate_pose(s_knot + eps, t_mid)
        np.testing.assert_allclose(below.matrix(), above.matrix(), atol=1e-9)
        s_mid, t_knot = 0.123, grid.times[1]
        before = grid.interpolate_pose(s_mid, t_knot - eps)
        after = grid.interpolate_pose(s_mid, t_knot + eps)
        np.testing.assert_allclose(before.matrix(), after.matrix(), atol=1e-9)

    def test_locality(self):
        # Moving node (3, 2) must not affect queries in non-adjacent cells.
        rng = np.random.default_rng(3)
        grid = random_grid(rng, n_s=5, n_t=4)
        probes = [(0.05, 0.05), (0.15, 0.02), (0.02, 0.25)]
        before = [grid.interpolate_pose(s, t).matrix() for s, t in probes]
        grid.poses[3, 2] = (
            grid.pose(3, 2) @ geom.exp_se3(0.3 * rng.standard_normal(6))
        ).matrix()
        after = [grid.interpolate_pose(s, t).matrix() for s, t in probes]
        for b, a in zip(before, after):
            np.testing.assert_array_equal(b, a)

    def test_bilinear_strain(self):
        grid = StateGrid([0.0, 0.1], [0.0, 0.1], Transform.identity())
        grid.strains[0, 0] = np.zeros(6)
        grid.strains[1, 0] = np.ones(6)
        grid.strains[0, 1] = 2.0 * np.ones(6)
        grid.strains[1, 1] = 3.0 * np.ones(6)
        out = grid.interpolate_strain(0.05, 0.05)
        np.testing.assert_allclose(out, 1.5 * np.ones(6))


class TestApplyUpdate:
    def test_zero_delta(self):
        grid = random_grid(np.random.default_rng(4))
        out = grid.apply_update(np.zeros(NODE_DIM * grid.num_free_nodes))
        np.testing.assert_array_equal(out.poses, grid.poses)
        np.testing.assert_array_equal(out.strains, grid.strains)

    def test_single_node_translation(self):
        grid = StateGrid([0.0, 0.1], [0.0], Transform.identity())
        delta = np.zeros(NODE_DIM)
        delta[2] = 0.01  # 1 cm along inertial z
        out = grid.apply_update(delta)
        expected = grid.pose(1, 0).translation + np.array([0.0, 0.0, 0.01])
        np.testing.assert_allclose(out.pose(1, 0).translation, expected, atol=1e-12)

    def test_base_row_clamped(self):
        grid = random_grid(np.random.default_rng(5))
        delta = np.random.default_rng(6).standard_normal(
            NODE_DIM * grid.num_free_nodes
        )
        out = grid.apply_update(delta)
        np.testing.assert_array_equal(out.poses[0], grid.poses[0])
        np.testing.assert_array_equal(out.strains[0], grid.strains[0])

    def test_delta_then_negated_delta(self):
        grid = random_grid(np.random.default_rng(7))
        rng = np.random.default_rng(8)
        delta = 1e-3 * rng.standard_normal(NODE_DIM * grid.num_free_nodes)
        out = grid.apply_update(delta).apply_update(-delta)
        np.testing.assert_allclose(out.poses, grid.poses, atol=1e-6)
        np.testing.assert_allclose(out.strains, grid.strains, atol=1e-12)

    def test_dimension_mismatch(self):
        grid = random_grid(np.random.default_rng(9))
        with pytest.raises(ValueError):
            grid.apply_update(np.zeros(3))


class TestSerialization:
    def test_round_trip(self):
        grid = random_grid(np.random.default_rng(10))
        grid.covariances[:] = np.eye(NODE_DIM) * 1e-4
        back = StateGrid.from_dict(grid.to_dict())
        np.testing.assert_allclose(back.poses, grid.poses)
        np.testing.assert_allclose(back.strains, grid.strains)
        np.testing.assert_allclose(back.velocities, grid.velocities)
        np.testing.assert_allclose(
            back.covariances[2, 1, :6, :6], grid.covariances[2, 1, :6, :6]
        )

    def test_create_straight(self):
        grid = StateGrid.create([0.0, 0.1, 0.2], [0.0], Transform.identity())
        np.testing.assert_allclose(
            grid.pose(2, 0).translation, [0.2, 0.0, 0.0], atol=1e-12
        )
        np.testing.assert_allclose(grid.pose(2, 0).rotation, np.eye(3), atol=1e-12)
