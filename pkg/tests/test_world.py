"""Tests for the obstacle world, ray casting and world files."""

import math
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safenav.world import (
    Circle,
    ConvexPolygon,
    DynamicObstacle,
    LidarSpec,
    Prism,
    SegmentChain,
    World,
    WorldError,
    advance_obstacles,
    load_world,
    min_clearance,
    ray_cast,
    world_from_dict,
    world_to_dict,
)

BOX = [[-10.0, 10.0], [-10.0, 10.0]]


def shipped_world(name="ground.world"):
    with resources.as_file(resources.files("safenav") / "scenarios" / name) as path:
        return load_world(path)


def hit_points(scan):
    r, th = scan.points[:, 0], scan.points[:, 1]
    if scan.points.shape[1] == 2:
        return scan.pose_q + np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    el = scan.points[:, 2]
    return scan.pose_q + r[:, None] * np.stack([np.cos(el) * np.cos(th), np.cos(el) * np.sin(th), np.sin(el)], 1)


def surface_residual(world, t, p):
    shapes = list(world.static) + [Circle(c, r) for c, r in zip(world.dynamic_positions(t), world._dr)]
    return min(abs(s.signed_distance(p)) for s in shapes)


class TestRayCast:
    def test_single_circle(self):
        world = World(BOX, [Circle([3.0, 0.0], 1.0)])
        scan = ray_cast(world, 0.0, [0.0, 0.0], 0.0, LidarSpec(beams=4))
        assert scan.points.shape == (1, 2)
        np.testing.assert_allclose(scan.points, [[2.0, 0.0]], atol=1e-12)

    def test_single_beam_forward(self):
        world = World(BOX, [Circle([3.0, 0.0], 1.0)])
        scan = ray_cast(world, 0.0, [0.0, 0.0], 0.0, LidarSpec(beams=3, fov=0.2))
        np.testing.assert_allclose(scan.points[1], [2.0, 0.0], atol=1e-12)

    def test_empty_world(self):
        scan = ray_cast(World(BOX), 0.0, [0.0, 0.0], 0.3, LidarSpec())
        assert scan.points.shape == (0, 2)

    def test_occlusion(self):
        world = World(BOX, [Circle([3.0, 0.0], 1.0), Circle([6.0, 0.0], 1.0)])
        scan = ray_cast(world, 0.0, [0.0, 0.0], 0.0, LidarSpec(beams=3, fov=0.2, r_max=8.0))
        np.testing.assert_allclose(scan.points[1], [2.0, 0.0], atol=1e-12)
        assert np.all(scan.points[:, 0] < 3.0)

    def test_out_of_range_ignored(self):
        world = World(BOX, [Circle([7.0, 0.0], 1.0)])
        assert ray_cast(world, 0.0, [0.0, 0.0], 0.0, LidarSpec()).points.shape == (0, 2)

    def test_pose_outside_bounds(self):
        with pytest.raises(WorldError):
            ray_cast(World(BOX), 0.0, [20.0, 0.0], 0.0, LidarSpec())

    def test_hits_on_boundary_within_range(self):
        world = shipped_world()
        rng = np.random.default_rng(0)
        spec = LidarSpec(r_max=5.0, beams=100)
        n = 0
        while n < 30:
            q = rng.uniform(0.5, 14.5, 2)
            if min_clearance(world, 0.0, q) <= 0.1:
                continue
            scan = ray_cast(world, 0.0, q, float(rng.uniform(0, 2 * math.pi)), spec)
            assert np.all(scan.points[:, 0] <= spec.r_max)
            for p in hit_points(scan):
                assert surface_residual(world, 0.0, p) <= 1e-9
            n += 1

    def test_dynamic_hits_on_boundary(self):
        world = World(BOX, [], [DynamicObstacle(0.5, [[2.0, -3.0], [2.0, 3.0]], 1.0)])
        for t in (0.0, 1.5, 3.0, 10.0):
            scan = ray_cast(world, t, [0.0, 0.0], 0.0, LidarSpec(beams=360))
            assert scan.points.shape[0] > 0
            for p in hit_points(scan):
                assert surface_residual(world, t, p) <= 1e-9

    def test_spatial_hits_on_boundary(self):
        world = shipped_world("quadrotor.world")
        spec = LidarSpec(beams=300, elevation_rows=10)
        rng = np.random.default_rng(1)
        n = 0
        while n < 10:
            q = rng.uniform(world.bounds[:, 0] + 0.5, world.bounds[:, 1] - 0.5)
            if min_clearance(world, 0.0, q) <= 0.1:
                continue
            scan = ray_cast(world, 0.0, q, 0.0, spec)
            assert scan.points.shape[1] == 3
            assert scan.points.shape[0] <= 300
            for p in hit_points(scan):
                assert surface_residual(world, 0.0, p) <= 1e-9
            n += 1

    def test_deterministic(self):
        world = shipped_world()
        a = ray_cast(world, 0.0, [1.0, 1.0], 0.4, LidarSpec())
        b = ray_cast(world, 0.0, [1.0, 1.0], 0.4, LidarSpec())
        assert a.points.tobytes() == b.points.tobytes()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 400))
    def test_scan_cap(self, beams):
        world = World(BOX, [Circle([0.0, 0.0], 9.0)])
        scan = ray_cast(world, 0.0, [0.0, 0.0], 0.0, LidarSpec(beams=beams, r_max=10.0))
        assert scan.points.shape[0] == beams

    @pytest.mark.parametrize(
        "shape",
        [
            ConvexPolygon([[2.0, -1.0], [4.0, -1.0], [4.0, 1.0], [2.0, 1.0]]),
            SegmentChain([[2.0, -1.0], [2.0, 1.0]], thickness=0.0),
        ],
    )
    def test_flat_wall(self, shape):
        scan = ray_cast(World(BOX, [shape]), 0.0, [0.0, 0.0], 0.0, LidarSpec(beams=3, fov=0.2))
        np.testing.assert_allclose(scan.points[1], [2.0, 0.0], atol=1e-12)


class TestClearance:
    def test_outside_and_inside(self):
        world = World(BOX, [Circle([3.0, 0.0], 1.0)])
        assert min_clearance(world, 0.0, [0.0, 0.0]) == pytest.approx(2.0)
        assert min_clearance(world, 0.0, [3.0, 0.0]) == pytest.approx(-1.0)

    def test_empty_world(self):
        assert min_clearance(World(BOX), 0.0, [0.0, 0.0]) == math.inf

    def test_polygon_and_prism(self):
        square = ConvexPolygon([[1.0, -1.0], [3.0, -1.0], [3.0, 1.0], [1.0, 1.0]])
        assert min_clearance(World(BOX, [square]), 0.0, [0.0, 0.0]) == pytest.approx(1.0)
        assert min_clearance(World(BOX, [square]), 0.0, [2.0, 0.0]) == pytest.approx(-1.0)
        world3 = World([[-5, 5], [-5, 5], [0, 5]], [Prism(square, 0.0, 2.0)])
        assert min_clearance(world3, 0.0, [2.0, 0.0, 3.0]) == pytest.approx(1.0)

    def test_dynamic_clearance_rate(self):
        rng = np.random.default_rng(2)
        v = 0.5
        for _ in range(20):
            ob = DynamicObstacle(0.4, rng.uniform(-5, 5, size=(4, 2)), float(rng.uniform(0, v)))
            world = World(BOX, [], [ob], v_max=v)
            p = rng.uniform(-5, 5, 2)
            ts = np.sort(rng.uniform(0, 30, 10))
            d = [min_clearance(world, t, p) for t in ts]
            assert np.all(np.abs(np.diff(d)) <= v * np.diff(ts) + 1e-12)


class TestDynamicObstacles:
    def test_interpolation_and_hold(self):
        ob = DynamicObstacle(0.3, [[0.0, 0.0], [1.0, 0.0]], 0.5)
        np.testing.assert_allclose(ob.position(1.0), [0.5, 0.0])
        np.testing.assert_allclose(ob.position(100.0), [1.0, 0.0])
        world = World(BOX, [], [ob])
        np.testing.assert_allclose(advance_obstacles(world, 1.0), [[0.5, 0.0]])

    def test_multi_segment_arc_length(self):
        ob = DynamicObstacle(0.3, [[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]], 1.0)
        np.testing.assert_allclose(ob.position(2.0), [1.0, 1.0])

    def test_speed_limit_enforced(self):
        with pytest.raises(WorldError):
            World(BOX, [], [DynamicObstacle(0.3, [[0, 0], [1, 0]], 1.0)], v_max=0.5)

    def test_negative_time(self):
        with pytest.raises(WorldError):
            advance_obstacles(World(BOX), -1.0)


class TestWorldFiles:
    def test_round_trip(self, tmp_path):
        import yaml

        world = shipped_world()
        world = world.with_dynamic([DynamicObstacle(0.4, [[1.0, 1.0], [2.0, 3.0]], 0.3)])
        path = tmp_path / "w.world"
        path.write_text(yaml.safe_dump(world_to_dict(world)))
        again = load_world(path)
        assert world_to_dict(again) == world_to_dict(world)

    def test_shipped_worlds_load(self):
        assert shipped_world().dim == 2
        assert shipped_world("quadrotor.world").dim == 3

    @pytest.mark.parametrize(
        "doc",
        [
            {},
            {"bounds": [[0, 1]]},
            {"bounds": [[0, 1], [0, 1]], "static": [{"type": "blob", "params": {}}]},
            {"bounds": [[0, 1], [0, 1]], "static": [{"type": "circle", "params": {"center": [0, 0]}}]},
            {"bounds": [[0, 1], [0, 1]], "static": [{"type": "polygon", "params": {"vertices": [[0, 0], [1, 1], [0, 1], [1, 0]]}}]},
        ],
    )
    def test_malformed(self, doc):
        with pytest.raises(WorldError):
            world_from_dict(doc)

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.world"
        path.write_text("bounds: [[0, 1]\n")
        with pytest.raises(WorldError):
            load_world(path)
