# test_scene_service.py
import math

import numpy as np
import pytest

from config import SceneConfig
from errors import BadRatios, ConfigError, RegionTooSmall
from geometry_core import Pose, UnitQuaternion, heading_deg, wrap_angle_deg
from mesh_service import MeshService, ObjectClass
from scene_service import (GROUND_ID, TRUCK_BACKSIDE, Footprint, NoiseParams, Placement, Region, SceneInstance,
                           build_scene, clearance_violations, dataset_split, fractal_perlin, place_on_circle,
                           placement_footprint, poisson_disk_perlin, required_clearance, serialize_scene)


def test_footprint_distances():
    a = Footprint((0.0, 0.0), 0.0, (1.0, 0.5))
    b = Footprint((4.0, 0.0), 0.0, (1.0, 0.5))
    assert a.distance_to(b) == pytest.approx(2.0)
    assert a.distance_to_point((0.0, 3.5)) == pytest.approx(3.0)
    assert a.distance_to_point((0.5, 0.2)) == 0.0
    rotated = Footprint((3.0, 0.0), math.pi / 4, (1.0, 1.0))
    assert a.distance_to(rotated) == pytest.approx(3.0 - 1.0 - math.sqrt(2.0))
    crossing = Footprint((0.0, 0.0), math.pi / 2, (3.0, 0.1))
    assert a.distance_to(crossing) == 0.0
    corner_gap = Footprint((3.0, 2.5), 0.0, (1.0, 1.0))
    assert a.distance_to(corner_gap) == pytest.approx(math.hypot(1.0, 1.0))


def test_required_clearance_rules():
    config = SceneConfig()
    assert required_clearance('gripper', 'truck', config) == 1.0
    assert required_clearance('forklift', 'truck', config) == 1.5
    assert required_clearance('pallet', 'forklift', config) == 1.5
    assert required_clearance('pallet', 'pallet', config) == 2.0
    assert required_clearance('tree', 'bush', config) == 1.0
    assert required_clearance('tree', 'pallet', config) == pytest.approx(2.2)
    assert required_clearance('person', 'pallet', config) == 1.0
    assert required_clearance('box', 'tree', config) == pytest.approx(2.2)
    assert required_clearance('box', 'cylinder', config) is None


def test_place_on_circle_ranges_and_orientation_rules(rng):
    center = (1.0, -2.0)
    for _ in range(200):
        pose = place_on_circle(center, (5.0, 16.0), 'random', rng)
        r = math.hypot(pose.position[0] - center[0], pose.position[1] - center[1])
        assert 5.0 <= r <= 16.0
        assert pose.position[2] == 0.0
    poi = [(0.0, 0.0)]
    toward = place_on_circle((0.0, 0.0), (3.0, 3.0), 'toward', rng, poi)
    x, y, _ = toward.position
    assert wrap_angle_deg(heading_deg(toward.orientation) - math.degrees(math.atan2(-y, -x))) < 1e-9
    away = place_on_circle((0.0, 0.0), (3.0, 3.0), 'away', rng, poi)
    x, y, _ = away.position
    assert wrap_angle_deg(heading_deg(away.orientation) - math.degrees(math.atan2(y, x))) < 1e-9
    with pytest.raises(ValueError):
        place_on_circle((0.0, 0.0), (3.0, 2.0), 'random', rng)
    with pytest.raises(ValueError):
        place_on_circle((0.0, 0.0), (1.0, 2.0), 'toward', rng)


def test_place_on_circle_is_area_uniform():
    rng = np.random.default_rng(5)
    radii = np.array([math.hypot(*place_on_circle((0.0, 0.0), (0.0, 1.0), 'random', rng).position[:2])
                      for _ in range(4000)])
    # uniform on the disc: P(r < 0.5) = 0.25
    assert np.mean(radii < 0.5) == pytest.approx(0.25, abs=0.03)


def test_fractal_perlin_bounds_and_determinism(rng):
    points = rng.uniform(-50.0, 50.0, size=(500, 2))
    values = fractal_perlin(points, seed=4)
    assert values.min() >= -1.0 and values.max() <= 1.0
    np.testing.assert_array_equal(values, fractal_perlin(points, seed=4))
    assert not np.array_equal(values, fractal_perlin(points, seed=5))
    # lattice points of the base octave are zeros of gradient noise
    assert fractal_perlin(np.array([[0.0, 0.0]]), octaves=1, frequency=1.0)[0] == 0.0


def test_poisson_disk_spacing_and_keepouts(rng):
    region = Region((0.0, 0.0), 0.0, 10.0)
    keepout = (Footprint((0.0, 0.0), 0.0, (1.0, 1.0)), 1.5)
    points = poisson_disk_perlin(region, 1.0, NoiseParams(seed=2), rng, [keepout], max_points=30)
    assert 0 < len(points) <= 30
    distances = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    np.fill_diagonal(distances, np.inf)
    assert distances.min() >= 1.0
    assert all(keepout[0].distance_to_point(p) >= 1.5 for p in points)
    with pytest.raises(RegionTooSmall):
        poisson_disk_perlin(Region((0.0, 0.0), 2.0, 2.0), 1.0, NoiseParams(), rng)


def test_build_scene_contents_and_ranges(meshes):
    config = SceneConfig(rng_seed=11)
    for index in range(10):
        scene = build_scene(config, meshes, index)
        kinds = [p.kind for p in scene.placements]
        assert kinds[:3] == ['ground', 'truck', 'loading_platform']
        assert scene.placements[0].instance_id == GROUND_ID
        classes = [t.object_class for t in scene.targets]
        assert classes.count(ObjectClass.GRIPPER) == 1
        assert classes.count(ObjectClass.LOADING_PLATFORM) == 1
        assert classes.count(ObjectClass.PALLET) >= 1

        gripper = next(t for t in scene.targets if t.object_class is ObjectClass.GRIPPER)
        x, y, z = gripper.pose.position
        assert 3.5 <= math.hypot(x - TRUCK_BACKSIDE[0], y - TRUCK_BACKSIDE[1]) <= 8.0
        assert 0.5 <= z <= 4.5
        assert 0.0 <= gripper.opening_deg <= 90.0

        forklift = next(p for p in scene.placements if p.kind == 'forklift')
        assert 5.0 <= math.hypot(*forklift.pose.position[:2]) <= 16.0
        assert scene.sensor_pose.position[2] == pytest.approx(forklift.dims['mast_height'])
        assert len({p.instance_id for p in scene.placements}) == len(scene.placements)


def test_scene_constraint_audit(meshes):
    config = SceneConfig(rng_seed=2024)
    for index in range(100):
        scene = build_scene(config, meshes, index)
        assert clearance_violations(scene.placements, config) == []


def test_clearance_violations_flags_crowded_pallets():
    config = SceneConfig()
    placements = [
        Placement(1, 'pallet', Pose((0.0, 0.0, 0.0)), ObjectClass.PALLET),
        Placement(2, 'pallet', Pose((1.0, 0.0, 0.0)), ObjectClass.PALLET),
        Placement(3, 'pallet', Pose((1.0, 0.0, 0.144)), ObjectClass.PALLET, parent_id=2),
    ]
    violations = clearance_violations(placements, config)
    assert len(violations) == 1
    assert 'pallet 1' in violations[0]
    assert placement_footprint(placements[2]) is None


def test_build_scene_is_deterministic(meshes):
    config = SceneConfig(rng_seed=7)
    first = serialize_scene(build_scene(config, meshes, 3))
    assert serialize_scene(build_scene(config, meshes, 3)) == first
    assert serialize_scene(build_scene(config, meshes, 4)) != first


def test_scene_manifest_roundtrip(meshes):
    scene = build_scene(SceneConfig(rng_seed=1, occluder_probability=1.0, pallet_cylinder_probability=1.0), meshes, 0)
    restored = SceneInstance.from_manifest(scene.to_manifest(meshes.content_hash()), meshes)
    assert serialize_scene(restored) == serialize_scene(scene)
    np.testing.assert_array_equal(restored.geometry.corners, scene.geometry.corners)
    np.testing.assert_array_equal(restored.geometry.triangle_owner, scene.geometry.triangle_owner)


def test_robustness_props_are_clutter(meshes):
    config = SceneConfig(rng_seed=3, occluder_probability=1.0, pallet_cylinder_probability=1.0,
                         box_probability=0.0)
    scene = build_scene(config, meshes, 0)
    target_ids = {t.instance_id for t in scene.targets}
    for placement in scene.placements:
        if placement.kind in ('person', 'cylinder', 'box'):
            assert placement.instance_id not in target_ids
    assert any(p.kind == 'cylinder' for p in scene.placements)


def test_opening_range_beyond_gripper_limit_is_a_config_error():
    with pytest.raises(ConfigError):
        build_scene(SceneConfig(), MeshService(alpha_max_deg=60.0))


def test_gripper_geometry_is_opened(meshes):
    scene = build_scene(SceneConfig(rng_seed=5), meshes, 0)
    gripper = next(p for p in scene.placements if p.kind == 'gripper')
    obj = scene.geometry.instance(gripper.instance_id)
    assert obj.vertices_override is not None
    if gripper.opening_deg > 1.0:
        assert not np.allclose(obj.vertices_override, meshes.get(ObjectClass.GRIPPER).vertices)


def test_dataset_split_partitions():
    split = dataset_split(range(50), seed=3)
    assert [len(split[k]) for k in ('train', 'test', 'val')] == [40, 5, 5]
    assert sorted(split['train'] + split['test'] + split['val']) == list(range(50))
    assert split == dataset_split(range(50), seed=3)
    assert split != dataset_split(range(50), seed=4)
    assert split['test'] == sorted(split['test'])


def test_dataset_split_tolerates_small_overlap():
    split = dataset_split(range(50), (0.9, 0.1, 0.1), seed=0)
    assert len(split['train']) == 45
    assert not set(split['test']) & set(split['val'])
    assert set(split['train']) & (set(split['test']) | set(split['val']))


@pytest.mark.parametrize('ratios', [(0.8, 0.2), (0.9, 0.2, 0.1), (1.0, -0.1, 0.1), (0.0, 0.0, 0.0)])
def test_dataset_split_bad_ratios(ratios):
    with pytest.raises(BadRatios):
        dataset_split(range(10), ratios)


def test_placement_dict_roundtrip():
    placement = Placement(4, 'gripper', Pose((1.0, 2.0, 3.0), UnitQuaternion.from_yaw(0.3)), ObjectClass.GRIPPER,
                          30.0, {'k': 1.0})
    assert Placement.from_dict(placement.to_dict()) == placement
