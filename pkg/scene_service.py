# scene_service.py
"""
Domain-randomized scene synthesis around a truck-mounted crane.

One scene holds the truck with its loading platform at the world origin, the
crane gripper on a circle behind the truck, a forklift carrying the LiDAR on
its mast, pallets (possibly stacked or topped with clutter), trees, bushes and
flat walls. Every constrained placement is rejection-sampled against the
clearance rules in `required_clearance`; the same rules drive
`clearance_violations`, the exhaustive checker used by the pipeline audit.
"""
import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import SceneConfig
from errors import BadRatios, ConfigError, PlacementFailure, RegionTooSmall
from geometry_core import IDENTITY, Pose, UnitQuaternion, heading_deg, quat_multiply
from lidar_service import SceneGeometry, SceneObject
from mesh_service import MeshService, ObjectClass, ParamTarget, TriangleMesh, articulate, build_prop

logger = logging.getLogger(__name__)

GROUND_ID = 0
GROUND_HALF_SIZE_M = 40.0

TRUCK_BACKSIDE = (-6.6, 0.0)
TRUCK_FOOTPRINT_CENTER = (-2.0, 0.0)
TRUCK_FOOTPRINT_HALF = (4.6, 1.2)
PLATFORM_POSITION = (-0.6, -1.2, 1.4)

FORKLIFT_FOOTPRINT_OFFSET = (-0.2, 0.0)
FORKLIFT_FOOTPRINT_HALF = (1.0, 0.6)
SENSOR_MAST_OFFSET_X = 0.85

PALLET_FOOTPRINT_HALF = (0.6, 0.4)
PERSON_FOOTPRINT_HALF = (0.15, 0.25)
WALL_THICKNESS_HALF = 0.1

GRIPPER_TRUCK_CLEARANCE_M = 1.0
PERSON_CLEARANCE_M = 1.0
VEGETATION_MAX_HALF_M = 1.2
STACK_YAW_JITTER_DEG = 10.0
STACK_SHIFT_M = 0.05

ORIENTATION_RULES = ('toward', 'away', 'either', 'random')
STRUCTURE_KINDS = {'truck', 'forklift', 'gripper', 'wall'}
VEGETATION_KINDS = {'tree', 'bush'}
# measured from their center; everything else by its rectangle
POINT_KINDS = {'pallet', 'tree', 'bush', 'gripper'}
SPLIT_NAMES = ('train', 'test', 'val')


# --- 2D footprints -------------------------------------------------------------

def _cross2(a: np.ndarray, b: np.ndarray) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    length_sq = float(ab @ ab)
    t = 0.0 if length_sq == 0.0 else min(max(float((p - a) @ ab) / length_sq, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _segments_cross(a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray) -> bool:
    d1, d2 = _cross2(b - a, c - a), _cross2(b - a, d - a)
    d3, d4 = _cross2(d - c, a - c), _cross2(d - c, b - c)
    return d1 * d2 < 0.0 and d3 * d4 < 0.0


@dataclass(frozen=True)
class Footprint:
    """Oriented rectangle on the ground plane; zero half extents make it a point"""

    center: Tuple[float, float]
    yaw: float = 0.0
    half_extents: Tuple[float, float] = (0.0, 0.0)

    def _to_local(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.center, dtype=float)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.column_stack([p[:, 0] * c + p[:, 1] * s, -p[:, 0] * s + p[:, 1] * c])

    def corners(self) -> np.ndarray:
        hx, hy = self.half_extents
        local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rotation = np.array([[c, -s], [s, c]])
        return local @ rotation.T + np.asarray(self.center, dtype=float)

    def distance_to_point(self, point) -> float:
        local = self._to_local(point)[0]
        dx = max(abs(local[0]) - self.half_extents[0], 0.0)
        dy = max(abs(local[1]) - self.half_extents[1], 0.0)
        return math.hypot(dx, dy)

    def distance_to(self, other: 'Footprint') -> float:
        """Exact distance between two rectangles, 0 when they touch or overlap"""
        mine, theirs = self.corners(), other.corners()
        if any(other.distance_to_point(p) == 0.0 for p in mine):
            return 0.0
        if any(self.distance_to_point(p) == 0.0 for p in theirs):
            return 0.0
        my_edges = [(mine[i], mine[(i + 1) % 4]) for i in range(4)]
        their_edges = [(theirs[i], theirs[(i + 1) % 4]) for i in range(4)]
        for a, b in my_edges:
            for c, d in their_edges:
                if _segments_cross(a, b, c, d):
                    return 0.0
        best = min(_point_segment_distance(p, c, d) for p in mine for c, d in their_edges)
        return min(best, min(_point_segment_distance(p, a, b) for p in theirs for a, b in my_edges))


# --- placements and clearance rules --------------------------------------------

@dataclass(frozen=True)
class Placement:
    """One posed object of a scene; `dims` are the prop parameters needed to rebuild its mesh"""

    instance_id: int
    kind: str
    pose: Pose
    object_class: ObjectClass = ObjectClass.NO_OBJECT
    opening_deg: Optional[float] = None
    dims: Dict = field(default_factory=dict)
    parent_id: Optional[int] = None

    def to_dict(self) -> Dict:
        return {
            'instance_id': self.instance_id,
            'kind': self.kind,
            'pose': self.pose.to_dict(),
            'class': int(self.object_class),
            'opening': self.opening_deg,
            'dims': dict(self.dims),
            'parent_id': self.parent_id,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'Placement':
        return cls(int(data['instance_id']), data['kind'], Pose.from_dict(data['pose']),
                   ObjectClass(data['class']), data.get('opening'), dict(data.get('dims', {})),
                   data.get('parent_id'))


def placement_footprint(placement: Placement) -> Optional[Footprint]:
    """Clearance footprint of a placement; None for things that ride on others or need no clearance"""
    kind = placement.kind
    if placement.parent_id is not None or kind in ('ground', 'loading_platform', 'box', 'cylinder'):
        return None
    xy = placement.pose.position[:2]
    if kind in POINT_KINDS:
        return Footprint(tuple(xy))
    yaw = math.radians(heading_deg(placement.pose.orientation))
    if kind == 'truck':
        return Footprint(TRUCK_FOOTPRINT_CENTER, 0.0, TRUCK_FOOTPRINT_HALF)
    if kind == 'forklift':
        center = placement.pose.apply(np.array([FORKLIFT_FOOTPRINT_OFFSET[0], FORKLIFT_FOOTPRINT_OFFSET[1], 0.0]))
        return Footprint((float(center[0]), float(center[1])), yaw, FORKLIFT_FOOTPRINT_HALF)
    if kind == 'wall':
        return Footprint(tuple(xy), yaw, (placement.dims['length'] / 2.0, WALL_THICKNESS_HALF))
    if kind == 'person':
        return Footprint(tuple(xy), yaw, PERSON_FOOTPRINT_HALF)
    raise ValueError(f"No footprint rule for kind '{kind}'")


def required_clearance(kind_a: str, kind_b: str, config: SceneConfig) -> Optional[float]:
    """Minimum ground distance between two kinds, None when unconstrained"""
    pair = {kind_a, kind_b}
    if 'person' in pair:
        return PERSON_CLEARANCE_M
    if pair == {'gripper', 'truck'}:
        return GRIPPER_TRUCK_CLEARANCE_M
    if pair <= STRUCTURE_KINDS:
        return config.pallet_min_clearance
    if 'pallet' in pair:
        other = pair - {'pallet'}
        if not other:
            return config.pallet_base_spacing
        if other <= STRUCTURE_KINDS:
            return config.pallet_min_clearance
    if pair & VEGETATION_KINDS:
        if pair <= VEGETATION_KINDS:
            return config.vegetation_min_spacing
        return config.vegetation_min_spacing + VEGETATION_MAX_HALF_M
    return None


def _fits(candidate: Placement, placed: Iterable[Placement], config: SceneConfig) -> bool:
    footprint = placement_footprint(candidate)
    if footprint is None:
        return True
    for other in placed:
        other_footprint = placement_footprint(other)
        if other_footprint is None:
            continue
        clearance = required_clearance(candidate.kind, other.kind, config)
        if clearance is not None and footprint.distance_to(other_footprint) < clearance:
            return False
    return True


def _keepouts_for(kind: str, placed: Iterable[Placement], config: SceneConfig) -> List[Tuple[Footprint, float]]:
    keepouts = []
    for other in placed:
        footprint = placement_footprint(other)
        clearance = required_clearance(kind, other.kind, config)
        if footprint is not None and clearance is not None:
            keepouts.append((footprint, clearance))
    return keepouts


# --- samplers ------------------------------------------------------------------

def place_on_circle(center: Sequence[float], radius_range: Sequence[float], orientation_rule: str,
                    rng: np.random.Generator,
                    points_of_interest: Optional[Sequence[Sequence[float]]] = None) -> Pose:
    """
    Ground pose uniformly distributed in the annulus around `center`.

    Args:
        orientation_rule: 'toward' / 'away' from a random point of interest,
            'either' of the two with equal odds, or 'random' yaw

    Returns:
        Pose with z = 0 and a pure yaw orientation
    """
    r0, r1 = float(radius_range[0]), float(radius_range[1])
    if r0 < 0 or r1 < r0:
        raise ValueError(f"Invalid radius range {radius_range}")
    if orientation_rule not in ORIENTATION_RULES:
        raise ValueError(f"Unknown orientation rule '{orientation_rule}'")
    radius = math.sqrt(rng.uniform(r0 * r0, r1 * r1)) if r1 > r0 else r0
    theta = rng.uniform(0.0, 2.0 * math.pi)
    x = float(center[0]) + radius * math.cos(theta)
    y = float(center[1]) + radius * math.sin(theta)

    rule = orientation_rule
    if rule == 'either':
        rule = 'toward' if rng.random() < 0.5 else 'away'
    yaw = rng.uniform(-math.pi, math.pi)
    if rule in ('toward', 'away'):
        if not points_of_interest:
            raise ValueError(f"Orientation rule '{orientation_rule}' needs points of interest")
        px, py = points_of_interest[int(rng.integers(len(points_of_interest)))]
        if math.hypot(px - x, py - y) > 0.0:
            yaw = math.atan2(py - y, px - x)
            if rule == 'away':
                yaw += math.pi
    return Pose((x, y, 0.0), UnitQuaternion.from_yaw(yaw))


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _gradient_noise(points: np.ndarray, perm: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    cell = np.floor(points).astype(np.int64)
    frac = points - cell
    xi, yi = cell[:, 0] & 255, cell[:, 1] & 255

    def corner(dx: int, dy: int) -> np.ndarray:
        g = gradients[perm[perm[xi + dx] + ((yi + dy) & 255)] & 255]
        return g[:, 0] * (frac[:, 0] - dx) + g[:, 1] * (frac[:, 1] - dy)

    u, v = _fade(frac[:, 0]), _fade(frac[:, 1])
    bottom = corner(0, 0) + u * (corner(1, 0) - corner(0, 0))
    top = corner(0, 1) + u * (corner(1, 1) - corner(0, 1))
    return bottom + v * (top - bottom)


def fractal_perlin(points: np.ndarray, octaves: int = 3, persistence: float = 0.5, frequency: float = 0.08,
                   seed: int = 0, lacunarity: float = 2.0) -> np.ndarray:
    """Sum of Perlin gradient-noise octaves at 2D points, rescaled into [-1, 1]"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(256)
    perm = np.concatenate([perm, perm])
    angles = rng.uniform(0.0, 2.0 * math.pi, 256)
    gradients = np.column_stack([np.cos(angles), np.sin(angles)])

    total = np.zeros(len(points))
    amplitude, norm, freq = 1.0, 0.0, frequency
    for _ in range(max(1, octaves)):
        total += amplitude * _gradient_noise(points * freq, perm, gradients)
        norm += amplitude
        amplitude *= persistence
        freq *= lacunarity
    # unit gradients bound a single octave by sqrt(2)/2
    return np.clip(total / norm * math.sqrt(2.0), -1.0, 1.0)


@dataclass(frozen=True)
class NoiseParams:
    octaves: int = 3
    persistence: float = 0.5
    frequency: float = 0.08
    amplitude: float = 1.0
    seed: int = 0

    @classmethod
    def from_config(cls, config: SceneConfig, seed: int) -> 'NoiseParams':
        return cls(config.perlin_octaves, config.perlin_persistence, config.perlin_frequency,
                   config.perlin_amplitude, seed)


@dataclass(frozen=True)
class Region:
    """Annulus (a disc when inner_radius is 0) on the ground plane"""

    center: Tuple[float, float] = (0.0, 0.0)
    inner_radius: float = 0.0
    outer_radius: float = 1.0

    @property
    def area(self) -> float:
        return math.pi * (self.outer_radius ** 2 - self.inner_radius ** 2)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        radius = math.sqrt(rng.uniform(self.inner_radius ** 2, self.outer_radius ** 2))
        theta = rng.uniform(0.0, 2.0 * math.pi)
        return np.array([self.center[0] + radius * math.cos(theta), self.center[1] + radius * math.sin(theta)])


def poisson_disk_perlin(region: Region, base_radius: float, noise: NoiseParams, rng: np.random.Generator,
                        keepouts: Sequence[Tuple[Footprint, float]] = (), max_points: Optional[int] = None,
                        max_attempts: int = 2000) -> np.ndarray:
    """
    Dart-throwing Poisson-disk sampling with a Perlin-modulated radius.

    The local radius is base_radius * (1 + amplitude * (n + 1) / 2) for the
    noise value n in [-1, 1], so it never drops below base_radius. A candidate
    is also kept only with probability 1 - amplitude * (n + 1) / 2 (floored at
    0.05), which gathers the points into clusters where the noise is low.
    Two accepted points are at least the larger of their local radii apart,
    and every point keeps its clearance from each keep-out footprint.

    Raises:
        RegionTooSmall when the region has no area or nothing could be placed
    """
    if region.area <= 0.0 or base_radius <= 0.0:
        raise RegionTooSmall(f"Region area {region.area:.3f} m^2 / base radius {base_radius} leaves no room")
    if max_points == 0:
        return np.zeros((0, 2))

    def local_radius(xy: np.ndarray) -> Tuple[float, float]:
        n = float(fractal_perlin(xy[None, :], noise.octaves, noise.persistence, noise.frequency, noise.seed)[0])
        density = noise.amplitude * (n + 1.0) / 2.0
        return base_radius * (1.0 + density), max(1.0 - density, 0.05)

    points: List[np.ndarray] = []
    radii: List[float] = []
    for _ in range(max_attempts):
        if max_points is not None and len(points) >= max_points:
            break
        candidate = region.sample(rng)
        radius, keep_probability = local_radius(candidate)
        if rng.random() >= keep_probability:
            continue
        if any(footprint.distance_to_point(candidate) < clearance for footprint, clearance in keepouts):
            continue
        if points:
            distances = np.linalg.norm(np.asarray(points) - candidate, axis=1)
            if np.any(distances < np.maximum(np.asarray(radii), radius)):
                continue
        points.append(candidate)
        radii.append(radius)

    if not points:
        raise RegionTooSmall(f"No admissible position in {max_attempts} attempts")
    if max_points is not None and len(points) < max_points:
        logger.debug(f"Poisson-disk placed {len(points)}/{max_points} points")
    return np.asarray(points)


# --- scene assembly ------------------------------------------------------------

@dataclass(eq=False)
class SceneInstance:
    geometry: SceneGeometry
    targets: List[ParamTarget]
    placements: List[Placement]
    config: SceneConfig
    seed: int
    scene_index: int = 0

    @property
    def sensor_pose(self) -> Pose:
        return self.geometry.sensor_pose

    def to_manifest(self, mesh_hash: Optional[str] = None) -> Dict:
        return {
            'scene_index': self.scene_index,
            'seed': self.seed,
            'config': self.config.model_dump(mode='json'),
            'config_hash': scene_config_hash(self.config),
            'mesh_hash': mesh_hash,
            'sensor_pose': self.sensor_pose.to_dict(),
            'placements': [p.to_dict() for p in self.placements],
            'targets': [t.to_dict() for t in self.targets],
        }

    @classmethod
    def from_manifest(cls, data: Dict, meshes: Optional[MeshService] = None) -> 'SceneInstance':
        meshes = meshes or MeshService()
        placements = [Placement.from_dict(p) for p in data['placements']]
        sensor_pose = Pose.from_dict(data['sensor_pose'])
        return cls(geometry=build_geometry(placements, sensor_pose, meshes),
                   targets=[ParamTarget.from_dict(t) for t in data['targets']],
                   placements=placements, config=SceneConfig.model_validate(data['config']),
                   seed=int(data['seed']), scene_index=int(data.get('scene_index', 0)))


def scene_config_hash(config: SceneConfig) -> str:
    canonical = json.dumps(config.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def serialize_scene(instance: SceneInstance, mesh_hash: Optional[str] = None) -> str:
    return json.dumps(instance.to_manifest(mesh_hash), sort_keys=True, indent=2)


def ground_plane(half_size: float = GROUND_HALF_SIZE_M) -> TriangleMesh:
    vertices = np.array([[-half_size, -half_size, 0.0], [half_size, -half_size, 0.0],
                         [half_size, half_size, 0.0], [-half_size, half_size, 0.0]])
    return TriangleMesh('ground', vertices, np.array([[0, 1, 2], [0, 2, 3]]))


def build_geometry(placements: List[Placement], sensor_pose: Pose, meshes: MeshService) -> SceneGeometry:
    """Instantiate meshes for every placement; grippers get their jaws opened to the sampled angle"""
    objects = []
    for placement in placements:
        override = None
        if placement.kind == 'ground':
            mesh = ground_plane(placement.dims.get('half_size', GROUND_HALF_SIZE_M))
        elif placement.object_class is not ObjectClass.NO_OBJECT:
            mesh = meshes.get(placement.object_class)
            if placement.object_class is ObjectClass.GRIPPER:
                override = articulate(mesh, placement.opening_deg - mesh.opening_deg).vertices
        else:
            mesh = build_prop(placement.kind, **placement.dims)
        objects.append(SceneObject(placement.instance_id, mesh, placement.pose, placement.object_class, override))
    return SceneGeometry(objects, sensor_pose)


def _random_tilt(rng: np.random.Generator, max_deg: float) -> UnitQuaternion:
    axis_angle = rng.uniform(0.0, 2.0 * math.pi)
    tilt = math.radians(rng.uniform(0.0, max_deg)) if max_deg > 0 else 0.0
    return UnitQuaternion.from_axis_angle((math.cos(axis_angle), math.sin(axis_angle), 0.0), tilt)


class _SceneBuilder:
    """Stateful helper for one build: RNG stream, id counter and the placements so far"""

    def __init__(self, config: SceneConfig, meshes: MeshService, scene_index: int):
        self.config = config
        self.meshes = meshes
        self.rng = np.random.default_rng([config.rng_seed, scene_index])
        self.ids = itertools.count(GROUND_ID + 1)
        self.placements: List[Placement] = []

    def add(self, placement: Placement) -> Placement:
        self.placements.append(placement)
        return placement

    def retry(self, what: str, propose) -> Placement:
        for _ in range(self.config.max_retries):
            candidate = propose()
            if _fits(candidate, self.placements, self.config):
                return self.add(candidate)
        raise PlacementFailure(f"Could not place the {what} within {self.config.max_retries} attempts")

    def place_static(self):
        self.add(Placement(GROUND_ID, 'ground', Pose.identity(), dims={'half_size': GROUND_HALF_SIZE_M}))
        self.add(Placement(next(self.ids), 'truck', Pose.identity()))
        self.add(Placement(next(self.ids), 'loading_platform', Pose(PLATFORM_POSITION, IDENTITY),
                           ObjectClass.LOADING_PLATFORM))

    def place_gripper(self):
        config, rng = self.config, self.rng
        instance_id = next(self.ids)

        def propose() -> Placement:
            ground = place_on_circle(TRUCK_BACKSIDE, config.gripper_radius_range, 'random', rng)
            height = rng.uniform(*config.gripper_height_range)
            orientation = quat_multiply(_random_tilt(rng, config.gripper_tilt_max_deg), ground.orientation)
            opening = float(rng.uniform(*config.opening_range))
            pose = Pose((ground.position[0], ground.position[1], height), orientation)
            return Placement(instance_id, 'gripper', pose, ObjectClass.GRIPPER, opening)

        self.retry('gripper', propose)

    def place_forklift(self) -> Pose:
        config, rng = self.config, self.rng
        instance_id = next(self.ids)

        def propose() -> Placement:
            pose = place_on_circle((0.0, 0.0), config.forklift_radius_range, 'either', rng,
                                   config.points_of_interest)
            mast_height = float(rng.uniform(*config.mast_height_range))
            pitch = float(rng.uniform(*config.sensor_pitch_range_deg))
            return Placement(instance_id, 'forklift', pose,
                             dims={'mast_height': mast_height, 'sensor_pitch_deg': pitch})

        forklift = self.retry('forklift', propose)
        # the sensor sits in front of the mast top, pitched about its own y axis (positive looks down)
        pitch = UnitQuaternion.from_axis_angle((0.0, 1.0, 0.0), math.radians(forklift.dims['sensor_pitch_deg']))
        mount = Pose((SENSOR_MAST_OFFSET_X, 0.0, forklift.dims['mast_height']), pitch)
        return forklift.pose.compose(mount)

    def place_walls(self):
        config, rng = self.config, self.rng
        lo, hi = config.wall_count_range
        for _ in range(int(rng.integers(lo, hi + 1))):
            instance_id = next(self.ids)

            def propose() -> Placement:
                pose = place_on_circle((0.0, 0.0), config.wall_radius_range, 'random', rng)
                dims = {'length': float(rng.uniform(4.0, 10.0)), 'height': float(rng.uniform(2.0, 4.0))}
                return Placement(instance_id, 'wall', pose, dims=dims)

            self.retry('wall', propose)

    def place_pallets(self):
        config, rng = self.config, self.rng
        count = int(rng.integers(1, config.pallet_count_max + 1)) if config.pallet_count_max > 0 else 0
        if count == 0:
            return
        noise = NoiseParams.from_config(config, int(rng.integers(2 ** 31)))
        region = Region(TRUCK_FOOTPRINT_CENTER, 0.0, config.pallet_region_radius)
        positions = poisson_disk_perlin(region, config.pallet_base_spacing, noise, rng,
                                        _keepouts_for('pallet', self.placements, config), max_points=count,
                                        max_attempts=config.max_retries * count)
        pallet_mesh = self.meshes.get(ObjectClass.PALLET)
        pallet_height = float(np.ptp(pallet_mesh.vertices[:, 2]))
        for x, y in positions:
            yaw = rng.uniform(-math.pi, math.pi)
            base = self.add(Placement(next(self.ids), 'pallet', Pose((x, y, 0.0), UnitQuaternion.from_yaw(yaw)),
                                      ObjectClass.PALLET))
            top = base
            levels = 1
            while levels < config.stack_max and rng.random() < config.stack_probability:
                jitter = rng.uniform(-STACK_SHIFT_M, STACK_SHIFT_M, size=2)
                stacked_yaw = yaw + math.radians(rng.uniform(-STACK_YAW_JITTER_DEG, STACK_YAW_JITTER_DEG))
                position = (x + jitter[0], y + jitter[1], top.pose.position[2] + pallet_height)
                top = self.add(Placement(next(self.ids), 'pallet', Pose(position, UnitQuaternion.from_yaw(stacked_yaw)),
                                         ObjectClass.PALLET, parent_id=base.instance_id))
                levels += 1
            self._top_off(top, base.instance_id, pallet_height)

    def _top_off(self, top: Placement, base_id: int, pallet_height: float):
        config, rng = self.config, self.rng
        surface = (top.pose.position[0], top.pose.position[1], top.pose.position[2] + pallet_height)
        if rng.random() < config.box_probability:
            dims = {'size': [float(rng.uniform(0.4, 1.0)), float(rng.uniform(0.4, 0.8)), float(rng.uniform(0.3, 0.8))]}
            self.add(Placement(next(self.ids), 'box', Pose(surface, top.pose.orientation), dims=dims,
                               parent_id=base_id))
        elif rng.random() < config.pallet_cylinder_probability:
            dims = {'radius': float(rng.uniform(0.15, 0.35)), 'height': float(rng.uniform(0.4, 1.2))}
            self.add(Placement(next(self.ids), 'cylinder', Pose(surface, IDENTITY), dims=dims, parent_id=base_id))

    def place_vegetation(self):
        config, rng = self.config, self.rng
        trees = int(rng.integers(0, config.tree_count_max + 1))
        bushes = int(rng.integers(0, config.bush_count_max + 1))
        if trees + bushes == 0:
            return
        noise = NoiseParams.from_config(config, int(rng.integers(2 ** 31)))
        region = Region(TRUCK_FOOTPRINT_CENTER, 0.0, config.vegetation_region_radius)
        try:
            positions = poisson_disk_perlin(region, config.vegetation_min_spacing, noise, rng,
                                            _keepouts_for('tree', self.placements, config),
                                            max_points=trees + bushes,
                                            max_attempts=config.max_retries * (trees + bushes))
        except RegionTooSmall:
            logger.warning("⚠️ No room left for vegetation in this scene")
            return
        for i, (x, y) in enumerate(positions):
            pose = Pose((x, y, 0.0), UnitQuaternion.from_yaw(rng.uniform(-math.pi, math.pi)))
            if i < trees:
                dims = {'height': float(rng.uniform(3.0, 8.0)),
                        'crown': float(rng.uniform(1.2, 2 * VEGETATION_MAX_HALF_M))}
                self.add(Placement(next(self.ids), 'tree', pose, dims=dims))
            else:
                self.add(Placement(next(self.ids), 'bush', pose, dims={'size': float(rng.uniform(0.5, 1.5))}))

    def place_occluder(self, sensor_pose: Pose):
        config, rng = self.config, self.rng
        if rng.random() >= config.occluder_probability:
            return
        targets = [p for p in self.placements if p.object_class is not ObjectClass.NO_OBJECT]
        instance_id = next(self.ids)
        sensor_xy = np.asarray(sensor_pose.position[:2])
        for _ in range(config.max_retries):
            target = targets[int(rng.integers(len(targets)))]
            fraction = rng.uniform(0.4, 0.7)
            x, y = sensor_xy + fraction * (np.asarray(target.pose.position[:2]) - sensor_xy)
            candidate = Placement(instance_id, 'person',
                                  Pose((x, y, 0.0), UnitQuaternion.from_yaw(rng.uniform(-math.pi, math.pi))))
            if _fits(candidate, self.placements, config):
                self.add(candidate)
                return
        logger.warning(f"⚠️ Skipped the occluder: no free spot in {config.max_retries} attempts")

    def targets(self) -> List[ParamTarget]:
        return [ParamTarget(p.object_class, p.pose, p.opening_deg, p.instance_id)
                for p in self.placements if p.object_class is not ObjectClass.NO_OBJECT]


def build_scene(config: SceneConfig, meshes: Optional[MeshService] = None, scene_index: int = 0) -> SceneInstance:
    """
    Sample one complete scene.

    Deterministic in (config, scene_index): the RNG stream is derived from
    config.rng_seed and the scene index, nothing else.

    Raises:
        PlacementFailure when a required object cannot be placed within config.max_retries
    """
    meshes = meshes or MeshService()
    alpha_max = meshes.alpha_max_deg
    if config.opening_range[1] > alpha_max:
        raise ConfigError(f"opening_range {config.opening_range} exceeds the gripper's {alpha_max} deg")

    builder = _SceneBuilder(config, meshes, scene_index)
    builder.place_static()
    builder.place_gripper()
    sensor_pose = builder.place_forklift()
    builder.place_walls()
    builder.place_pallets()
    builder.place_vegetation()
    builder.place_occluder(sensor_pose)

    placements = builder.placements
    instance = SceneInstance(geometry=build_geometry(placements, sensor_pose, meshes), targets=builder.targets(),
                             placements=placements, config=config, seed=config.rng_seed, scene_index=scene_index)
    logger.debug(f"Scene {scene_index}: {len(placements)} placements, {len(instance.targets)} targets")
    return instance


def clearance_violations(placements: List[Placement], config: SceneConfig) -> List[str]:
    """Exhaustive pairwise check of every clearance rule; empty when the scene is valid"""
    violations = []
    constrained = [(p, placement_footprint(p)) for p in placements]
    constrained = [(p, f) for p, f in constrained if f is not None]
    for (a, fa), (b, fb) in itertools.combinations(constrained, 2):
        clearance = required_clearance(a.kind, b.kind, config)
        if clearance is None:
            continue
        distance = fa.distance_to(fb)
        if distance < clearance - 1e-9:
            violations.append(f"{a.kind} {a.instance_id} and {b.kind} {b.instance_id}: "
                              f"{distance:.3f} m < {clearance:.3f} m")
    return violations


def dataset_split(items: Sequence, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> Dict[str, List]:
    """
    Seeded shuffle split into train / test / val.

    Ratios summing to 1 give a partition. Sums up to 1.1 are tolerated:
    test and val stay disjoint and train then overlaps them.

    Raises:
        BadRatios for negative ratios, a wrong count or a sum above 1.1
    """
    ratios = [float(r) for r in ratios]
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) > 1.1 + 1e-9 or sum(ratios) <= 0:
        raise BadRatios(f"Split ratios must be 3 non-negative values summing to at most 1.1, got {ratios}")
    items = list(items)
    n = len(items)
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(ratios[1] * n))
    n_val = min(int(round(ratios[2] * n)), n - n_test)
    if abs(sum(ratios) - 1.0) < 1e-9:
        n_train = n - n_test - n_val
    else:
        n_train = min(int(round(ratios[0] * n)), n)
    if sum(ratios) > 1.0 + 1e-9:
        logger.warning(f"⚠️ Split ratios {ratios} sum above 1: train overlaps test/val")

    test = order[:n_test]
    val = order[n_test:n_test + n_val]
    train = order[n - n_train:] if n_train else order[:0]
    return {
        'train': [items[i] for i in sorted(train)],
        'test': [items[i] for i in sorted(test)],
        'val': [items[i] for i in sorted(val)],
    }
