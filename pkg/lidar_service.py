# lidar_service.py
"""
Livox-style scan simulation: ray tables, BVH raycasting against the scene,
farthest point sampling, occlusion culling of ground truth, preprocessing of
ingested captures and the point-level training augmentations.
"""
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from errors import ConfigError, EmptyAfterFilter, FrameMismatch, MissingSourceIds, NotNormalized
from geometry_core import (Pose, UnitQuaternion, Z_FLIP, farthest_point_indices, quat_multiply,
                           spherical_to_cartesian)
from mesh_service import ObjectClass, ParamTarget, ScaleRecord, TriangleMesh

logger = logging.getLogger(__name__)

DEFAULT_MAX_RANGE_M = 25.0
DEFAULT_BUDGET = 32768
LIVOX_MID70_FOV_DEG = 70.4
DEFAULT_CULL_THRESHOLDS = {
    ObjectClass.GRIPPER: 50,
    ObjectClass.LOADING_PLATFORM: 80,
    ObjectClass.PALLET: 30,
}
NOISE_SIGMA_MAX = 0.04
NOISE_PROBABILITY = 1.0 / 3.0
TILT_MAX_DEG = 5.0

BVH_LEAF_SIZE = 8
BVH_BOX_PADDING = 1e-7
HIT_T_MIN = 1e-9
MT_DET_EPS = 1e-12

CLOUD_MAGIC = b'PDCLOUD\x00'
CLOUD_VERSION = 1
CLOUD_HEADER = struct.Struct('<8sII')
CLOUD_RECORD = np.dtype([('x', '<f4'), ('y', '<f4'), ('z', '<f4'), ('source_id', '<u4')])
NO_SOURCE_ID = 0xFFFFFFFF


class Frame(Enum):
    SENSOR_BLENDER = 'SensorBlender'
    SENSOR_ROS = 'SensorRos'
    WORLD = 'World'


@dataclass(frozen=True, eq=False)
class RayTable:
    """Time-ordered ray directions in the sensor frame (radians)"""

    timestamps: np.ndarray
    azimuth: np.ndarray
    elevation: np.ndarray

    def __post_init__(self):
        timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        azimuth = np.asarray(self.azimuth, dtype=float).reshape(-1)
        elevation = np.asarray(self.elevation, dtype=float).reshape(-1)
        if not (len(timestamps) == len(azimuth) == len(elevation)) or len(timestamps) == 0:
            raise ValueError("Ray table needs at least one row and equal column lengths")
        if np.any(np.diff(timestamps) < 0):
            raise ValueError("Ray table timestamps must be non-decreasing")
        if not (np.all(np.isfinite(azimuth)) and np.all(np.isfinite(elevation))):
            raise ValueError("Ray table angles must be finite")
        if np.any(np.abs(elevation) >= math.pi / 2):
            raise ValueError("Ray table elevations must stay below 90 degrees")
        object.__setattr__(self, 'timestamps', timestamps)
        object.__setattr__(self, 'azimuth', azimuth)
        object.__setattr__(self, 'elevation', elevation)

    def __len__(self) -> int:
        return len(self.timestamps)

    def directions(self) -> np.ndarray:
        return spherical_to_cartesian(self.azimuth, self.elevation)


@dataclass(frozen=True, eq=False)
class ScanCloud:
    """Point set with provenance: simulated clouds carry per-point instance ids, ingested ones do not"""

    points: np.ndarray
    frame: Frame
    source_ids: Optional[np.ndarray] = None
    normalized: bool = False
    scale: Optional[ScaleRecord] = None
    flipped_from_ros: bool = False

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, 'points', points)
        if self.source_ids is not None:
            source_ids = np.asarray(self.source_ids, dtype=np.int64).reshape(-1)
            if len(source_ids) != len(points):
                raise ValueError("source_ids must match the point count")
            object.__setattr__(self, 'source_ids', source_ids)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, indices: np.ndarray) -> 'ScanCloud':
        ids = None if self.source_ids is None else self.source_ids[indices]
        return replace(self, points=self.points[indices], source_ids=ids)

    def extent(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)


@dataclass(frozen=True, eq=False)
class SceneObject:
    instance_id: int
    mesh: TriangleMesh
    pose: Pose
    object_class: ObjectClass = ObjectClass.NO_OBJECT
    vertices_override: Optional[np.ndarray] = None

    def world_corners(self) -> np.ndarray:
        body = self.mesh.vertices if self.vertices_override is None else self.vertices_override
        return self.pose.apply(body)[self.mesh.triangles]


class BVH:
    """Median-split bounding volume hierarchy over world-space triangles"""

    def __init__(self, corners: np.ndarray, leaf_size: int = BVH_LEAF_SIZE):
        self.corners = np.asarray(corners, dtype=float)
        self.leaf_size = leaf_size
        n = len(self.corners)
        centroids = self.corners.mean(axis=1)
        tri_lo = self.corners.min(axis=1)
        tri_hi = self.corners.max(axis=1)
        order = np.arange(n)
        node_lo, node_hi, left, right, start, count = [], [], [], [], [], []

        def new_node(lo_idx, hi_idx):
            ids = order[lo_idx:hi_idx]
            node_lo.append(tri_lo[ids].min(axis=0) - BVH_BOX_PADDING)
            node_hi.append(tri_hi[ids].max(axis=0) + BVH_BOX_PADDING)
            left.append(-1)
            right.append(-1)
            start.append(lo_idx)
            count.append(hi_idx - lo_idx)
            return len(node_lo) - 1

        if n:
            stack = [(new_node(0, n), 0, n)]
            while stack:
                node, lo_idx, hi_idx = stack.pop()
                if hi_idx - lo_idx <= leaf_size:
                    continue
                ids = order[lo_idx:hi_idx]
                spread = centroids[ids].max(axis=0) - centroids[ids].min(axis=0)
                axis = int(np.argmax(spread))
                ids = ids[np.argsort(centroids[ids, axis], kind='stable')]
                order[lo_idx:hi_idx] = ids
                mid = (lo_idx + hi_idx) // 2
                left[node] = new_node(lo_idx, mid)
                right[node] = new_node(mid, hi_idx)
                count[node] = 0
                stack.append((left[node], lo_idx, mid))
                stack.append((right[node], mid, hi_idx))

        self.order = order
        self.node_lo = np.array(node_lo).reshape(-1, 3)
        self.node_hi = np.array(node_hi).reshape(-1, 3)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.node_lo)

    def intersect(self, origins: np.ndarray, directions: np.ndarray, t_max: float = np.inf
                  ) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest hit per ray as (t, triangle index); misses are (inf, -1)"""
        origins = np.broadcast_to(np.asarray(origins, dtype=float), directions.shape)
        n_rays = len(directions)
        best_t = np.full(n_rays, np.inf)
        best_tri = np.full(n_rays, -1, dtype=np.int64)
        if len(self) == 0 or n_rays == 0:
            return best_t, best_tri
        safe = np.where(directions == 0.0, 1e-30, directions)
        inv_dir = 1.0 / safe

        stack = [(0, np.arange(n_rays))]
        while stack:
            node, ray_ids = stack.pop()
            o = origins[ray_ids]
            inv = inv_dir[ray_ids]
            t0 = (self.node_lo[node] - o) * inv
            t1 = (self.node_hi[node] - o) * inv
            t_near = np.minimum(t0, t1).max(axis=1)
            t_far = np.maximum(t0, t1).min(axis=1)
            limit = np.minimum(best_t[ray_ids], t_max)
            keep = (t_near <= t_far) & (t_far >= 0.0) & (t_near <= limit)
            ray_ids = ray_ids[keep]
            if len(ray_ids) == 0:
                continue
            if self.left[node] < 0:
                tri_ids = self.order[self.start[node]:self.start[node] + self.count[node]]
                t = intersect_triangles(origins[ray_ids], directions[ray_ids], self.corners[tri_ids])
                _update_nearest(best_t, best_tri, ray_ids, t, tri_ids)
            else:
                stack.append((self.right[node], ray_ids))
                stack.append((self.left[node], ray_ids))
        best_t[best_t > t_max] = np.inf
        best_tri[~np.isfinite(best_t)] = -1
        return best_t, best_tri


def intersect_triangles(origins: np.ndarray, directions: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Moller-Trumbore for every (ray, triangle) pair; (R, T) hit distances, inf on miss"""
    o = origins[:, None, :]
    d = directions[:, None, :]
    v0 = corners[None, :, 0]
    e1 = corners[None, :, 1] - v0
    e2 = corners[None, :, 2] - v0
    p = np.cross(d, e2)
    det = np.sum(e1 * p, axis=-1)
    with np.errstate(divide='ignore', invalid='ignore'):
        inv_det = 1.0 / det
        s = o - v0
        u = np.sum(s * p, axis=-1) * inv_det
        q = np.cross(s, e1)
        v = np.sum(d * q, axis=-1) * inv_det
        t = np.sum(e2 * q, axis=-1) * inv_det
    hit = (np.abs(det) > MT_DET_EPS) & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > HIT_T_MIN)
    return np.where(hit, t, np.inf)


def _update_nearest(best_t: np.ndarray, best_tri: np.ndarray, ray_ids: np.ndarray,
                    t: np.ndarray, tri_ids: np.ndarray):
    # equal distances resolve to the lowest triangle index
    current_t = best_t[ray_ids]
    current_tri = best_tri[ray_ids]
    for column, tri in enumerate(tri_ids):
        candidate = t[:, column]
        better = (candidate < current_t) | ((candidate == current_t) & np.isfinite(candidate)
                                            & ((current_tri < 0) | (tri < current_tri)))
        current_t = np.where(better, candidate, current_t)
        current_tri = np.where(better, tri, current_tri)
    best_t[ray_ids] = current_t
    best_tri[ray_ids] = current_tri


def brute_force_intersect(corners: np.ndarray, origins: np.ndarray, directions: np.ndarray,
                          t_max: float = np.inf, chunk: int = 2_000_000) -> Tuple[np.ndarray, np.ndarray]:
    """Reference nearest-hit query against every triangle"""
    origins = np.broadcast_to(np.asarray(origins, dtype=float), directions.shape)
    n_rays = len(directions)
    best_t = np.full(n_rays, np.inf)
    best_tri = np.full(n_rays, -1, dtype=np.int64)
    if len(corners) == 0:
        return best_t, best_tri
    rays_per_chunk = max(1, chunk // len(corners))
    tri_ids = np.arange(len(corners))
    for lo in range(0, n_rays, rays_per_chunk):
        ids = np.arange(lo, min(n_rays, lo + rays_per_chunk))
        t = intersect_triangles(origins[ids], directions[ids], corners)
        _update_nearest(best_t, best_tri, ids, t, tri_ids)
    best_t[best_t > t_max] = np.inf
    best_tri[~np.isfinite(best_t)] = -1
    return best_t, best_tri


class SceneGeometry:
    """Posed scene instances plus the sensor pose; the BVH is built once and shared read-only"""

    def __init__(self, objects: List[SceneObject], sensor_pose: Pose):
        self.objects = list(objects)
        self.sensor_pose = sensor_pose
        corners, owners = [], []
        for obj in self.objects:
            world = obj.world_corners()
            corners.append(world)
            owners.append(np.full(len(world), obj.instance_id, dtype=np.int64))
        self.corners = np.concatenate(corners) if corners else np.zeros((0, 3, 3))
        self.triangle_owner = np.concatenate(owners) if owners else np.zeros(0, dtype=np.int64)
        self._bvh = None

    @property
    def bvh(self) -> BVH:
        if self._bvh is None:
            self._bvh = BVH(self.corners)
            logger.debug(f"Built BVH with {len(self._bvh)} nodes over {len(self.corners)} triangles")
        return self._bvh

    def instance(self, instance_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.instance_id == instance_id:
                return obj
        raise KeyError(instance_id)


def raycast_scan(scene: SceneGeometry, rays: RayTable, max_range: float = DEFAULT_MAX_RANGE_M,
                 workers: int = 1, chunk_size: int = 16384) -> ScanCloud:
    """Cast every ray from the sensor origin; nearest hit within `max_range` becomes a world-frame point"""
    if max_range <= 0:
        raise ValueError(f"max_range must be positive, got {max_range}")
    origin = scene.sensor_pose.translation
    directions = scene.sensor_pose.orientation.rotate(rays.directions())
    bvh = scene.bvh

    chunks = [np.arange(lo, min(len(directions), lo + chunk_size))
              for lo in range(0, len(directions), chunk_size)]

    def cast(ids):
        return bvh.intersect(origin, directions[ids], t_max=max_range)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(cast, chunks))
    else:
        results = [cast(ids) for ids in chunks]

    t = np.concatenate([r[0] for r in results]) if results else np.zeros(0)
    tri = np.concatenate([r[1] for r in results]) if results else np.zeros(0, dtype=np.int64)
    hit = np.isfinite(t)
    points = origin + directions[hit] * t[hit, None]
    source_ids = scene.triangle_owner[tri[hit]]
    logger.debug(f"Raycast {len(rays)} rays -> {int(hit.sum())} hits within {max_range} m")
    return ScanCloud(points=points, frame=Frame.WORLD, source_ids=source_ids)


def to_sensor_frame(cloud: ScanCloud, sensor_pose: Pose) -> ScanCloud:
    if cloud.frame is not Frame.WORLD:
        raise ValueError(f"Expected a world-frame cloud, got {cloud.frame.value}")
    local = sensor_pose.inverse().apply(cloud.points) if len(cloud) else cloud.points
    return replace(cloud, points=local, frame=Frame.SENSOR_BLENDER)


def to_ros_frame(cloud: ScanCloud) -> ScanCloud:
    """Half turn about z from the simulated sensor frame into the ROS convention a real capture arrives in"""
    if cloud.frame is not Frame.SENSOR_BLENDER or cloud.flipped_from_ros:
        raise FrameMismatch(f"Expected a simulated sensor-frame cloud, got {cloud.frame.value}")
    return replace(cloud, points=cloud.points * np.array([-1.0, -1.0, 1.0]), frame=Frame.SENSOR_ROS)


def targets_to_sensor_frame(targets: List[ParamTarget], sensor_pose: Pose) -> List[ParamTarget]:
    inverse = sensor_pose.inverse()
    return [t.with_pose(inverse.compose(t.pose)) for t in targets]


def fps_reduce(cloud: ScanCloud, budget: int = DEFAULT_BUDGET, seed: int = 0,
               start_index: Optional[int] = None) -> ScanCloud:
    """Exact farthest point sampling down to `budget` points; identity when already within budget"""
    if budget < 1:
        raise ValueError(f"FPS budget must be at least 1, got {budget}")
    if len(cloud) <= budget:
        return cloud
    if start_index is None:
        start_index = int(np.random.default_rng(seed).integers(len(cloud)))
    indices = farthest_point_indices(cloud.points, budget, start_index)
    return cloud.subset(indices)


def hit_counts(cloud: ScanCloud) -> Dict[int, int]:
    if cloud.source_ids is None:
        raise MissingSourceIds("Hit counts need a simulated cloud with source ids")
    ids, counts = np.unique(cloud.source_ids, return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts)}


def cull_occluded_targets(targets: List[ParamTarget], cloud: ScanCloud,
                          thresholds: Optional[Dict[ObjectClass, int]] = None) -> List[ParamTarget]:
    """Keep targets whose instance received at least the class threshold of hits in `cloud`"""
    thresholds = DEFAULT_CULL_THRESHOLDS if thresholds is None else thresholds
    counts = hit_counts(cloud)
    kept = []
    for target in targets:
        hits = counts.get(target.instance_id, 0)
        if hits >= thresholds.get(target.object_class, 0):
            kept.append(target)
        else:
            logger.debug(f"Culled {target.object_class.label} {target.instance_id}: {hits} hits")
    return kept


def preprocess_ingested(cloud: ScanCloud, budget: int = DEFAULT_BUDGET, max_range: float = DEFAULT_MAX_RANGE_M,
                        seed: int = 0) -> ScanCloud:
    """
    Range filter, FPS to budget, then the 180 degree z flip from ROS into the simulation convention.

    Accepts ROS-frame clouds and its own output (Blender frame, `flipped_from_ros`), on which it only
    re-applies the filter and FPS. Any other frame raises FrameMismatch.
    """
    if not (cloud.frame is Frame.SENSOR_ROS or (cloud.frame is Frame.SENSOR_BLENDER and cloud.flipped_from_ros)):
        raise FrameMismatch(f"Ingested clouds must come in the ROS sensor frame, got {cloud.frame.value}")
    keep = np.linalg.norm(cloud.points, axis=1) <= max_range
    if not keep.any():
        raise EmptyAfterFilter(f"No points within {max_range} m")
    reduced = fps_reduce(cloud.subset(np.flatnonzero(keep)), budget, seed)
    if reduced.frame is Frame.SENSOR_ROS:
        flipped = reduced.points * np.array([-1.0, -1.0, 1.0])
        reduced = replace(reduced, points=flipped, frame=Frame.SENSOR_BLENDER, flipped_from_ros=True)
    return reduced


def flip_target_z(target: ParamTarget) -> ParamTarget:
    """Half turn about the frame z axis applied to a target pose"""
    x, y, z = target.pose.position
    pose = Pose((-x, -y, z), quat_multiply(Z_FLIP, target.pose.orientation), target.pose.normalized)
    return target.with_pose(pose)


def restore_predictions_frame(targets: List[ParamTarget], cloud: ScanCloud) -> List[ParamTarget]:
    """Rotate poses predicted on a preprocessed capture back into its ROS frame"""
    if not cloud.flipped_from_ros:
        return list(targets)
    return [flip_target_z(t) for t in targets]


def add_point_noise(cloud: ScanCloud, probability: float = NOISE_PROBABILITY, seed: int = 0,
                    sigma: Optional[float] = None, sigma_max: float = NOISE_SIGMA_MAX) -> ScanCloud:
    """With `probability`, jitter every point by zero-mean Gaussian noise, sigma ~ U(0, sigma_max]"""
    if not cloud.normalized:
        raise NotNormalized("Point noise is defined in normalized units")
    rng = np.random.default_rng(seed)
    if rng.random() >= probability:
        return cloud
    if sigma is None:
        sigma = sigma_max * (1.0 - rng.random())
    offsets = rng.normal(0.0, sigma, size=cloud.points.shape)
    return replace(cloud, points=cloud.points + offsets)


def rotate_cloud_and_targets(cloud: ScanCloud, targets: List[ParamTarget], rotation: UnitQuaternion
                             ) -> Tuple[ScanCloud, List[ParamTarget]]:
    """Rotate points and target poses jointly about the frame origin"""
    rotated_cloud = replace(cloud, points=rotation.rotate(cloud.points)) if len(cloud) else cloud
    rotated_targets = []
    for target in targets:
        position = rotation.rotate(target.pose.translation)
        pose = Pose(tuple(position), quat_multiply(rotation, target.pose.orientation), target.pose.normalized)
        rotated_targets.append(target.with_pose(pose))
    return rotated_cloud, rotated_targets


def sample_tilt(max_deg: float = TILT_MAX_DEG, seed: int = 0) -> UnitQuaternion:
    """Rotation about x then y, each angle uniform in [-max_deg, max_deg]"""
    rng = np.random.default_rng(seed)
    ax, ay = np.radians(rng.uniform(-max_deg, max_deg, size=2))
    qx = UnitQuaternion.from_axis_angle((1.0, 0.0, 0.0), ax)
    qy = UnitQuaternion.from_axis_angle((0.0, 1.0, 0.0), ay)
    return quat_multiply(qy, qx)


def random_tilt(cloud: ScanCloud, targets: List[ParamTarget], max_deg: float = TILT_MAX_DEG, seed: int = 0
                ) -> Tuple[ScanCloud, List[ParamTarget], UnitQuaternion]:
    tilt = sample_tilt(max_deg, seed)
    tilted_cloud, tilted_targets = rotate_cloud_and_targets(cloud, targets, tilt)
    return tilted_cloud, tilted_targets, tilt


# --- ray tables ----------------------------------------------------------------

def generate_livox_pattern(count: int, fov_deg: float = LIVOX_MID70_FOV_DEG, rate_hz: float = 100_000.0,
                           seed: int = 0) -> RayTable:
    """
    Rosette pattern approximating the non-repetitive Livox scan inside a circular field of view.

    Two incommensurate frequencies keep the trajectory from closing, so
    coverage of the disc keeps improving with accumulation time.
    """
    rng = np.random.default_rng(seed)
    timestamps = np.arange(count) / rate_hz
    half_fov = math.radians(fov_deg) / 2.0
    petal_hz = 1171.0 + rng.uniform(-1.0, 1.0)
    spin_hz = petal_hz * (math.sqrt(5.0) - 1.0) / 2.0 / 7.0
    radius = half_fov * np.abs(np.sin(2.0 * math.pi * petal_hz * timestamps))
    angle = 2.0 * math.pi * spin_hz * timestamps + rng.uniform(0.0, 2.0 * math.pi)
    azimuth = radius * np.cos(angle)
    elevation = radius * np.sin(angle)
    return RayTable(timestamps, azimuth, elevation)


def accumulate_rays(table: RayTable, count: int) -> RayTable:
    """First `count` rays in time order, emulating a shorter aggregation window"""
    count = min(int(count), len(table))
    return RayTable(table.timestamps[:count], table.azimuth[:count], table.elevation[:count])


def load_ray_table(path: str) -> RayTable:
    """CSV with columns timestamp,azimuth_deg,elevation_deg; any unreadable table is a ConfigError"""
    try:
        frame = pd.read_csv(path)
        missing = {'timestamp', 'azimuth_deg', 'elevation_deg'} - set(frame.columns)
        if missing:
            raise ValueError(f"missing columns {sorted(missing)}")
        return RayTable(frame['timestamp'].to_numpy(float), np.radians(frame['azimuth_deg'].to_numpy(float)),
                        np.radians(frame['elevation_deg'].to_numpy(float)))
    except OSError as e:
        raise ConfigError(f"Ray table {path} cannot be read: {str(e)}")
    except ValueError as e:
        raise ConfigError(f"Ray table {path} is malformed: {str(e)}")


def save_ray_table(table: RayTable, path: str):
    pd.DataFrame({
        'timestamp': table.timestamps,
        'azimuth_deg': np.degrees(table.azimuth),
        'elevation_deg': np.degrees(table.elevation),
    }).to_csv(path, index=False, float_format='%.9f')


# --- cloud files ---------------------------------------------------------------

def encode_cloud(cloud: ScanCloud) -> bytes:
    records = np.zeros(len(cloud), dtype=CLOUD_RECORD)
    if len(cloud):
        records['x'], records['y'], records['z'] = cloud.points.T
    records['source_id'] = NO_SOURCE_ID if cloud.source_ids is None else cloud.source_ids
    return CLOUD_HEADER.pack(CLOUD_MAGIC, CLOUD_VERSION, len(cloud)) + records.tobytes()


def decode_cloud(data: bytes, frame: Frame = Frame.SENSOR_BLENDER) -> ScanCloud:
    if len(data) < CLOUD_HEADER.size:
        raise ValueError("Cloud file is shorter than its header")
    magic, version, count = CLOUD_HEADER.unpack_from(data)
    if magic != CLOUD_MAGIC or version != CLOUD_VERSION:
        raise ValueError(f"Not a cloud file (magic {magic!r}, version {version})")
    records = np.frombuffer(data, dtype=CLOUD_RECORD, count=count, offset=CLOUD_HEADER.size)
    points = np.column_stack([records['x'], records['y'], records['z']]).astype(float)
    ids = records['source_id'].astype(np.int64)
    source_ids = None if count and np.all(ids == NO_SOURCE_ID) else ids
    return ScanCloud(points=points, frame=frame, source_ids=source_ids)


def quantize_cloud(cloud: ScanCloud) -> ScanCloud:
    """Round points through float32 so in-memory clouds equal what the cloud file stores"""
    return replace(cloud, points=cloud.points.astype(np.float32).astype(float))


def write_xyz(cloud: ScanCloud, path: str):
    """ASCII debug dump, one `x y z [source_id]` line per point"""
    if cloud.source_ids is None:
        np.savetxt(path, cloud.points, fmt='%.6f')
    else:
        np.savetxt(path, np.column_stack([cloud.points, cloud.source_ids]), fmt=['%.6f', '%.6f', '%.6f', '%d'])


def read_xyz(path: str, frame: Frame = Frame.SENSOR_ROS) -> ScanCloud:
    """Ingest an ASCII capture (first three columns are x y z in meters)"""
    if os.path.getsize(path) == 0:
        return ScanCloud(points=np.zeros((0, 3)), frame=frame)
    table = np.loadtxt(path, ndmin=2)
    return ScanCloud(points=table[:, :3], frame=frame)
