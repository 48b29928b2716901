# mesh_service.py
"""
Class meshes, parametric targets and the mapping Phi from a target
configuration to a posed mesh and its 64-point surface representation.

Body frame convention for every class mesh: +x is the long axis, +z is up and
the origin sits on the class reference point (gripper: center of mass of the
closed gripper, loading platform: front-right corner of the deck, pallet:
bottom center). Posing is then a single rigid transform.
"""
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import (ClassMismatch, DegenerateExtent, EmptyMesh, MeshParseError,
                    NotArticulable, OpeningOutOfRange)
from geometry_core import (Pose, SymmetrySet, UnitQuaternion, farthest_point_indices,
                           rodrigues_rotate)

logger = logging.getLogger(__name__)

SAMPLE_POINT_COUNT = 64
DEFAULT_ALPHA_MAX_DEG = 90.0
DEFAULT_SAMPLE_SEED = 7
SURFACE_OVERSAMPLE = 4096
MIN_EXTENT_M = 1e-6
OPENING_TOLERANCE_DEG = 1e-9

# Sample point regions: which rigid part of the mesh a point rides on
REGION_BODY = 0
REGION_JAW_A = 1
REGION_JAW_B = 2


class ObjectClass(IntEnum):
    NO_OBJECT = 0
    GRIPPER = 1
    LOADING_PLATFORM = 2
    PALLET = 3

    @property
    def symmetry(self) -> SymmetrySet:
        if self is ObjectClass.LOADING_PLATFORM:
            return SymmetrySet.SIGN_ONLY
        if self in (ObjectClass.GRIPPER, ObjectClass.PALLET):
            return SymmetrySet.SIGN_AND_Z_FLIP
        raise ValueError("no-object has no orientation")

    @property
    def label(self) -> str:
        return self.name.lower()


OBJECT_CLASSES = (ObjectClass.GRIPPER, ObjectClass.LOADING_PLATFORM, ObjectClass.PALLET)


@dataclass(frozen=True)
class ParamTarget:
    """Ground-truth (or predicted) configuration of one parametric object"""

    object_class: ObjectClass
    pose: Pose
    opening_deg: Optional[float] = None
    instance_id: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'object_class', ObjectClass(self.object_class))
        if self.object_class is ObjectClass.NO_OBJECT:
            raise ValueError("A target cannot have the no-object class")
        has_opening = self.opening_deg is not None
        if has_opening != (self.object_class is ObjectClass.GRIPPER):
            raise ValueError(f"opening_deg must be present exactly for grippers, got {self.opening_deg} "
                             f"for {self.object_class.label}")

    @property
    def normalized(self) -> bool:
        return self.pose.normalized

    def with_pose(self, pose: Pose, opening_deg: Optional[float] = None) -> 'ParamTarget':
        opening = self.opening_deg if opening_deg is None else opening_deg
        return replace(self, pose=pose, opening_deg=opening)

    def to_dict(self) -> Dict:
        return {
            'class': int(self.object_class),
            'position': list(self.pose.position),
            'orientation': self.pose.orientation.as_array().tolist(),
            'opening': self.opening_deg,
            'normalized': self.pose.normalized,
            'instance_id': self.instance_id,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'ParamTarget':
        pose = Pose(tuple(data['position']), UnitQuaternion.from_array(data['orientation']),
                    bool(data.get('normalized', False)))
        return cls(ObjectClass(data['class']), pose, data.get('opening'), data.get('instance_id'))


@dataclass(frozen=True, eq=False)
class Articulation:
    """Twin-jaw hinge: jaw A turns by +opening/2, jaw B by -opening/2 about the hinge"""

    jaw_a: np.ndarray
    jaw_b: np.ndarray
    hinge_axis: np.ndarray
    hinge_point: np.ndarray


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    name: str
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(vertices) == 0 or len(triangles) == 0:
            raise EmptyMesh(f"Mesh '{self.name}' has no geometry")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshParseError(f"Mesh '{self.name}' references missing vertices")
        object.__setattr__(self, 'vertices', vertices)
        object.__setattr__(self, 'triangles', triangles)

    @property
    def triangle_corners(self) -> np.ndarray:
        """(T, 3, 3) triangle vertex coordinates"""
        return self.vertices[self.triangles]

    def posed_vertices(self, pose: Pose) -> np.ndarray:
        return pose.apply(self.vertices)


@dataclass(frozen=True, eq=False)
class ClassMesh(TriangleMesh):
    object_class: ObjectClass = ObjectClass.NO_OBJECT
    sample_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    sample_regions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    articulation: Optional[Articulation] = None
    alpha_max_deg: float = DEFAULT_ALPHA_MAX_DEG
    opening_deg: float = 0.0
    sample_seed: int = DEFAULT_SAMPLE_SEED

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, 'object_class', ObjectClass(self.object_class))
        if self.object_class is ObjectClass.NO_OBJECT:
            raise ValueError("Class meshes need an object class")
        if (self.articulation is not None) != (self.object_class is ObjectClass.GRIPPER):
            raise ValueError("Articulation is present exactly for grippers")
        sample_points = np.asarray(self.sample_points, dtype=float).reshape(-1, 3)
        if len(sample_points) != SAMPLE_POINT_COUNT:
            raise ValueError(f"Class mesh needs {SAMPLE_POINT_COUNT} sample points, got {len(sample_points)}")
        object.__setattr__(self, 'sample_points', sample_points)
        object.__setattr__(self, 'sample_regions', np.asarray(self.sample_regions, dtype=np.int64))


# --- procedural geometry -------------------------------------------------------

_BOX_TRIANGLES = np.array([
    [0, 2, 1], [0, 3, 2],  # bottom
    [4, 5, 6], [4, 6, 7],  # top
    [0, 1, 5], [0, 5, 4],  # -y
    [2, 3, 7], [2, 7, 6],  # +y
    [1, 2, 6], [1, 6, 5],  # +x
    [3, 0, 4], [3, 4, 7],  # -x
], dtype=np.int64)


def box_geometry(lo: Sequence[float], hi: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Closed axis-aligned box with outward-facing triangles"""
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    vertices = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ], dtype=float)
    return vertices, _BOX_TRIANGLES.copy()


def merge_geometry(parts: List[Tuple[np.ndarray, np.ndarray]]) -> Tuple[np.ndarray, np.ndarray, List[np.ndarray]]:
    """Concatenate parts; also returns the vertex index range of each part"""
    vertices, triangles, ranges = [], [], []
    offset = 0
    for part_vertices, part_triangles in parts:
        vertices.append(part_vertices)
        triangles.append(part_triangles + offset)
        ranges.append(np.arange(offset, offset + len(part_vertices)))
        offset += len(part_vertices)
    return np.vstack(vertices), np.vstack(triangles), ranges


def mesh_center_of_mass(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Volume centroid of a closed, outward-oriented triangle mesh (signed tetrahedra)"""
    corners = np.asarray(vertices, dtype=float)[np.asarray(triangles)]
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    volumes = np.einsum('ij,ij->i', a, np.cross(b, c)) / 6.0
    total = volumes.sum()
    if abs(total) < 1e-15:
        raise EmptyMesh("Mesh encloses no volume")
    return ((a + b + c) / 4.0 * volumes[:, None]).sum(axis=0) / total


def triangle_areas(corners: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1)


def generate_sample_points(vertices: np.ndarray, triangles: np.ndarray, seed: int,
                           count: int = SAMPLE_POINT_COUNT,
                           oversample: int = SURFACE_OVERSAMPLE) -> Tuple[np.ndarray, np.ndarray]:
    """
    Area-weighted surface sampling thinned to `count` points by farthest point sampling.

    Returns:
        (points, triangle index of each point), deterministic under `seed`
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if len(vertices) == 0 or len(triangles) == 0:
        raise EmptyMesh("Cannot sample an empty mesh")
    corners = vertices[triangles]
    areas = triangle_areas(corners)
    if areas.sum() <= 0.0:
        raise EmptyMesh("Mesh has zero surface area")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(triangles), size=oversample, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(oversample))
    r2 = rng.random(oversample)
    tri = corners[chosen]
    candidates = ((1.0 - r1)[:, None] * tri[:, 0]
                  + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
                  + (r1 * r2)[:, None] * tri[:, 2])
    start = int(rng.integers(oversample))
    picked = farthest_point_indices(candidates, count, start)
    return candidates[picked], chosen[picked]


def _regions_for_triangles(triangle_ids: np.ndarray, triangles: np.ndarray,
                           articulation: Optional[Articulation]) -> np.ndarray:
    regions = np.full(len(triangle_ids), REGION_BODY, dtype=np.int64)
    if articulation is None:
        return regions
    jaw_a, jaw_b = set(articulation.jaw_a.tolist()), set(articulation.jaw_b.tolist())
    for i, tri_id in enumerate(triangle_ids):
        corner_ids = set(triangles[tri_id].tolist())
        if corner_ids <= jaw_a:
            regions[i] = REGION_JAW_A
        elif corner_ids <= jaw_b:
            regions[i] = REGION_JAW_B
    return regions


def build_class_mesh(object_class: ObjectClass, name: str, vertices: np.ndarray, triangles: np.ndarray,
                     articulation: Optional[Articulation] = None, alpha_max_deg: float = DEFAULT_ALPHA_MAX_DEG,
                     sample_seed: int = DEFAULT_SAMPLE_SEED,
                     sample_points: Optional[np.ndarray] = None,
                     sample_regions: Optional[np.ndarray] = None) -> ClassMesh:
    if sample_points is None:
        sample_points, triangle_ids = generate_sample_points(vertices, triangles, sample_seed)
        sample_regions = _regions_for_triangles(triangle_ids, np.asarray(triangles), articulation)
    elif sample_regions is None:
        sample_regions = np.full(len(sample_points), REGION_BODY, dtype=np.int64)
    return ClassMesh(name=name, vertices=vertices, triangles=triangles, object_class=object_class,
                     sample_points=sample_points, sample_regions=sample_regions, articulation=articulation,
                     alpha_max_deg=alpha_max_deg, sample_seed=sample_seed)


def build_pallet(length: float = 1.2, width: float = 0.8, height: float = 0.144,
                 sample_seed: int = DEFAULT_SAMPLE_SEED) -> ClassMesh:
    """Deck board on three skids along x; origin at the bottom center"""
    deck = 0.022
    skid_w = 0.1
    hx, hy = length / 2.0, width / 2.0
    parts = [box_geometry((-hx, -hy, height - deck), (hx, hy, height))]
    for yc in (-hy + skid_w / 2.0, 0.0, hy - skid_w / 2.0):
        parts.append(box_geometry((-hx, yc - skid_w / 2.0, 0.0), (hx, yc + skid_w / 2.0, height - deck)))
    vertices, triangles, _ = merge_geometry(parts)
    return build_class_mesh(ObjectClass.PALLET, 'pallet', vertices, triangles, sample_seed=sample_seed)


def build_loading_platform(length: float = 6.0, width: float = 2.4, thickness: float = 0.2,
                           headboard_height: float = 1.0,
                           sample_seed: int = DEFAULT_SAMPLE_SEED) -> ClassMesh:
    """Flat deck with a headboard at the cabin end; origin at the front-right top corner"""
    parts = [
        box_geometry((-length, 0.0, -thickness), (0.0, width, 0.0)),
        box_geometry((-0.1, 0.0, 0.0), (0.0, width, headboard_height)),
    ]
    vertices, triangles, _ = merge_geometry(parts)
    return build_class_mesh(ObjectClass.LOADING_PLATFORM, 'loading_platform', vertices, triangles,
                            sample_seed=sample_seed)


def build_gripper(alpha_max_deg: float = DEFAULT_ALPHA_MAX_DEG,
                  sample_seed: int = DEFAULT_SAMPLE_SEED) -> ClassMesh:
    """
    Clamshell grab: a hinge block and two jaws hanging below it.

    The hinge axis is +x. Jaw A sits at +y and opens towards +y for positive
    openings, jaw B mirrors it. The mesh is shifted so its closed-state center
    of mass is the origin.
    """
    parts = [
        box_geometry((-0.4, -0.15, 0.30), (0.4, 0.15, 0.55)),
        box_geometry((-0.35, 0.01, -0.55), (0.35, 0.09, 0.28)),
        box_geometry((-0.35, -0.09, -0.55), (0.35, -0.01, 0.28)),
    ]
    vertices, triangles, ranges = merge_geometry(parts)
    hinge_point = np.array([0.0, 0.0, 0.29])
    com = mesh_center_of_mass(vertices, triangles)
    vertices = vertices - com
    articulation = Articulation(jaw_a=ranges[1], jaw_b=ranges[2], hinge_axis=np.array([1.0, 0.0, 0.0]),
                                hinge_point=hinge_point - com)
    return build_class_mesh(ObjectClass.GRIPPER, 'gripper', vertices, triangles, articulation=articulation,
                            alpha_max_deg=alpha_max_deg, sample_seed=sample_seed)


def builtin_class_meshes(sample_seed: int = DEFAULT_SAMPLE_SEED,
                         alpha_max_deg: float = DEFAULT_ALPHA_MAX_DEG) -> Dict[ObjectClass, ClassMesh]:
    return {
        ObjectClass.GRIPPER: build_gripper(alpha_max_deg, sample_seed),
        ObjectClass.LOADING_PLATFORM: build_loading_platform(sample_seed=sample_seed),
        ObjectClass.PALLET: build_pallet(sample_seed=sample_seed),
    }


def build_prop(kind: str, **dims) -> TriangleMesh:
    """Clutter meshes; every prop has its origin on the ground below its footprint center"""
    if kind == 'box':
        size = dims.get('size', (0.8, 0.6, 0.5))
        parts = [box_geometry((-size[0] / 2, -size[1] / 2, 0.0), (size[0] / 2, size[1] / 2, size[2]))]
    elif kind == 'wall':
        length, height = dims.get('length', 6.0), dims.get('height', 2.5)
        parts = [box_geometry((-length / 2, -0.1, 0.0), (length / 2, 0.1, height))]
    elif kind == 'tree':
        height, crown = dims.get('height', 5.0), dims.get('crown', 2.0)
        trunk = 0.15
        parts = [
            box_geometry((-trunk, -trunk, 0.0), (trunk, trunk, height * 0.5)),
            box_geometry((-crown / 2, -crown / 2, height * 0.45), (crown / 2, crown / 2, height)),
        ]
    elif kind == 'bush':
        size = dims.get('size', 1.0)
        parts = [box_geometry((-size / 2, -size / 2, 0.0), (size / 2, size / 2, size * 0.7))]
    elif kind == 'person':
        parts = [
            box_geometry((-0.15, -0.25, 0.0), (0.15, 0.25, 1.45)),
            box_geometry((-0.1, -0.1, 1.45), (0.1, 0.1, 1.75)),
        ]
    elif kind == 'cylinder':
        radius, height, segments = dims.get('radius', 0.3), dims.get('height', 0.8), dims.get('segments', 12)
        return TriangleMesh(kind, *_cylinder_geometry(radius, height, segments))
    elif kind == 'truck':
        # chassis below the loading platform, cabin ahead of it (+x)
        parts = [
            box_geometry((-6.5, -1.2, 0.3), (0.5, 1.2, 1.2)),
            box_geometry((0.5, -1.2, 0.3), (2.6, 1.2, 3.0)),
            box_geometry((-0.6, -0.4, 1.2), (0.0, 0.4, 4.0)),
        ]
    elif kind == 'forklift':
        parts = [
            box_geometry((-1.2, -0.6, 0.2), (0.6, 0.6, 2.2)),
            box_geometry((0.6, -0.4, 0.0), (0.8, 0.4, dims.get('mast_height', 3.0))),
        ]
    else:
        raise ValueError(f"Unknown prop kind '{kind}'")
    vertices, triangles, _ = merge_geometry(parts)
    return TriangleMesh(kind, vertices, triangles)


def _cylinder_geometry(radius: float, height: float, segments: int) -> Tuple[np.ndarray, np.ndarray]:
    angles = np.linspace(0.0, 2.0 * math.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    bottom = np.column_stack([ring, np.zeros(segments)])
    top = np.column_stack([ring, np.full(segments, height)])
    vertices = np.vstack([bottom, top, [[0.0, 0.0, 0.0], [0.0, 0.0, height]]])
    bc, tc = 2 * segments, 2 * segments + 1
    triangles = []
    for i in range(segments):
        j = (i + 1) % segments
        triangles += [[i, j, segments + j], [i, segments + j, segments + i], [bc, j, i],
                      [tc, segments + i, segments + j]]
    return vertices, np.array(triangles, dtype=np.int64)


# --- articulation and Phi ------------------------------------------------------

def articulate(mesh: ClassMesh, opening_deg: float) -> ClassMesh:
    """Open the gripper jaws by `opening_deg` relative to the mesh's current state"""
    if mesh.object_class is not ObjectClass.GRIPPER or mesh.articulation is None:
        raise NotArticulable(f"{mesh.object_class.label} meshes have no articulation")
    if not math.isfinite(opening_deg) or abs(opening_deg) > mesh.alpha_max_deg + 1e-9:
        raise OpeningOutOfRange(f"Opening {opening_deg} deg outside [-{mesh.alpha_max_deg}, {mesh.alpha_max_deg}]")
    if opening_deg == 0.0:
        return mesh
    art = mesh.articulation
    half = math.radians(opening_deg) / 2.0
    vertices = mesh.vertices.copy()
    vertices[art.jaw_a] = rodrigues_rotate(vertices[art.jaw_a], art.hinge_axis, half, art.hinge_point)
    vertices[art.jaw_b] = rodrigues_rotate(vertices[art.jaw_b], art.hinge_axis, -half, art.hinge_point)
    samples = mesh.sample_points.copy()
    for region, angle in ((REGION_JAW_A, half), (REGION_JAW_B, -half)):
        mask = mesh.sample_regions == region
        if mask.any():
            samples[mask] = rodrigues_rotate(samples[mask], art.hinge_axis, angle, art.hinge_point)
    return replace(mesh, vertices=vertices, sample_points=samples, opening_deg=mesh.opening_deg + opening_deg)


@dataclass(frozen=True)
class ScaleRecord:
    """Everything needed to map between metric and normalized frames exactly"""

    center: Tuple[float, float, float]
    scale: float
    alpha_max_deg: float = DEFAULT_ALPHA_MAX_DEG

    @classmethod
    def identity(cls, alpha_max_deg: float = DEFAULT_ALPHA_MAX_DEG) -> 'ScaleRecord':
        return cls((0.0, 0.0, 0.0), 1.0, alpha_max_deg)

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def normalize_points(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center_array) / self.scale

    def denormalize_points(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) * self.scale + self.center_array

    def normalize_opening(self, opening_deg: float) -> float:
        return 2.0 * opening_deg / self.alpha_max_deg - 1.0

    def denormalize_opening(self, opening: float) -> float:
        return (opening + 1.0) * self.alpha_max_deg / 2.0

    def normalize_target(self, target: ParamTarget) -> ParamTarget:
        if target.normalized:
            return target
        position = self.normalize_points(target.pose.translation)
        opening = None if target.opening_deg is None else self.normalize_opening(target.opening_deg)
        return replace(target, pose=target.pose.with_position(position, normalized=True), opening_deg=opening)

    def denormalize_target(self, target: ParamTarget) -> ParamTarget:
        if not target.normalized:
            return target
        position = self.denormalize_points(target.pose.translation)
        opening = None if target.opening_deg is None else self.denormalize_opening(target.opening_deg)
        return replace(target, pose=target.pose.with_position(position, normalized=False), opening_deg=opening)

    def to_dict(self) -> Dict:
        return {'center': list(self.center), 'scale': self.scale, 'alpha_max_deg': self.alpha_max_deg}

    @classmethod
    def from_dict(cls, data: Dict) -> 'ScaleRecord':
        return cls(tuple(data['center']), float(data['scale']), float(data['alpha_max_deg']))


def scale_record_for_extent(lo: Sequence[float], hi: Sequence[float],
                            alpha_max_deg: float = DEFAULT_ALPHA_MAX_DEG) -> ScaleRecord:
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    longest = float(np.max(hi - lo))
    if not math.isfinite(longest) or longest < MIN_EXTENT_M:
        raise DegenerateExtent(f"Longest axis extent {longest} m is below {MIN_EXTENT_M} m")
    return ScaleRecord(tuple(((lo + hi) / 2.0).tolist()), longest / 2.0, alpha_max_deg)


def normalize_frame(extent: Tuple[Sequence[float], Sequence[float]], targets: List[ParamTarget],
                    points: Optional[np.ndarray] = None,
                    alpha_max_deg: float = DEFAULT_ALPHA_MAX_DEG
                    ) -> Tuple[List[ParamTarget], Optional[np.ndarray], ScaleRecord]:
    """Center on the extent midpoint and divide by half the longest axis so the cloud fits in [-1, 1]"""
    record = scale_record_for_extent(extent[0], extent[1], alpha_max_deg)
    normalized_targets = [record.normalize_target(t) for t in targets]
    normalized_points = None if points is None else record.normalize_points(points)
    return normalized_targets, normalized_points, record


def _pose_points(body_points: np.ndarray, target: ParamTarget, record: Optional[ScaleRecord]) -> np.ndarray:
    rotated = target.pose.orientation.rotate(body_points)
    if target.normalized:
        if record is None:
            raise ValueError("Normalized targets need the scale record to be posed")
        return rotated / record.scale + target.pose.translation
    return rotated + target.pose.translation


def _articulated_for(mesh: ClassMesh, target: ParamTarget, record: Optional[ScaleRecord],
                     strict: bool = False) -> ClassMesh:
    if mesh.object_class is not target.object_class:
        raise ClassMismatch(f"Cannot pose a {mesh.object_class.label} mesh with a {target.object_class.label} target")
    if mesh.object_class is not ObjectClass.GRIPPER:
        return mesh
    opening = target.opening_deg
    if target.normalized:
        opening = (record or ScaleRecord.identity(mesh.alpha_max_deg)).denormalize_opening(opening)
    if strict and not -OPENING_TOLERANCE_DEG <= opening <= mesh.alpha_max_deg + OPENING_TOLERANCE_DEG:
        raise OpeningOutOfRange(f"Target {target.instance_id} opening {opening} deg outside [0, {mesh.alpha_max_deg}]")
    opening = min(max(opening, 0.0), mesh.alpha_max_deg)
    return articulate(mesh, opening - mesh.opening_deg)


def phi(mesh: ClassMesh, target: ParamTarget, record: Optional[ScaleRecord] = None,
        strict: bool = False) -> np.ndarray:
    """
    The 64 sample points of `mesh` under the target configuration.

    Gripper openings are clamped to [0, alpha_max] so that regressed hypotheses always pose.
    Ground truth goes through with `strict=True`, which raises OpeningOutOfRange instead of clamping.
    """
    posed = _articulated_for(mesh, target, record, strict)
    return _pose_points(posed.sample_points, target, record)


def phi_mesh(mesh: ClassMesh, target: ParamTarget, record: Optional[ScaleRecord] = None,
             strict: bool = False) -> np.ndarray:
    """All mesh vertices under the target configuration; openings clamp like `phi`"""
    posed = _articulated_for(mesh, target, record, strict)
    return _pose_points(posed.vertices, target, record)


# --- mesh files ----------------------------------------------------------------

def parse_obj(text: str, name: str = 'mesh') -> Tuple[np.ndarray, np.ndarray]:
    """ASCII OBJ subset: `v x y z` and triangulated `f a b c` records (1-based, `a/b/c` allowed)"""
    vertices, faces = [], []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            if fields[0] == 'v':
                if len(fields) < 4:
                    raise ValueError("vertex needs 3 coordinates")
                vertices.append([float(v) for v in fields[1:4]])
            elif fields[0] == 'f':
                if len(fields) != 4:
                    raise ValueError("only triangles are supported")
                faces.append([int(f.split('/')[0]) - 1 for f in fields[1:4]])
        except ValueError as e:
            raise MeshParseError(f"{name}:{line_no}: {str(e)}")
    if not vertices or not faces:
        raise EmptyMesh(f"{name} has no vertices or faces")
    return np.array(vertices, dtype=float), np.array(faces, dtype=np.int64)


def format_obj(mesh: TriangleMesh) -> str:
    lines = [f"# {mesh.name}"]
    lines += [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    return "\n".join(lines) + "\n"


def _sidecar_path(path: str) -> str:
    return os.path.splitext(path)[0] + '.meta.json'


def _samples_path(path: str) -> str:
    return os.path.splitext(path)[0] + '.samples.txt'


def _read_samples_cache(path: str, seed: int) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    cache = _samples_path(path)
    if not os.path.exists(cache):
        return None
    with open(cache) as f:
        header = f.readline().lstrip("#").split()
    written = [token.split("=", 1)[1] for token in header if token.startswith("seed=")]
    if written != [str(seed)]:
        logger.info(f"♻️ Sample cache {cache} was written for another seed, regenerating")
        return None
    table = np.loadtxt(cache, ndmin=2)
    if table.shape != (SAMPLE_POINT_COUNT, 4):
        logger.warning(f"⚠️ Sample cache {cache} has shape {table.shape}, regenerating")
        return None
    return table[:, :3], table[:, 3].astype(np.int64)


def _write_samples_cache(path: str, mesh: ClassMesh):
    table = np.column_stack([mesh.sample_points, mesh.sample_regions])
    np.savetxt(_samples_path(path), table, fmt=['%.9f', '%.9f', '%.9f', '%d'],
               header=f"seed={mesh.sample_seed} columns=x,y,z,region")


def load_mesh(path: str) -> ClassMesh:
    """Load an OBJ class mesh plus its `.meta.json` sidecar; sample points come from the cache or are generated"""
    try:
        with open(path) as f:
            text = f.read()
        with open(_sidecar_path(path)) as f:
            meta = json.load(f)
    except FileNotFoundError as e:
        raise MeshParseError(f"Missing mesh file: {e.filename}")
    except json.JSONDecodeError as e:
        raise MeshParseError(f"Bad sidecar for {path}: {str(e)}")

    vertices, triangles = parse_obj(text, os.path.basename(path))
    try:
        object_class = ObjectClass(int(meta['class']))
        offset = np.asarray(meta.get('reference_offset', [0.0, 0.0, 0.0]), dtype=float)
        alpha_max = float(meta.get('alpha_max_deg', DEFAULT_ALPHA_MAX_DEG))
        seed = int(meta.get('sample_seed', DEFAULT_SAMPLE_SEED))
        vertices = vertices - offset
        articulation = None
        if meta.get('articulation'):
            art = meta['articulation']
            articulation = Articulation(
                jaw_a=np.arange(*art['jaw_a']), jaw_b=np.arange(*art['jaw_b']),
                hinge_axis=np.asarray(art['hinge_axis'], dtype=float)
                / np.linalg.norm(art['hinge_axis']),
                hinge_point=np.asarray(art['hinge_point'], dtype=float) - offset)
    except (KeyError, ValueError, TypeError) as e:
        raise MeshParseError(f"Bad sidecar for {path}: {str(e)}")

    cached = _read_samples_cache(path, seed)
    if cached is not None:
        mesh = build_class_mesh(object_class, meta.get('name', os.path.basename(path)), vertices, triangles,
                                articulation, alpha_max, seed, sample_points=cached[0], sample_regions=cached[1])
    else:
        mesh = build_class_mesh(object_class, meta.get('name', os.path.basename(path)), vertices, triangles,
                                articulation, alpha_max, seed)
        _write_samples_cache(path, mesh)
    logger.info(f"✅ Loaded {object_class.label} mesh from {path}: {len(vertices)} vertices, "
                f"{len(triangles)} triangles")
    return mesh


def save_mesh(mesh: ClassMesh, path: str):
    """Write OBJ + sidecar + sample cache so the mesh can be edited and reloaded"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        f.write(format_obj(mesh))
    meta = {
        'name': mesh.name,
        'class': int(mesh.object_class),
        'reference_offset': [0.0, 0.0, 0.0],
        'alpha_max_deg': mesh.alpha_max_deg,
        'sample_seed': mesh.sample_seed,
        'articulation': None,
    }
    if mesh.articulation is not None:
        art = mesh.articulation
        meta['articulation'] = {
            'jaw_a': [int(art.jaw_a.min()), int(art.jaw_a.max()) + 1],
            'jaw_b': [int(art.jaw_b.min()), int(art.jaw_b.max()) + 1],
            'hinge_axis': art.hinge_axis.tolist(),
            'hinge_point': art.hinge_point.tolist(),
        }
    with open(_sidecar_path(path), 'w') as f:
        json.dump(meta, f, indent=2)
    _write_samples_cache(path, mesh)


class MeshService:
    """Service holding one class mesh per object class, from a mesh directory or the built-in stand-ins"""

    MESH_FILES = {
        ObjectClass.GRIPPER: 'gripper.obj',
        ObjectClass.LOADING_PLATFORM: 'loading_platform.obj',
        ObjectClass.PALLET: 'pallet.obj',
    }

    def __init__(self, mesh_dir: Optional[str] = None, sample_seed: int = DEFAULT_SAMPLE_SEED,
                 alpha_max_deg: float = DEFAULT_ALPHA_MAX_DEG):
        self.mesh_dir = mesh_dir
        self.meshes = builtin_class_meshes(sample_seed, alpha_max_deg)
        if mesh_dir:
            for object_class, filename in self.MESH_FILES.items():
                path = os.path.join(mesh_dir, filename)
                if os.path.exists(path):
                    self.meshes[object_class] = load_mesh(path)
                else:
                    logger.info(f"ℹ️ No {filename} in {mesh_dir}, using the built-in {object_class.label} mesh")

    def get(self, object_class: ObjectClass) -> ClassMesh:
        return self.meshes[ObjectClass(object_class)]

    @property
    def alpha_max_deg(self) -> float:
        return self.meshes[ObjectClass.GRIPPER].alpha_max_deg

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for object_class in OBJECT_CLASSES:
            mesh = self.meshes[object_class]
            digest.update(np.ascontiguousarray(mesh.vertices).tobytes())
            digest.update(np.ascontiguousarray(mesh.triangles).tobytes())
            digest.update(np.ascontiguousarray(mesh.sample_points).tobytes())
        return digest.hexdigest()

    def export(self, mesh_dir: str):
        for object_class, filename in self.MESH_FILES.items():
            save_mesh(self.meshes[object_class], os.path.join(mesh_dir, filename))
        logger.info(f"✅ Exported class meshes to {mesh_dir}")
