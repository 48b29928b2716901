# geometry_core.py
"""
Quaternion algebra, symmetry expansion sets, rigid poses and angular error
metrics.

Quaternions are stored scalar-first as (w, x, y, z). With that order the
literal multiplier (0, 0, 0, 1) is the 180 degree rotation about z. ROS
messages and Blender's mathutils use other conventions, convert at the edges.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import DegenerateYaw

logger = logging.getLogger(__name__)

UNIT_NORM_TOLERANCE = 1e-9
YAW_DEGENERACY_EPS = 1e-9


@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation as a unit quaternion (w, x, y, z); renormalized on construction"""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        norm = math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
        if norm == 0.0 or not math.isfinite(norm):
            raise ValueError(f"Cannot build a unit quaternion from ({self.w}, {self.x}, {self.y}, {self.z})")
        if norm != 1.0:
            object.__setattr__(self, 'w', self.w / norm)
            object.__setattr__(self, 'x', self.x / norm)
            object.__setattr__(self, 'y', self.y / norm)
            object.__setattr__(self, 'z', self.z / norm)

    @classmethod
    def identity(cls) -> 'UnitQuaternion':
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'UnitQuaternion':
        w, x, y, z = (float(v) for v in values)
        return cls(w, x, y, z)

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle_rad: float) -> 'UnitQuaternion':
        axis = np.asarray(axis, dtype=float)
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            raise ValueError("Rotation axis must be non-zero")
        axis = axis / norm
        half = 0.5 * angle_rad
        s = math.sin(half)
        return cls(math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)

    @classmethod
    def from_yaw(cls, yaw_rad: float) -> 'UnitQuaternion':
        return cls.from_axis_angle((0.0, 0.0, 1.0), yaw_rad)

    @classmethod
    def random(cls, rng: np.random.Generator) -> 'UnitQuaternion':
        """Uniformly distributed rotation (normalized 4D Gaussian)"""
        while True:
            v = rng.normal(size=4)
            if np.linalg.norm(v) > 1e-6:
                return cls.from_array(v)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=float)

    def __neg__(self) -> 'UnitQuaternion':
        return UnitQuaternion(-self.w, -self.x, -self.y, -self.z)

    def conjugate(self) -> 'UnitQuaternion':
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate a single 3-vector or an (N, 3) array"""
        vectors = np.asarray(vectors, dtype=float)
        return vectors @ self.to_matrix().T

    def same_rotation(self, other: 'UnitQuaternion', tol: float = 1e-9) -> bool:
        """Equality as rotations, q and -q are the same rotation"""
        return abs(abs(float(np.dot(self.as_array(), other.as_array()))) - 1.0) <= tol


IDENTITY = UnitQuaternion.identity()
Z_FLIP = UnitQuaternion(0.0, 0.0, 0.0, 1.0)


class SymmetrySet(Enum):
    """Orientation symmetries a class is indistinguishable under"""

    SIGN_ONLY = 'SignOnly'
    SIGN_AND_Z_FLIP = 'SignAndZFlip'


@dataclass(frozen=True)
class Pose:
    """Rigid placement: position (meters, or normalized units when flagged) and orientation"""

    position: Tuple[float, float, float]
    orientation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    normalized: bool = False

    def __post_init__(self):
        position = tuple(float(v) for v in self.position)
        if len(position) != 3:
            raise ValueError(f"Pose position needs 3 components, got {len(position)}")
        object.__setattr__(self, 'position', position)

    @classmethod
    def identity(cls, normalized: bool = False) -> 'Pose':
        return cls((0.0, 0.0, 0.0), IDENTITY, normalized)

    @property
    def translation(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)

    def to_matrix(self) -> np.ndarray:
        """4x4 homogeneous transform body -> parent"""
        matrix = np.eye(4)
        matrix[:3, :3] = self.orientation.to_matrix()
        matrix[:3, 3] = self.translation
        return matrix

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.orientation.to_matrix().T + self.translation

    def inverse(self) -> 'Pose':
        inv_q = self.orientation.conjugate()
        return Pose(tuple(-inv_q.rotate(self.translation)), inv_q, self.normalized)

    def compose(self, other: 'Pose') -> 'Pose':
        """self after other: points go through `other` first"""
        position = self.apply(other.translation)
        return Pose(tuple(position), quat_multiply(self.orientation, other.orientation), self.normalized)

    def with_position(self, position: Iterable[float], normalized: Optional[bool] = None) -> 'Pose':
        return Pose(tuple(position), self.orientation, self.normalized if normalized is None else normalized)

    def to_dict(self) -> Dict:
        return {'position': list(self.position), 'orientation': self.orientation.as_array().tolist(),
                'normalized': self.normalized}

    @classmethod
    def from_dict(cls, data: Dict) -> 'Pose':
        return cls(tuple(data['position']), UnitQuaternion.from_array(data['orientation']),
                   bool(data.get('normalized', False)))


def quat_multiply(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product a ⊗ b, renormalized"""
    w1, x1, y1, z1 = a.w, a.x, a.y, a.z
    w2, x2, y2, z2 = b.w, b.x, b.y, b.z
    return UnitQuaternion(
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def z_flip(q: UnitQuaternion) -> UnitQuaternion:
    """r^z(q) = q ⊗ (0, 0, 0, 1): q followed by a half turn about the body z axis"""
    return quat_multiply(q, Z_FLIP)


def symmetry_expand(q: UnitQuaternion, symmetry: SymmetrySet) -> List[UnitQuaternion]:
    """Orbit of q under the symmetry set, in the order q, -q, r^z(q), -r^z(q)"""
    expanded = [q, -q]
    if symmetry is SymmetrySet.SIGN_AND_Z_FLIP:
        flipped = z_flip(q)
        expanded.extend([flipped, -flipped])
    return expanded


def quat_symmetry_loss(q_hat: UnitQuaternion, q_gt: UnitQuaternion, symmetry: SymmetrySet) -> float:
    """Minimum elementwise l1 distance between the orbit of q_hat and q_gt"""
    target = q_gt.as_array()
    return min(float(np.abs(candidate.as_array() - target).sum())
               for candidate in symmetry_expand(q_hat, symmetry))


def _relative_angle_rad(a: UnitQuaternion, b: UnitQuaternion) -> float:
    # 2*atan2(|v|, |w|) of a^-1 ⊗ b, stable near zero unlike arccos of the dot product
    rel = quat_multiply(a.conjugate(), b)
    vector_norm = math.sqrt(rel.x * rel.x + rel.y * rel.y + rel.z * rel.z)
    return 2.0 * math.atan2(vector_norm, abs(rel.w))


def geodesic_error(q_hat: UnitQuaternion, q_gt: UnitQuaternion, symmetry: SymmetrySet) -> float:
    """Angle of the smallest rotation between the symmetry orbit of q_hat and q_gt, degrees in [0, 180]"""
    angle = min(_relative_angle_rad(candidate, q_gt) for candidate in symmetry_expand(q_hat, symmetry))
    return math.degrees(angle)


def heading_deg(q: UnitQuaternion) -> float:
    """Heading of the rotated +x axis projected onto the xy-plane"""
    axis = q.rotate(np.array([1.0, 0.0, 0.0]))
    if math.hypot(axis[0], axis[1]) < YAW_DEGENERACY_EPS:
        raise DegenerateYaw(f"Rotated +x axis {axis.tolist()} is parallel to z")
    return math.degrees(math.atan2(axis[1], axis[0]))


def wrap_angle_deg(delta: float) -> float:
    """Absolute angular difference wrapped to [0, 180]"""
    return abs((delta + 180.0) % 360.0 - 180.0)


def yaw_error(q_hat: UnitQuaternion, q_gt: UnitQuaternion, symmetry: SymmetrySet) -> float:
    """Smallest heading difference over the symmetry orbit of q_hat, degrees in [0, 180]"""
    gt_heading = heading_deg(q_gt)
    return min(wrap_angle_deg(heading_deg(candidate) - gt_heading)
               for candidate in symmetry_expand(q_hat, symmetry))


def spherical_to_cartesian(azimuth, elevation) -> np.ndarray:
    """Unit direction (cos el cos az, cos el sin az, sin el); accepts scalars or arrays"""
    azimuth = np.asarray(azimuth, dtype=float)
    elevation = np.asarray(elevation, dtype=float)
    cos_el = np.cos(elevation)
    return np.stack([cos_el * np.cos(azimuth), cos_el * np.sin(azimuth), np.sin(elevation)], axis=-1)


def rotation_matrix_z(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rodrigues_rotate(points: np.ndarray, axis: Sequence[float], angle_rad: float,
                     pivot: Optional[Sequence[float]] = None) -> np.ndarray:
    """Rotate points about an axis through `pivot` by the Rodrigues formula"""
    points = np.asarray(points, dtype=float)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    origin = np.zeros(3) if pivot is None else np.asarray(pivot, dtype=float)
    v = points - origin
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    rotated = v * c + np.cross(k, v) * s + np.outer(v @ k, k) * (1.0 - c)
    rotated = rotated + origin
    return rotated[0] if single else rotated


def farthest_point_indices(points: np.ndarray, count: int, start_index: int) -> np.ndarray:
    """
    Exact farthest point sampling.

    Starts at `start_index`, then repeatedly picks the point whose squared
    distance to the selected set is largest. Ties go to the lowest index.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    count = min(int(count), n)
    selected = np.empty(count, dtype=np.int64)
    if count == 0:
        return selected
    selected[0] = start_index
    min_sq = np.sum((points - points[start_index]) ** 2, axis=1)
    min_sq[start_index] = -1.0
    for i in range(1, count):
        chosen = int(np.argmax(min_sq))
        selected[i] = chosen
        np.minimum(min_sq, np.sum((points - points[chosen]) ** 2, axis=1), out=min_sq)
        min_sq[chosen] = -1.0
    return selected
