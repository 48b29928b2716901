# detector_stub.py
"""
Synthetic detector: turns normalized ground truth into K query predictions
under controlled corruption so matching and evaluation can run end to end
without a trained network.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import StubConfig
from errors import TooManyTargets
from geometry_core import Pose, UnitQuaternion, farthest_point_indices, quat_multiply
from matching_service import CLASS_COUNT, Prediction
from mesh_service import DEFAULT_ALPHA_MAX_DEG, OBJECT_CLASSES, ObjectClass, ParamTarget

logger = logging.getLogger(__name__)

NO_OBJECT_PROBS = (0.97, 0.01, 0.01, 0.01)
# NoiseCoupled confidence: floor + span * logistic(-gain * (magnitude - midpoint))
CONFIDENCE_FLOOR = 0.3
CONFIDENCE_SPAN = 0.7
CONFIDENCE_GAIN = 1.5
CONFIDENCE_MIDPOINT = 2.0
# perturbation sizes that count as one unit of magnitude
POSITION_UNIT = 0.01
ROTATION_UNIT_DEG = 5.0
OPENING_UNIT_DEG = 5.0
FALSE_POSITIVE_CONFIDENCE = (0.3, 0.9)


def _spread_probs(object_class: ObjectClass, confidence: float) -> np.ndarray:
    probs = np.full(CLASS_COUNT, (1.0 - confidence) / (CLASS_COUNT - 1))
    probs[int(object_class)] = confidence
    return probs


def noise_confidence(position_error: float, rotation_error_deg: float, opening_error_deg: float) -> float:
    """Logistic map from perturbation magnitude to a confidence in (0.3, 1)"""
    magnitude = (position_error / POSITION_UNIT + rotation_error_deg / ROTATION_UNIT_DEG
                 + opening_error_deg / OPENING_UNIT_DEG)
    return CONFIDENCE_FLOOR + CONFIDENCE_SPAN / (1.0 + math.exp(CONFIDENCE_GAIN * (magnitude - CONFIDENCE_MIDPOINT)))


def select_query_points(cloud_points: Optional[np.ndarray], count: int, rng: np.random.Generator) -> np.ndarray:
    """K query points by farthest point sampling of the input cloud, padded with uniform points in [-1, 1]^3"""
    points = np.zeros((0, 3)) if cloud_points is None else np.asarray(cloud_points, dtype=float).reshape(-1, 3)
    if len(points):
        start = int(rng.integers(len(points)))
        points = points[farthest_point_indices(points, count, start)]
    if len(points) < count:
        points = np.vstack([points, rng.uniform(-1.0, 1.0, size=(count - len(points), 3))])
    return points


def _hypotheses(position: np.ndarray, orientation: UnitQuaternion, gripper_opening: float
                ) -> Dict[ObjectClass, ParamTarget]:
    pose = Pose(tuple(position), orientation, normalized=True)
    return {c: ParamTarget(c, pose, gripper_opening if c is ObjectClass.GRIPPER else None)
            for c in OBJECT_CLASSES}


def stub_predict(targets: Sequence[ParamTarget], config: StubConfig, cloud_points: Optional[np.ndarray] = None,
                 scene_index: int = 0, alpha_max_deg: float = DEFAULT_ALPHA_MAX_DEG) -> List[Prediction]:
    """
    K predictions for one scene of normalized targets.

    Every target that survives the miss draw gets the free query closest to
    it; its offset from that query is the true offset plus Gaussian noise.
    Orientations turn about a random axis by |N(0, rotation_sigma)|,
    openings get N(0, opening_sigma) degrees. A false positive is added with
    probability false_positive_rate and every other slot predicts no-object.

    Raises:
        TooManyTargets when the scene has more targets than queries
    """
    k = config.queries
    if len(targets) > k:
        raise TooManyTargets(f"{len(targets)} targets exceed {k} queries")
    rng = np.random.default_rng([config.seed, scene_index])
    queries = select_query_points(cloud_points, k, rng)
    free = np.ones(k, dtype=bool)
    slots: Dict[int, Prediction] = {}
    opening_scale = 2.0 / alpha_max_deg

    for target in targets:
        if rng.random() < config.miss_rate:
            continue
        position = target.pose.translation
        candidates = np.flatnonzero(free)
        slot = int(candidates[np.argmin(np.linalg.norm(queries[candidates] - position, axis=1))])
        free[slot] = False
        query = queries[slot]

        position_noise = rng.normal(0.0, config.position_sigma, size=3) if config.position_sigma > 0 else np.zeros(3)
        offset = (position - query) + position_noise
        predicted_position = offset + query

        rotation_deg = abs(rng.normal(0.0, config.rotation_sigma_deg)) if config.rotation_sigma_deg > 0 else 0.0
        orientation = target.pose.orientation
        if rotation_deg > 0.0:
            axis = rng.normal(size=3)
            turn = UnitQuaternion.from_axis_angle(axis, math.radians(rotation_deg))
            orientation = quat_multiply(turn, orientation)

        opening_noise_deg = rng.normal(0.0, config.opening_sigma_deg) if config.opening_sigma_deg > 0 else 0.0
        if target.object_class is ObjectClass.GRIPPER:
            opening = target.opening_deg + opening_noise_deg * opening_scale
        else:
            opening = float(rng.uniform(-1.0, 1.0))

        predicted_class = target.object_class
        if config.class_confusion_rate > 0 and rng.random() < config.class_confusion_rate:
            others = [c for c in OBJECT_CLASSES if c is not target.object_class]
            predicted_class = others[int(rng.integers(len(others)))]

        if config.confidence_model == 'noise_coupled':
            confidence = noise_confidence(float(np.linalg.norm(position_noise)), rotation_deg, abs(opening_noise_deg))
        else:
            confidence = 1.0
        slots[slot] = Prediction(_spread_probs(predicted_class, confidence),
                                 _hypotheses(predicted_position, orientation, opening), tuple(query))

    if config.false_positive_rate > 0 and rng.random() < config.false_positive_rate and free.any():
        candidates = np.flatnonzero(free)
        slot = int(candidates[int(rng.integers(len(candidates)))])
        free[slot] = False
        fp_class = OBJECT_CLASSES[int(rng.integers(len(OBJECT_CLASSES)))]
        confidence = float(rng.uniform(*FALSE_POSITIVE_CONFIDENCE))
        position = rng.uniform(-1.0, 1.0, size=3)
        slots[slot] = Prediction(_spread_probs(fp_class, confidence),
                                 _hypotheses(position, UnitQuaternion.random(rng), float(rng.uniform(-1.0, 1.0))),
                                 tuple(queries[slot]))

    predictions = []
    for j in range(k):
        if j in slots:
            predictions.append(slots[j])
        else:
            idle = _hypotheses(queries[j], UnitQuaternion.identity(), -1.0)
            predictions.append(Prediction(np.asarray(NO_OBJECT_PROBS), idle, tuple(queries[j])))
    logger.debug(f"Stub scene {scene_index}: {len(slots)} object predictions out of {k} queries")
    return predictions
