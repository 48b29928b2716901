# matching_service.py
"""
Set-prediction matching and losses, forward only: Chamfer distance, the
geometry-specific parameter loss, the matching cost matrix, the optimal
assignment and the per-pair total loss with class weighting.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from errors import ClassMismatch, EmptyDataset, EmptySet, TooFewQueries
from geometry_core import Pose, UnitQuaternion, quat_symmetry_loss
from mesh_service import OBJECT_CLASSES, MeshService, ObjectClass, ParamTarget, ScaleRecord, phi

logger = logging.getLogger(__name__)

CLASS_COUNT = 4
PROBABILITY_TOLERANCE = 1e-6
CE_FLOOR = 1e-12
ASSIGNMENT_SENTINEL = 1e6


@dataclass(frozen=True, eq=False)
class Prediction:
    """
    One query slot: class probabilities over (no-object, gripper, platform,
    pallet) and a parameter hypothesis for each object class.

    Hypotheses are normalized-frame targets; their positions are the query
    point plus a predicted offset.
    """

    class_probs: np.ndarray
    hypotheses: Dict[ObjectClass, ParamTarget]
    query_point: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        probs = np.asarray(self.class_probs, dtype=float).reshape(-1)
        if len(probs) != CLASS_COUNT or np.any(probs < 0) or abs(probs.sum() - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"class_probs must be a distribution over {CLASS_COUNT} classes, got {probs.tolist()}")
        object.__setattr__(self, 'class_probs', probs)
        object.__setattr__(self, 'query_point', tuple(float(v) for v in self.query_point))
        hypotheses = {ObjectClass(k): v for k, v in self.hypotheses.items()}
        if set(hypotheses) != set(OBJECT_CLASSES):
            raise ValueError("A prediction needs one hypothesis per object class")
        for object_class, hypothesis in hypotheses.items():
            if hypothesis.object_class is not object_class:
                raise ClassMismatch(f"Hypothesis for {object_class.label} has class {hypothesis.object_class.label}")
        object.__setattr__(self, 'hypotheses', hypotheses)

    @property
    def predicted_class(self) -> ObjectClass:
        """Arg-max class; ties resolve to the lowest index, so no-object wins them"""
        return ObjectClass(int(np.argmax(self.class_probs)))

    @property
    def is_detection(self) -> bool:
        return self.predicted_class is not ObjectClass.NO_OBJECT

    def confidence(self, score_mode: str = 'softmax') -> float:
        c = int(self.predicted_class)
        if score_mode == 'no_object_suppressed':
            object_mass = 1.0 - self.class_probs[0]
            return float(self.class_probs[c] / object_mass) if object_mass > 0 else 0.0
        return float(self.class_probs[c])

    def offset(self, object_class: ObjectClass) -> np.ndarray:
        return self.hypotheses[ObjectClass(object_class)].pose.translation - np.asarray(self.query_point)

    def to_dict(self) -> Dict:
        hypotheses = {}
        for object_class, hypothesis in self.hypotheses.items():
            hypotheses[object_class.label] = {
                'offset': self.offset(object_class).tolist(),
                'orientation': hypothesis.pose.orientation.as_array().tolist(),
                'opening': hypothesis.opening_deg,
            }
        return {'class_probs': self.class_probs.tolist(), 'query_point': list(self.query_point),
                'hypotheses': hypotheses}

    @classmethod
    def from_dict(cls, data: Dict) -> 'Prediction':
        query = np.asarray(data['query_point'], dtype=float)
        hypotheses = {}
        for object_class in OBJECT_CLASSES:
            entry = data['hypotheses'][object_class.label]
            pose = Pose(tuple(np.asarray(entry['offset'], dtype=float) + query),
                        UnitQuaternion.from_array(entry['orientation']), normalized=True)
            hypotheses[object_class] = ParamTarget(object_class, pose, entry.get('opening'))
        return cls(np.asarray(data['class_probs'], dtype=float), hypotheses, tuple(query))


def make_prediction(class_probs: Sequence[float], hypotheses: Dict[ObjectClass, ParamTarget],
                    query_point: Sequence[float] = (0.0, 0.0, 0.0)) -> Prediction:
    return Prediction(np.asarray(class_probs, dtype=float), hypotheses, tuple(query_point))


# --- distances and losses ------------------------------------------------------

def chamfer(x: np.ndarray, y: np.ndarray) -> float:
    """Mean nearest-neighbor l2 distance from x to y plus from y to x (distances, not squared)"""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    y = np.asarray(y, dtype=float).reshape(-1, 3)
    if len(x) == 0 or len(y) == 0:
        raise EmptySet("Chamfer distance needs two non-empty point sets")
    distances = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=-1)
    return float(distances.min(axis=1).mean() + distances.min(axis=0).mean())


def param_loss(pred: ParamTarget, target: ParamTarget) -> float:
    """l1 position error plus the class branch: symmetric quaternion loss, and l1 opening for grippers"""
    if pred.object_class is not target.object_class:
        raise ClassMismatch(f"Cannot compare a {pred.object_class.label} hypothesis "
                            f"with a {target.object_class.label} target")
    if pred.normalized != target.normalized:
        raise ValueError("Prediction and target must live in the same frame")
    loss = float(np.abs(pred.pose.translation - target.pose.translation).sum())
    loss += quat_symmetry_loss(pred.pose.orientation, target.pose.orientation, target.object_class.symmetry)
    if target.object_class is ObjectClass.GRIPPER:
        loss += abs(pred.opening_deg - target.opening_deg)
    return loss


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """K x M matching cost split into its class and parameter terms"""

    class_term: np.ndarray
    param_term: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.class_term + self.param_term

    @property
    def shape(self) -> Tuple[int, int]:
        return self.class_term.shape


def match_cost_matrix(preds: Sequence[Prediction], targets: Sequence[ParamTarget]) -> CostMatrix:
    """
    C[j, i] = -p_j(c_i) + param_loss(hypothesis of prediction j for class c_i, target i)

    Raises:
        TooFewQueries when there are fewer predictions than targets
    """
    k, m = len(preds), len(targets)
    if k < m:
        raise TooFewQueries(f"{k} predictions cannot cover {m} targets")
    class_term = np.zeros((k, m))
    param_term = np.zeros((k, m))
    for i, target in enumerate(targets):
        c = target.object_class
        for j, pred in enumerate(preds):
            class_term[j, i] = -pred.class_probs[int(c)]
            param_term[j, i] = param_loss(pred.hypotheses[c], target)
    return CostMatrix(class_term, param_term)


@dataclass(frozen=True)
class MatchResult:
    """Target i is matched to prediction assignment[i]; `unmatched` predictions take the no-object class"""

    assignment: Tuple[int, ...]
    pair_costs: Tuple[float, ...]
    class_costs: Optional[Tuple[float, ...]] = None
    param_costs: Optional[Tuple[float, ...]] = None
    unmatched: Tuple[int, ...] = field(default_factory=tuple)

    @property
    def total_cost(self) -> float:
        return float(sum(self.pair_costs))

    def target_for(self, prediction_index: int) -> Optional[int]:
        for target_index, pred_index in enumerate(self.assignment):
            if pred_index == prediction_index:
                return target_index
        return None

    def to_dict(self) -> Dict:
        pairs = []
        for i, j in enumerate(self.assignment):
            pair = {'target': i, 'prediction': j, 'cost': self.pair_costs[i]}
            if self.class_costs is not None:
                pair['class_cost'] = self.class_costs[i]
                pair['param_cost'] = self.param_costs[i]
            pairs.append(pair)
        return {'pairs': pairs, 'unmatched': list(self.unmatched), 'total_cost': self.total_cost}


def _prefer_low_indices(cost: np.ndarray, assignment: np.ndarray) -> np.ndarray:
    # among exactly tied alternatives, give each target (in index order) the lowest prediction index
    assignment = assignment.copy()
    owner = {int(j): i for i, j in enumerate(assignment)}
    for i in range(len(assignment)):
        current = int(assignment[i])
        for j in range(current):
            if cost[j, i] != cost[current, i]:
                continue
            other = owner.get(j)
            if other is None:
                del owner[current]
            elif other > i and cost[current, other] == cost[j, other]:
                assignment[other] = current
                owner[current] = other
            else:
                continue
            assignment[i] = j
            owner[j] = i
            break
    return assignment


def hungarian_assign(cost: Union[CostMatrix, np.ndarray]) -> MatchResult:
    """
    Globally cost-minimal injective assignment of the M targets (columns) to
    the K predictions (rows).

    The matrix is padded to K x K with a finite sentinel column cost before
    solving. Exact ties are resolved towards the lowest prediction index.
    """
    decomposed = cost if isinstance(cost, CostMatrix) else None
    matrix = np.asarray(decomposed.total if decomposed is not None else cost, dtype=float)
    if matrix.ndim != 2:
        raise ValueError(f"Cost matrix must be 2D, got shape {matrix.shape}")
    k, m = matrix.shape
    if k < m:
        raise TooFewQueries(f"{k} predictions cannot cover {m} targets")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("Cost matrix entries must be finite")

    padded = np.full((k, k), ASSIGNMENT_SENTINEL)
    padded[:, :m] = matrix
    rows, cols = linear_sum_assignment(padded)
    assignment = np.empty(m, dtype=np.int64)
    for row, col in zip(rows, cols):
        if col < m:
            assignment[col] = row
    assignment = _prefer_low_indices(matrix, assignment)

    matched = set(assignment.tolist())
    unmatched = tuple(j for j in range(k) if j not in matched)
    pair_costs = tuple(float(matrix[assignment[i], i]) for i in range(m))
    class_costs = param_costs = None
    if decomposed is not None:
        class_costs = tuple(float(decomposed.class_term[assignment[i], i]) for i in range(m))
        param_costs = tuple(float(decomposed.param_term[assignment[i], i]) for i in range(m))
    return MatchResult(tuple(int(j) for j in assignment), pair_costs, class_costs, param_costs, unmatched)


@dataclass(frozen=True)
class LossBreakdown:
    cross_entropy: float
    param_loss: float
    chamfer_loss: float

    @property
    def total(self) -> float:
        return self.cross_entropy + self.param_loss + self.chamfer_loss

    def to_dict(self) -> Dict:
        return {'cross_entropy': self.cross_entropy, 'param_loss': self.param_loss,
                'chamfer_loss': self.chamfer_loss, 'total': self.total}


def total_loss(pred: Prediction, target: Optional[ParamTarget], class_weights: Sequence[float],
               meshes: MeshService, record: Optional[ScaleRecord] = None) -> LossBreakdown:
    """
    Weighted cross-entropy on the target class, plus the parameter and
    Chamfer terms when the target is an object. A `None` target is the
    no-object class and leaves only the cross-entropy.
    """
    c = ObjectClass.NO_OBJECT if target is None else target.object_class
    ce = -float(class_weights[int(c)]) * math.log(max(float(pred.class_probs[int(c)]), CE_FLOOR))
    if target is None:
        return LossBreakdown(ce, 0.0, 0.0)
    hypothesis = pred.hypotheses[c]
    mesh = meshes.get(c)
    cd = chamfer(phi(mesh, hypothesis, record), phi(mesh, target, record, strict=True))
    return LossBreakdown(ce, param_loss(hypothesis, target), cd)


def scene_loss(preds: Sequence[Prediction], targets: Sequence[ParamTarget], match: MatchResult,
               class_weights: Sequence[float], meshes: MeshService,
               record: Optional[ScaleRecord] = None) -> Tuple[LossBreakdown, List[LossBreakdown]]:
    """Per-pair losses over every query slot and their mean (losses are normalized per object)"""
    per_pair = []
    for j, pred in enumerate(preds):
        target_index = match.target_for(j)
        target = None if target_index is None else targets[target_index]
        per_pair.append(total_loss(pred, target, class_weights, meshes, record))
    if not per_pair:
        return LossBreakdown(0.0, 0.0, 0.0), per_pair
    mean = LossBreakdown(float(np.mean([p.cross_entropy for p in per_pair])),
                         float(np.mean([p.param_loss for p in per_pair])),
                         float(np.mean([p.chamfer_loss for p in per_pair])))
    return mean, per_pair


def class_counts(target_sets: Sequence[Sequence[ParamTarget]], queries: int) -> np.ndarray:
    """Per-class counts over a dataset; no-object gets the query slots left over in every scene"""
    counts = np.zeros(CLASS_COUNT, dtype=np.int64)
    for targets in target_sets:
        for target in targets:
            counts[int(target.object_class)] += 1
    counts[0] = queries * len(target_sets) - counts[1:].sum()
    return counts


def class_weights(counts: Union[Sequence[int], Dict[ObjectClass, int]]) -> np.ndarray:
    """
    Inverse-frequency class weights normalized to mean 1.

    Raises:
        EmptyDataset when a class count is zero or negative
    """
    if isinstance(counts, dict):
        counts = [counts.get(ObjectClass(c), 0) for c in range(CLASS_COUNT)]
    counts = np.asarray(counts, dtype=float)
    if len(counts) != CLASS_COUNT or np.any(counts <= 0):
        raise EmptyDataset(f"Class weights need a positive count for each of the {CLASS_COUNT} classes, "
                           f"got {counts.tolist()}")
    inverse = 1.0 / counts
    return inverse / inverse.mean()
