# test_matching_service.py
import itertools
import math

import numpy as np
import pytest

from conftest import make_target
from errors import ClassMismatch, EmptyDataset, EmptySet, TooFewQueries
from geometry_core import Pose, UnitQuaternion, z_flip
from matching_service import (CE_FLOOR, CostMatrix, Prediction, chamfer, class_counts, class_weights,
                              hungarian_assign, make_prediction, match_cost_matrix, param_loss, scene_loss,
                              total_loss)
from mesh_service import OBJECT_CLASSES, ObjectClass, ParamTarget, ScaleRecord, phi


def _hypotheses(position=(0.0, 0.0, 0.0), yaw_deg=0.0, opening=0.0):
    return {c: make_target(c, position, yaw_deg, opening if c is ObjectClass.GRIPPER else None)
            for c in OBJECT_CLASSES}


def _prediction(object_class: ObjectClass, confidence: float = 1.0, **kwargs) -> Prediction:
    probs = np.full(4, (1.0 - confidence) / 3.0)
    probs[int(object_class)] = confidence
    return make_prediction(probs, _hypotheses(**kwargs))


def _brute_force_cost(matrix: np.ndarray) -> float:
    k, m = matrix.shape
    best = math.inf
    for rows in itertools.permutations(range(k), m):
        best = min(best, sum(matrix[rows[i], i] for i in range(m)))
    return best


def test_hungarian_matches_brute_force(rng):
    for _ in range(1000):
        k = int(rng.integers(1, 8))
        m = int(rng.integers(0, k + 1))
        matrix = rng.uniform(-1.0, 3.0, size=(k, m))
        result = hungarian_assign(matrix)
        assert len(set(result.assignment)) == m
        assert result.total_cost == pytest.approx(_brute_force_cost(matrix), abs=1e-12)
        assert sorted(result.assignment + result.unmatched) == list(range(k))


def test_hungarian_with_integer_ties(rng):
    for _ in range(200):
        k = int(rng.integers(1, 6))
        m = int(rng.integers(1, k + 1))
        matrix = rng.integers(0, 3, size=(k, m)).astype(float)
        assert hungarian_assign(matrix).total_cost == _brute_force_cost(matrix)


def test_hungarian_ties_prefer_low_prediction_indices():
    assert hungarian_assign(np.zeros((3, 2))).assignment == (0, 1)
    assert hungarian_assign(np.ones((4, 1))).assignment == (0,)
    assert hungarian_assign(np.zeros((3, 2))).unmatched == (2,)


def test_hungarian_errors():
    with pytest.raises(TooFewQueries):
        hungarian_assign(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        hungarian_assign(np.array([[np.inf]]))


def test_chamfer_hand_value_and_oracle(rng):
    assert chamfer(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]])) == 2.0
    for _ in range(500):
        x = rng.normal(size=(int(rng.integers(1, 9)), 3))
        y = rng.normal(size=(int(rng.integers(1, 9)), 3))
        forward = sum(min(np.linalg.norm(a - b) for b in y) for a in x) / len(x)
        backward = sum(min(np.linalg.norm(b - a) for a in x) for b in y) / len(y)
        assert chamfer(x, y) == pytest.approx(forward + backward, abs=1e-12)
    with pytest.raises(EmptySet):
        chamfer(np.zeros((0, 3)), np.zeros((1, 3)))


def test_param_loss_terms():
    target = make_target(ObjectClass.GRIPPER, (0.1, 0.2, 0.3), opening=-0.5)
    pred = make_target(ObjectClass.GRIPPER, (0.2, 0.0, 0.3), opening=0.0)
    assert param_loss(pred, target) == pytest.approx(0.1 + 0.2 + 0.5)
    flipped = target.with_pose(Pose(target.pose.position, z_flip(target.pose.orientation), True))
    assert param_loss(flipped, target) == pytest.approx(0.0, abs=1e-12)
    platform = make_target(ObjectClass.LOADING_PLATFORM)
    platform_flipped = platform.with_pose(Pose((0.0, 0.0, 0.0), z_flip(platform.pose.orientation), True))
    assert param_loss(platform_flipped, platform) == pytest.approx(2.0)
    with pytest.raises(ClassMismatch):
        param_loss(make_target(ObjectClass.PALLET), target)
    with pytest.raises(ValueError):
        param_loss(make_target(ObjectClass.PALLET, normalized=False), make_target(ObjectClass.PALLET))


def test_chamfer_on_posed_samples_is_symmetric_and_rigid(meshes, rng):
    for object_class in OBJECT_CLASSES:
        mesh = meshes.get(object_class)
        for _ in range(20):
            a, b = (ParamTarget(object_class, Pose(rng.uniform(-2.0, 2.0, 3), UnitQuaternion.random(rng)),
                                opening if object_class is ObjectClass.GRIPPER else None) for opening in (30.0, 60.0))
            x, y = phi(mesh, a), phi(mesh, b)
            assert chamfer(x, y) == pytest.approx(chamfer(y, x), abs=1e-12)
            rotation = UnitQuaternion.random(rng).to_matrix()
            shift = rng.uniform(-5.0, 5.0, 3)
            assert chamfer(x @ rotation.T + shift, y @ rotation.T + shift) == pytest.approx(chamfer(x, y), abs=1e-9)


@pytest.mark.parametrize('object_class', [ObjectClass.GRIPPER, ObjectClass.PALLET])
def test_param_loss_ignores_the_z_flip(object_class, rng):
    for _ in range(200):
        position = rng.uniform(-1.0, 1.0, 3)
        orientation = UnitQuaternion.random(rng)
        opening = float(rng.uniform(-1.0, 1.0)) if object_class is ObjectClass.GRIPPER else None
        target = ParamTarget(object_class, Pose(position, orientation, True), opening)
        flipped = target.with_pose(Pose(position, z_flip(orientation), True))
        assert param_loss(flipped, target) == pytest.approx(0.0, abs=1e-12)
        negated = target.with_pose(Pose(position, -z_flip(orientation), True))
        assert param_loss(negated, target) == pytest.approx(0.0, abs=1e-12)


def test_prediction_validation_and_argmax_ties():
    with pytest.raises(ValueError):
        make_prediction([0.5, 0.5, 0.5, 0.5], _hypotheses())
    tied = make_prediction([0.4, 0.4, 0.1, 0.1], _hypotheses())
    assert tied.predicted_class is ObjectClass.NO_OBJECT
    assert not tied.is_detection
    pred = make_prediction([0.2, 0.6, 0.1, 0.1], _hypotheses())
    assert pred.confidence() == pytest.approx(0.6)
    assert pred.confidence('no_object_suppressed') == pytest.approx(0.75)
    hypotheses = _hypotheses()
    hypotheses[ObjectClass.PALLET] = make_target(ObjectClass.LOADING_PLATFORM)
    with pytest.raises(ClassMismatch):
        make_prediction([1.0, 0.0, 0.0, 0.0], hypotheses)


def test_prediction_dict_stores_offsets_from_query():
    pred = make_prediction([0.1, 0.7, 0.1, 0.1], _hypotheses((0.3, -0.2, 0.1), 40.0, 0.25), (0.25, -0.25, 0.0))
    data = pred.to_dict()
    np.testing.assert_allclose(data['hypotheses']['gripper']['offset'], [0.05, 0.05, 0.1], atol=1e-15)
    restored = Prediction.from_dict(data)
    np.testing.assert_allclose(restored.hypotheses[ObjectClass.GRIPPER].pose.translation, [0.3, -0.2, 0.1],
                               atol=1e-15)
    assert restored.hypotheses[ObjectClass.GRIPPER].opening_deg == 0.25
    assert restored.hypotheses[ObjectClass.PALLET].opening_deg is None


def test_cost_matrix_prefers_the_right_prediction():
    targets = [make_target(ObjectClass.PALLET, (0.5, 0.0, 0.0)), make_target(ObjectClass.GRIPPER, (-0.5, 0.0, 0.0))]
    preds = [
        _prediction(ObjectClass.NO_OBJECT, 0.97),
        _prediction(ObjectClass.GRIPPER, 0.9, position=(-0.5, 0.0, 0.0)),
        _prediction(ObjectClass.PALLET, 0.9, position=(0.5, 0.0, 0.0)),
    ]
    cost = match_cost_matrix(preds, targets)
    assert isinstance(cost, CostMatrix)
    assert cost.shape == (3, 2)
    assert cost.class_term[2, 0] == pytest.approx(-0.9)
    result = hungarian_assign(cost)
    assert result.assignment == (2, 1)
    assert result.unmatched == (0,)
    assert result.target_for(1) == 1
    assert result.target_for(0) is None
    assert result.param_costs == pytest.approx((0.0, 0.0))
    with pytest.raises(TooFewQueries):
        match_cost_matrix(preds[:1], targets)


def test_total_loss_for_objects_and_no_object(meshes):
    record = ScaleRecord.identity()
    target = make_target(ObjectClass.PALLET, (0.1, 0.1, 0.0), yaw_deg=15.0)
    perfect = _prediction(ObjectClass.PALLET, 0.9, position=(0.1, 0.1, 0.0), yaw_deg=15.0)
    loss = total_loss(perfect, target, np.ones(4), meshes, record)
    assert loss.cross_entropy == pytest.approx(-math.log(0.9))
    assert loss.param_loss == pytest.approx(0.0, abs=1e-12)
    assert loss.chamfer_loss == pytest.approx(0.0, abs=1e-12)
    weights = np.array([0.5, 1.0, 1.0, 2.0])
    no_object = total_loss(perfect, None, weights, meshes, record)
    assert no_object.total == pytest.approx(-0.5 * math.log(0.1 / 3.0))
    certain = _prediction(ObjectClass.PALLET, 1.0)
    assert total_loss(certain, None, np.ones(4), meshes, record).cross_entropy == pytest.approx(-math.log(CE_FLOOR))


def test_scene_loss_averages_over_every_slot(meshes):
    record = ScaleRecord.identity()
    targets = [make_target(ObjectClass.PALLET, (0.5, 0.0, 0.0))]
    preds = [_prediction(ObjectClass.NO_OBJECT, 1.0), _prediction(ObjectClass.PALLET, 1.0, position=(0.5, 0.0, 0.0))]
    match = hungarian_assign(match_cost_matrix(preds, targets))
    mean, per_pair = scene_loss(preds, targets, match, np.ones(4), meshes, record)
    assert len(per_pair) == 2
    assert mean.total == pytest.approx(0.0, abs=1e-9)


def test_class_weights_inverse_frequency():
    counts = class_counts([[make_target(ObjectClass.PALLET), make_target(ObjectClass.GRIPPER)],
                           [make_target(ObjectClass.PALLET), make_target(ObjectClass.LOADING_PLATFORM)]], 4)
    assert counts.tolist() == [4, 1, 1, 2]
    weights = class_weights(counts)
    assert weights.mean() == pytest.approx(1.0)
    assert weights[1] == pytest.approx(2.0 * weights[3])
    assert weights[1] == pytest.approx(4.0 * weights[0])
    with pytest.raises(EmptyDataset):
        class_weights([10, 0, 1, 1])
    assert class_weights({ObjectClass(c): 1 for c in range(4)}).tolist() == [1.0, 1.0, 1.0, 1.0]
