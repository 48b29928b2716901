# test_detector_stub.py
import numpy as np
import pytest

from config import StubConfig
from conftest import make_target
from detector_stub import CONFIDENCE_FLOOR, noise_confidence, select_query_points, stub_predict
from errors import TooManyTargets
from mesh_service import ObjectClass


def _targets():
    return [
        make_target(ObjectClass.GRIPPER, (0.2, 0.1, 0.5), yaw_deg=30.0, opening=0.4, instance_id=1),
        make_target(ObjectClass.LOADING_PLATFORM, (-0.4, 0.3, 0.2), yaw_deg=-90.0, instance_id=2),
        make_target(ObjectClass.PALLET, (0.6, -0.5, -0.3), yaw_deg=120.0, instance_id=3),
    ]


def _detections(predictions):
    return [p for p in predictions if p.is_detection]


def test_noiseless_stub_reproduces_the_targets(rng):
    cloud = rng.uniform(-1.0, 1.0, size=(300, 3))
    predictions = stub_predict(_targets(), StubConfig(queries=16, seed=2), cloud)
    assert len(predictions) == 16
    detections = _detections(predictions)
    assert len(detections) == 3
    for target in _targets():
        pred = next(p for p in detections if p.predicted_class is target.object_class)
        assert pred.confidence() == 1.0
        hypothesis = pred.hypotheses[target.object_class]
        np.testing.assert_allclose(hypothesis.pose.translation, target.pose.translation, atol=1e-12)
        assert hypothesis.pose.orientation.same_rotation(target.pose.orientation)
        if target.object_class is ObjectClass.GRIPPER:
            assert hypothesis.opening_deg == pytest.approx(0.4)
    for pred in predictions:
        if not pred.is_detection:
            assert pred.class_probs[0] == pytest.approx(0.97)


def test_queries_come_from_the_cloud_and_pad_with_uniform_points(rng):
    cloud = rng.normal(size=(10, 3))
    queries = select_query_points(cloud, 16, rng)
    assert queries.shape == (16, 3)
    assert {tuple(q) for q in queries[:10]} == {tuple(p) for p in cloud}
    assert np.all(np.abs(queries[10:]) <= 1.0)
    assert select_query_points(None, 4, rng).shape == (4, 3)


def test_too_many_targets():
    with pytest.raises(TooManyTargets):
        stub_predict(_targets(), StubConfig(queries=2))


def test_miss_rate_one_drops_every_target():
    predictions = stub_predict(_targets(), StubConfig(queries=8, miss_rate=1.0))
    assert _detections(predictions) == []


def test_false_positive_adds_one_detection():
    predictions = stub_predict([], StubConfig(queries=8, false_positive_rate=1.0))
    detections = _detections(predictions)
    assert len(detections) == 1
    assert 0.3 <= detections[0].confidence() <= 0.9


def test_class_confusion_never_keeps_the_true_class():
    predictions = stub_predict(_targets(), StubConfig(queries=8, class_confusion_rate=1.0))
    detections = _detections(predictions)
    assert len(detections) == 3
    by_position = {tuple(np.round(t.pose.translation, 9)): t.object_class for t in _targets()}
    for pred in detections:
        position = tuple(np.round(pred.hypotheses[pred.predicted_class].pose.translation, 9))
        assert by_position[position] is not pred.predicted_class


def test_noise_confidence_is_monotone_and_bounded():
    values = [noise_confidence(e, 0.0, 0.0) for e in (0.0, 0.005, 0.01, 0.05, 0.2)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert all(CONFIDENCE_FLOOR < v < 1.0 for v in values)
    assert noise_confidence(0.0, 10.0, 0.0) < noise_confidence(0.0, 1.0, 0.0)


def test_noisy_stub_is_deterministic_per_scene():
    config = StubConfig(queries=8, position_sigma=0.02, rotation_sigma_deg=5.0, opening_sigma_deg=4.0,
                        confidence_model='noise_coupled', seed=9)
    first = [p.to_dict() for p in stub_predict(_targets(), config, scene_index=3)]
    assert [p.to_dict() for p in stub_predict(_targets(), config, scene_index=3)] == first
    assert [p.to_dict() for p in stub_predict(_targets(), config, scene_index=4)] != first
    confidences = [p.confidence() for p in _detections(stub_predict(_targets(), config, scene_index=3))]
    assert all(CONFIDENCE_FLOOR <= c < 1.0 for c in confidences)
