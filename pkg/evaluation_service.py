# evaluation_service.py
"""
Detection evaluation: CD-thresholded greedy matching, all-point average
precision, geometric error statistics and the point-accumulation study.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import EvalConfig
from errors import InvariantViolation, NoGroundTruth
from geometry_core import geodesic_error, yaw_error
from matching_service import Prediction, chamfer
from mesh_service import OBJECT_CLASSES, MeshService, ObjectClass, ParamTarget, ScaleRecord, phi

logger = logging.getLogger(__name__)

METRICS = ('l2_m', 'geodesic_deg', 'yaw_deg', 'opening_deg')
METRIC_LABELS = {
    'l2_m': 'l2 [m]',
    'geodesic_deg': 'Geodesic [deg]',
    'yaw_deg': 'Yaw [deg]',
    'opening_deg': 'Opening [deg]',
    'ap': 'AP',
}


@dataclass(frozen=True)
class Detection:
    scene: int
    prediction_index: int
    object_class: ObjectClass
    confidence: float
    is_tp: bool
    target_index: Optional[int] = None
    cd: Optional[float] = None


@dataclass(frozen=True, eq=False)
class MatchedPair:
    scene: int
    prediction_index: int
    target_index: int
    prediction: ParamTarget
    target: ParamTarget
    record: ScaleRecord
    cd: float


@dataclass(eq=False)
class SceneEval:
    """Labeled detections of one scene plus what the report needs to aggregate it"""

    scene: int
    detections: List[Detection]
    pairs: List[MatchedPair]
    gt_counts: Dict[ObjectClass, int]
    false_negatives: List[Tuple[ObjectClass, int]]
    timings: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            'scene': self.scene,
            'detections': [{'prediction': d.prediction_index, 'class': int(d.object_class),
                            'confidence': d.confidence, 'tp': d.is_tp, 'target': d.target_index, 'cd': d.cd}
                           for d in self.detections],
            'false_negatives': [{'class': int(c), 'target': i} for c, i in self.false_negatives],
            'gt_counts': {c.label: n for c, n in self.gt_counts.items()},
        }


def match_for_eval(preds: Sequence[Prediction], targets: Sequence[ParamTarget], meshes: MeshService,
                   cfg: EvalConfig, record: ScaleRecord, scene: int = 0) -> SceneEval:
    """
    Greedy confidence-descending matching within each class.

    A detection matches the unmatched same-class target with the lowest
    Chamfer distance between the posed 64-point sets, provided that distance
    is strictly below cfg.cd_threshold. Everything is evaluated in the
    normalized frame.
    """
    detections_order = sorted((j for j, p in enumerate(preds) if p.is_detection),
                              key=lambda j: (-preds[j].confidence(cfg.score_mode), j))
    matched = [False] * len(targets)
    posed_targets = {}
    detections, pairs = [], []

    for j in detections_order:
        pred = preds[j]
        c = pred.predicted_class
        hypothesis = pred.hypotheses[c]
        mesh = meshes.get(c)
        posed_hypothesis = phi(mesh, hypothesis, record)
        best_i, best_cd = None, math.inf
        for i, target in enumerate(targets):
            if matched[i] or target.object_class is not c:
                continue
            if i not in posed_targets:
                posed_targets[i] = phi(mesh, target, record, strict=True)
            cd = chamfer(posed_hypothesis, posed_targets[i])
            if cd < best_cd:
                best_i, best_cd = i, cd
        confidence = pred.confidence(cfg.score_mode)
        if best_i is not None and best_cd < cfg.cd_threshold:
            matched[best_i] = True
            detections.append(Detection(scene, j, c, confidence, True, best_i, best_cd))
            pairs.append(MatchedPair(scene, j, best_i, hypothesis, targets[best_i], record, best_cd))
        else:
            detections.append(Detection(scene, j, c, confidence, False, None,
                                        None if best_i is None else best_cd))

    gt_counts = {c: sum(1 for t in targets if t.object_class is c) for c in OBJECT_CLASSES}
    false_negatives = [(t.object_class, i) for i, t in enumerate(targets) if not matched[i]]
    return SceneEval(scene, detections, pairs, gt_counts, false_negatives)


def check_matching(scene_eval: SceneEval, targets: Sequence[ParamTarget]):
    """Raise InvariantViolation unless the labeling is one-to-one and class-consistent"""
    seen = set()
    for d in scene_eval.detections:
        if not d.is_tp:
            continue
        if d.target_index in seen:
            raise InvariantViolation(f"Scene {scene_eval.scene}: target {d.target_index} matched twice")
        seen.add(d.target_index)
        if targets[d.target_index].object_class is not d.object_class:
            raise InvariantViolation(f"Scene {scene_eval.scene}: class mismatch on target {d.target_index}")
    if len(seen) + len(scene_eval.false_negatives) != len(targets):
        raise InvariantViolation(f"Scene {scene_eval.scene}: TP + FN does not cover the targets")


def average_precision(confidences: Sequence[float], is_tp: Sequence[bool], gt_count: int) -> float:
    """
    All-point interpolated AP: area under the precision envelope of the
    precision-recall curve, detections ranked by descending confidence
    (stable for ties).

    Raises:
        NoGroundTruth when gt_count is 0
    """
    if gt_count <= 0:
        raise NoGroundTruth("AP is undefined without ground truth")
    if len(confidences) == 0:
        return 0.0
    order = np.argsort(-np.asarray(confidences, dtype=float), kind='stable')
    hits = np.asarray(is_tp, dtype=bool)[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    recall = tp / gt_count
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    previous_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - previous_recall) * envelope))


def pair_errors_frame(pairs: Sequence[MatchedPair]) -> pd.DataFrame:
    """One row per true positive: denormalized l2 [m] and angular errors [deg]"""
    rows = []
    for pair in pairs:
        c = pair.target.object_class
        pred_metric = pair.record.denormalize_target(pair.prediction)
        target_metric = pair.record.denormalize_target(pair.target)
        opening = None
        if c is ObjectClass.GRIPPER:
            opening = abs(pred_metric.opening_deg - target_metric.opening_deg)
        rows.append({
            'scene': pair.scene,
            'class': c.label,
            'prediction': pair.prediction_index,
            'target': pair.target_index,
            'cd': pair.cd,
            'l2_m': float(np.linalg.norm(pred_metric.pose.translation - target_metric.pose.translation)),
            'geodesic_deg': geodesic_error(pair.prediction.pose.orientation, pair.target.pose.orientation,
                                           c.symmetry),
            'yaw_deg': yaw_error(pair.prediction.pose.orientation, pair.target.pose.orientation, c.symmetry),
            'opening_deg': opening,
        })
    columns = ['scene', 'class', 'prediction', 'target', 'cd'] + list(METRICS)
    return pd.DataFrame(rows, columns=columns)


@dataclass(frozen=True)
class MetricStats:
    mean: float
    std: float

    def __str__(self) -> str:
        return f"{self.mean:.3f} (±{self.std:.3f})"


def geometric_stats(pairs: Sequence[MatchedPair]) -> Dict[ObjectClass, Dict[str, Optional[MetricStats]]]:
    """Per-class mean and population std of every metric; None where a class has no matches"""
    frame = pair_errors_frame(pairs)
    stats = {}
    for c in OBJECT_CLASSES:
        rows = frame[frame['class'] == c.label]
        per_metric = {}
        for metric in METRICS:
            values = rows[metric].dropna().astype(float)
            if metric == 'opening_deg' and c is not ObjectClass.GRIPPER:
                per_metric[metric] = None
            elif len(values) == 0:
                per_metric[metric] = None
            else:
                per_metric[metric] = MetricStats(float(values.mean()), float(values.std(ddof=0)))
        stats[c] = per_metric
    return stats


def runtime_stats(timings: Sequence[Dict[str, float]]) -> Dict[str, MetricStats]:
    """Mean and std per stage, in milliseconds"""
    frame = pd.DataFrame(list(timings))
    return {stage: MetricStats(float(frame[stage].mean() * 1000.0), float(frame[stage].std(ddof=0) * 1000.0))
            for stage in frame.columns}


@dataclass(eq=False)
class EvalReport:
    ap: Dict[ObjectClass, Optional[float]]
    mean_ap: Optional[float]
    stats: Dict[ObjectClass, Dict[str, Optional[MetricStats]]]
    counts: Dict[ObjectClass, Dict[str, int]]
    runtime: Dict[str, MetricStats] = field(default_factory=dict)
    pair_errors: pd.DataFrame = field(default_factory=pd.DataFrame)

    def to_dict(self) -> Dict:
        def stat(value: Optional[MetricStats]):
            return None if value is None else {'mean': value.mean, 'std': value.std}

        return {
            'map': self.mean_ap,
            'classes': {
                c.label: {
                    'ap': self.ap[c],
                    'counts': self.counts[c],
                    **{metric: stat(self.stats[c][metric]) for metric in METRICS},
                }
                for c in OBJECT_CLASSES
            },
            'runtime': {stage: stat(value) for stage, value in self.runtime.items()},
        }

    def table(self) -> pd.DataFrame:
        """Metric rows x class columns, cells formatted as mean (± std)"""
        data = {}
        for c in OBJECT_CLASSES:
            column = {METRIC_LABELS[m]: ('-' if self.stats[c][m] is None else str(self.stats[c][m])) for m in METRICS}
            column[METRIC_LABELS['ap']] = '-' if self.ap[c] is None else f"{self.ap[c]:.3f}"
            data[c.label] = column
        frame = pd.DataFrame(data)
        frame['mean'] = ''
        frame.loc[METRIC_LABELS['ap'], 'mean'] = '-' if self.mean_ap is None else f"{self.mean_ap:.3f}"
        return frame

    def render(self) -> str:
        lines = [self.table().to_string()]
        if self.runtime:
            lines.append('')
            lines += [f"{stage}: {value.mean:.1f}ms (±{value.std:.1f}ms)" for stage, value in self.runtime.items()]
        return "\n".join(lines) + "\n"


def build_report(scene_evals: Sequence[SceneEval]) -> EvalReport:
    """
    Reduce per-scene labelings into per-class AP, mAP and error statistics.

    Classes without ground truth get AP None and are left out of mAP.
    """
    ap, counts = {}, {}
    for c in OBJECT_CLASSES:
        dets = [d for s in scene_evals for d in s.detections if d.object_class is c]
        gt = sum(s.gt_counts.get(c, 0) for s in scene_evals)
        tp = sum(1 for d in dets if d.is_tp)
        counts[c] = {'tp': tp, 'fp': len(dets) - tp, 'fn': gt - tp, 'gt': gt}
        try:
            ap[c] = average_precision([d.confidence for d in dets], [d.is_tp for d in dets], gt)
        except NoGroundTruth:
            logger.warning(f"⚠️ No {c.label} ground truth: class left out of mAP")
            ap[c] = None

    scored = [value for value in ap.values() if value is not None]
    mean_ap = float(np.mean(scored)) if scored else None
    pairs = [p for s in scene_evals for p in s.pairs]
    timings = [s.timings for s in scene_evals if s.timings]
    report = EvalReport(ap, mean_ap, geometric_stats(pairs), counts,
                        runtime_stats(timings) if timings else {}, pair_errors_frame(pairs))
    check_report(report)
    return report


def check_report(report: EvalReport):
    for c, value in report.ap.items():
        if value is not None and not 0.0 <= value <= 1.0:
            raise InvariantViolation(f"AP of {c.label} is {value}, outside [0, 1]")
    scored = [value for value in report.ap.values() if value is not None]
    if scored and abs(report.mean_ap - sum(scored) / len(scored)) > 1e-12:
        raise InvariantViolation("mAP differs from the mean of the per-class APs")


def accumulation_study(captures: Dict[int, Sequence], evaluate_capture: Callable[[object], SceneEval]
                       ) -> Tuple[Dict[int, EvalReport], pd.DataFrame]:
    """
    Evaluate the same scenes at several point-accumulation counts.

    Args:
        captures: accumulation count -> captures of every scene at that count
        evaluate_capture: runs preprocessing, prediction and matching on one capture

    Returns:
        (report per count, table with (class, metric) rows and one column per count)
    """
    reports = {}
    for count in sorted(captures):
        scene_evals = [evaluate_capture(capture) for capture in captures[count]]
        reports[count] = build_report(scene_evals)
        logger.info(f"✅ Accumulation {count}: mAP {reports[count].mean_ap}")

    rows = {}
    for c in OBJECT_CLASSES:
        for metric in METRICS + ('ap',):
            row = {}
            for count, report in reports.items():
                if metric == 'ap':
                    row[count] = '-' if report.ap[c] is None else f"{report.ap[c]:.3f}"
                else:
                    value = report.stats[c][metric]
                    row[count] = '-' if value is None else str(value)
            rows[(c.label, METRIC_LABELS[metric])] = row
    table = pd.DataFrame.from_dict(rows, orient='index')
    table.index = pd.MultiIndex.from_tuples(table.index, names=['class', 'metric'])
    return reports, table
