# pipeline_service.py
"""
Stage orchestration: gen-scenes -> scan -> predict-stub -> eval, plus the
accumulation benchmark. Every stage reads only the serialized artifacts of
the stage before it, so any stage can be rerun on its own.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from artifact_service import ArtifactService
from config import PipelineConfig, config_hash
from detector_stub import stub_predict
from errors import DegenerateExtent, EmptyAfterFilter, EmptyDataset, InvariantViolation
from evaluation_service import (EvalReport, SceneEval, accumulation_study, build_report, check_matching,
                                match_for_eval)
from lidar_service import (Frame, RayTable, ScanCloud, accumulate_rays, add_point_noise, cull_occluded_targets,
                           decode_cloud, encode_cloud, fps_reduce, generate_livox_pattern, hit_counts,
                           load_ray_table, preprocess_ingested, quantize_cloud, random_tilt, raycast_scan,
                           targets_to_sensor_frame, to_ros_frame, to_sensor_frame)
from matching_service import (Prediction, class_counts, class_weights, hungarian_assign, match_cost_matrix,
                              scene_loss)
from mesh_service import MeshService, ObjectClass, ParamTarget, ScaleRecord, normalize_frame
from scene_service import SceneInstance, build_scene, clearance_violations, dataset_split

logger = logging.getLogger(__name__)

SCENES_DIR = 'scenes'
SCANS_DIR = 'scans'
PREDICTIONS_DIR = 'predictions'
EVAL_DIR = 'eval'
BENCH_DIR = 'bench'
SCENE_INDEX = f'{SCENES_DIR}/index.json'
BENCH_SCENES_DEFAULT = 3


def scene_name(index: int) -> str:
    return f"scene_{index:05d}"


def scene_seed(seed: int, index: int) -> int:
    """Private per-scene stream seed derived from (global seed, scene index)"""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class Capture:
    """Raw simulated sensor-frame scan of one scene before preprocessing"""

    scene: int
    cloud: ScanCloud
    targets: List[ParamTarget]
    raycast_seconds: float


class PipelineService:
    """Service running the pipeline stages against one output directory"""

    def __init__(self, config: PipelineConfig, meshes: Optional[MeshService] = None):
        self.config = config
        self.meshes = meshes or MeshService(config.paths.mesh_dir)
        self.config_hash = config_hash(config)
        self.artifacts = ArtifactService(config.paths.out_dir, self.config_hash)
        self.thresholds = {ObjectClass[name.upper()]: value
                           for name, value in config.lidar.cull_thresholds.items()}

    # --- helpers ---------------------------------------------------------------

    def _map_scenes(self, fn: Callable, items: Sequence, desc: str) -> List:
        """Run `fn` over items on the worker pool; results come back in input order"""
        items = list(items)
        if not items:
            return []

        def guarded(item):
            try:
                return fn(item)
            except Exception as e:
                logger.error(f"❌ {desc} failed on {item if not isinstance(item, dict) else item.get('scene')}: "
                             f"{str(e)}")
                raise

        workers = min(self.config.worker_count, len(items))
        if workers <= 1:
            return [guarded(item) for item in tqdm(items, desc=desc, leave=False)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(tqdm(pool.map(guarded, items), total=len(items), desc=desc, leave=False))

    def _scene_index(self) -> Dict:
        return self.artifacts.read_json(SCENE_INDEX, 'scene_index')

    def _ray_table(self) -> Optional[RayTable]:
        if self.config.lidar.ray_table:
            return load_ray_table(self.config.lidar.ray_table)
        return None

    def _load_scene(self, entry: Dict) -> SceneInstance:
        return SceneInstance.from_manifest(self.artifacts.read_json(entry['file'], 'scene'), self.meshes)

    def _normalize(self, cloud: ScanCloud, targets: List[ParamTarget], scene: int):
        alpha_max = self.meshes.alpha_max_deg
        if len(cloud) == 0:
            return replace(cloud, normalized=True, scale=ScaleRecord.identity(alpha_max)), [], \
                ScaleRecord.identity(alpha_max)
        try:
            normalized_targets, points, record = normalize_frame(cloud.extent(), targets, cloud.points, alpha_max)
        except DegenerateExtent as e:
            logger.warning(f"⚠️ Scene {scene}: {str(e)}, keeping metric units")
            record = ScaleRecord.identity(alpha_max)
            normalized_targets, points = [record.normalize_target(t) for t in targets], cloud.points
        return replace(cloud, points=points, normalized=True, scale=record), normalized_targets, record

    # --- stages ----------------------------------------------------------------

    def gen_scenes(self, count: Optional[int] = None) -> Dict:
        config = self.config
        count = config.scene_count if count is None else count
        mesh_hash = self.meshes.content_hash()
        logger.info(f"🚀 Generating {count} scenes (seed {config.scene.rng_seed})")

        def build(index: int) -> Dict:
            instance = build_scene(config.scene, self.meshes, index)
            violations = clearance_violations(instance.placements, config.scene)
            if violations:
                raise InvariantViolation(f"Scene {index} breaks clearance rules: {violations[0]}")
            relative = f"{SCENES_DIR}/{scene_name(index)}.json"
            digest = self.artifacts.write_json(relative, 'scene', instance.to_manifest(mesh_hash))
            return {'scene': index, 'file': relative, 'hash': digest, 'targets': len(instance.targets)}

        entries = self._map_scenes(build, range(count), 'gen-scenes')
        index = {
            'count': count,
            'mesh_dir': config.paths.mesh_dir,
            'mesh_hash': mesh_hash,
            'scenes': entries,
            'split': dataset_split(range(count), config.split_ratios, config.seed),
        }
        self.artifacts.write_json(SCENE_INDEX, 'scene_index', index)
        logger.info(f"✅ Wrote {count} scenes to {self.artifacts.path(SCENES_DIR)}")
        return index

    def scan(self) -> List[Dict]:
        config, lidar = self.config, self.config.lidar
        table = self._ray_table()
        entries = self._scene_index()['scenes']
        logger.info(f"🚀 Scanning {len(entries)} scenes (budget {lidar.budget}, range {lidar.max_range} m)")

        def scan_one(entry: Dict) -> Dict:
            index = entry['scene']
            seed = scene_seed(config.seed, index)
            instance = self._load_scene(entry)
            rays = table or generate_livox_pattern(lidar.ray_count, lidar.fov_deg, seed=seed)

            started = time.perf_counter()
            world = raycast_scan(instance.geometry, rays, lidar.max_range)
            raycast_seconds = time.perf_counter() - started
            cloud = quantize_cloud(to_sensor_frame(world, instance.sensor_pose))
            started = time.perf_counter()
            cloud = fps_reduce(cloud, lidar.budget, seed)
            fps_seconds = time.perf_counter() - started
            if len(cloud) > lidar.budget:
                raise InvariantViolation(f"Scene {index}: {len(cloud)} points exceed the budget {lidar.budget}")

            targets = targets_to_sensor_frame(instance.targets, instance.sensor_pose)
            kept = cull_occluded_targets(targets, cloud, self.thresholds)
            normalized, normalized_targets, record = self._normalize(cloud, kept, index)

            augmentation = None
            if config.augment.enabled and len(normalized):
                normalized, normalized_targets, tilt = random_tilt(normalized, normalized_targets,
                                                                   config.augment.tilt_max_deg, seed)
                normalized = add_point_noise(normalized, config.augment.noise_probability, seed + 1,
                                             sigma_max=config.augment.noise_sigma_max)
                augmentation = {'tilt': tilt.as_array().tolist(), 'noise_seed': seed + 1}

            name = scene_name(index)
            cloud_file = f"{SCANS_DIR}/{name}.pdc"
            cloud_digest = self.artifacts.write_bytes(cloud_file, encode_cloud(normalized))
            payload = {
                'scene': index,
                'cloud_file': cloud_file,
                'cloud_sha256': cloud_digest,
                'points': len(normalized),
                'scale': record.to_dict(),
                'sensor_pose': instance.sensor_pose.to_dict(),
                'targets': [t.to_dict() for t in normalized_targets],
                'culled': [t.instance_id for t in targets if t not in kept],
                'hit_counts': {str(k): v for k, v in sorted(hit_counts(cloud).items())},
                'augmentation': augmentation,
                'runtime': {'raycast_s': raycast_seconds, 'fps_s': fps_seconds},
            }
            self.artifacts.write_json(f"{SCANS_DIR}/{name}.json", 'scan', payload)
            return {'scene': index, 'points': len(normalized), 'targets': len(normalized_targets)}

        results = self._map_scenes(scan_one, entries, 'scan')
        logger.info(f"✅ Scanned {len(results)} scenes")
        return results

    def _load_scan(self, index: int):
        payload = self.artifacts.read_json(f"{SCANS_DIR}/{scene_name(index)}.json", 'scan')
        cloud = decode_cloud(self.artifacts.read_bytes(payload['cloud_file']), Frame.SENSOR_BLENDER)
        targets = [ParamTarget.from_dict(t) for t in payload['targets']]
        return payload, cloud, targets, ScaleRecord.from_dict(payload['scale'])

    def predict_stub(self) -> List[Dict]:
        config = self.config
        entries = self._scene_index()['scenes']
        logger.info(f"🚀 Stub predictions for {len(entries)} scenes ({config.stub.confidence_model})")

        def predict_one(entry: Dict) -> Dict:
            index = entry['scene']
            _, cloud, targets, record = self._load_scan(index)
            predictions = stub_predict(targets, config.stub, cloud.points, index, record.alpha_max_deg)
            payload = {'scene': index, 'queries': len(predictions),
                       'predictions': [p.to_dict() for p in predictions]}
            self.artifacts.write_json(f"{PREDICTIONS_DIR}/{scene_name(index)}.json", 'predictions', payload)
            return {'scene': index, 'detections': sum(1 for p in predictions if p.is_detection)}

        results = self._map_scenes(predict_one, entries, 'predict-stub')
        logger.info(f"✅ Wrote predictions for {len(results)} scenes")
        return results

    def _class_weights(self, target_sets: List[List[ParamTarget]]) -> np.ndarray:
        if self.config.loss.class_weights is not None:
            return np.asarray(self.config.loss.class_weights, dtype=float)
        try:
            return class_weights(class_counts(target_sets, self.config.stub.queries))
        except EmptyDataset as e:
            logger.warning(f"⚠️ {str(e)}; using unit class weights")
            return np.ones(4)

    def _evaluate_scene(self, index: int, predictions: List[Prediction], targets: List[ParamTarget],
                        record: ScaleRecord, weights: np.ndarray) -> Tuple[SceneEval, Dict]:
        started = time.perf_counter()
        cost = match_cost_matrix(predictions, targets)
        match = hungarian_assign(cost)
        mean_loss, per_pair = scene_loss(predictions, targets, match, weights, self.meshes, record)
        match_seconds = time.perf_counter() - started

        started = time.perf_counter()
        scene_eval = match_for_eval(predictions, targets, self.meshes, self.config.eval, record, index)
        check_matching(scene_eval, targets)
        scene_eval.timings = {'match': match_seconds, 'eval': time.perf_counter() - started}

        report = {
            'scene': index,
            'hungarian': match.to_dict(),
            'loss': mean_loss.to_dict(),
            'pair_losses': [{'target': i, 'prediction': j, **per_pair[j].to_dict()}
                            for i, j in enumerate(match.assignment)],
            'eval': scene_eval.to_dict(),
        }
        return scene_eval, report

    def evaluate(self) -> EvalReport:
        config = self.config
        index = self._scene_index()
        selected = set(range(index['count'])) if config.eval.split == 'all' else set(index['split'][config.eval.split])
        entries = [e for e in index['scenes'] if e['scene'] in selected]
        logger.info(f"🚀 Evaluating {len(entries)} scenes (split {config.eval.split})")

        def load(entry: Dict):
            scene = entry['scene']
            _, _, targets, record = self._load_scan(scene)
            payload = self.artifacts.read_json(f"{PREDICTIONS_DIR}/{scene_name(scene)}.json", 'predictions')
            return scene, [Prediction.from_dict(p) for p in payload['predictions']], targets, record

        loaded = self._map_scenes(load, entries, 'load')
        weights = self._class_weights([targets for _, _, targets, _ in loaded])

        def evaluate_one(item) -> SceneEval:
            scene, predictions, targets, record = item
            scene_eval, report = self._evaluate_scene(scene, predictions, targets, record, weights)
            self.artifacts.write_json(f"{EVAL_DIR}/matches/{scene_name(scene)}.json", 'match_report', report)
            return scene_eval

        scene_evals = self._map_scenes(evaluate_one, loaded, 'eval')
        report = build_report(scene_evals)
        payload = report.to_dict()
        payload.update({'scenes': len(scene_evals), 'split': config.eval.split,
                        'class_weights': [float(w) for w in weights]})
        self.artifacts.write_json(f"{EVAL_DIR}/report.json", 'eval_report', payload)
        self.artifacts.write_text(f"{EVAL_DIR}/report.txt", report.render())
        self.artifacts.write_csv(f"{EVAL_DIR}/pair_errors.csv", report.pair_errors)
        map_text = 'n/a' if report.mean_ap is None else f"{report.mean_ap:.3f}"
        logger.info(f"✅ mAP = {map_text} over {len(scene_evals)} scenes")
        return report

    # --- accumulation benchmark ------------------------------------------------

    def _capture(self, index: int, instance: SceneInstance, rays: RayTable) -> Capture:
        started = time.perf_counter()
        world = raycast_scan(instance.geometry, rays, self.config.lidar.max_range)
        seconds = time.perf_counter() - started
        cloud = quantize_cloud(to_ros_frame(to_sensor_frame(world, instance.sensor_pose)))
        return Capture(index, cloud, targets_to_sensor_frame(instance.targets, instance.sensor_pose), seconds)

    def _evaluate_capture(self, capture: Capture) -> SceneEval:
        config = self.config
        seed = scene_seed(config.seed, capture.scene)
        timings = {'raycast': capture.raycast_seconds}

        started = time.perf_counter()
        try:
            cloud = preprocess_ingested(capture.cloud, max(len(capture.cloud), 1), config.lidar.max_range, seed)
        except EmptyAfterFilter:
            cloud = capture.cloud.subset(np.zeros(0, dtype=np.int64))
        timings['preprocess'] = time.perf_counter() - started

        started = time.perf_counter()
        if len(cloud):
            cloud = fps_reduce(cloud, config.lidar.budget, seed)
        timings['fps'] = time.perf_counter() - started

        kept = cull_occluded_targets(capture.targets, cloud, self.thresholds) if len(cloud) else []
        normalized, targets, record = self._normalize(cloud, kept, capture.scene)

        started = time.perf_counter()
        predictions = stub_predict(targets, config.stub, normalized.points, capture.scene, record.alpha_max_deg)
        timings['stub'] = time.perf_counter() - started

        weights = np.asarray(config.loss.class_weights) if config.loss.class_weights else np.ones(4)
        scene_eval, _ = self._evaluate_scene(capture.scene, predictions, targets, record, weights)
        scene_eval.timings = {**timings, **scene_eval.timings}
        return scene_eval

    def bench(self, count: Optional[int] = None) -> pd.DataFrame:
        lidar = self.config.lidar
        index = self._scene_index()
        count = min(BENCH_SCENES_DEFAULT if count is None else count, index['count'])
        counts = sorted(lidar.accumulation_counts)
        table = self._ray_table() or generate_livox_pattern(counts[-1], lidar.fov_deg, seed=self.config.seed)
        if len(table) < counts[-1]:
            logger.warning(f"⚠️ Ray table holds {len(table)} rays, capping the accumulation counts")
        logger.info(f"🚀 Benchmarking {count} scenes at {counts} points")

        instances = [self._load_scene(entry) for entry in index['scenes'][:count]]
        captures = {}
        for n in counts:
            rays = accumulate_rays(table, n)
            captures[n] = self._map_scenes(lambda item: self._capture(item[0], item[1], rays),
                                           list(enumerate(instances)), f'capture-{n}')
        reports, accumulation = accumulation_study(captures, self._evaluate_capture)

        rows = []
        for n, report in reports.items():
            for stage, stats in report.runtime.items():
                rows.append({'points': n, 'stage': stage, 'mean_ms': stats.mean, 'std_ms': stats.std})
        timings = pd.DataFrame(rows, columns=['points', 'stage', 'mean_ms', 'std_ms'])
        self.artifacts.write_csv(f"{BENCH_DIR}/timings.csv", timings)
        self.artifacts.write_csv(f"{BENCH_DIR}/accumulation.csv", accumulation, index=True)
        self.artifacts.write_text(f"{BENCH_DIR}/accumulation.txt", accumulation.to_string() + "\n")
        logger.info(f"✅ Benchmark written to {self.artifacts.path(BENCH_DIR)}")
        return timings

    def run_all(self, count: Optional[int] = None) -> EvalReport:
        self.gen_scenes(count)
        self.scan()
        self.predict_stub()
        return self.evaluate()


def cmd_gen_scenes(config: PipelineConfig, count: Optional[int] = None) -> Dict:
    return PipelineService(config).gen_scenes(count)


def cmd_scan(config: PipelineConfig) -> List[Dict]:
    return PipelineService(config).scan()


def cmd_predict_stub(config: PipelineConfig) -> List[Dict]:
    return PipelineService(config).predict_stub()


def cmd_eval(config: PipelineConfig) -> EvalReport:
    return PipelineService(config).evaluate()


def cmd_bench(config: PipelineConfig, count: Optional[int] = None) -> pd.DataFrame:
    return PipelineService(config).bench(count)


def run_all(config: PipelineConfig, count: Optional[int] = None) -> EvalReport:
    return PipelineService(config).run_all(count)
