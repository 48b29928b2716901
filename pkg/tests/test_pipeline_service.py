# test_pipeline_service.py
import json
import os
from typing import List

import pandas as pd
import pytest

from artifact_service import content_hash
from config import load_config
from errors import InvariantViolation
from lidar_service import Frame, decode_cloud
from mesh_service import OBJECT_CLASSES, ObjectClass
from pipeline_service import PipelineService, scene_name, scene_seed

pytestmark = pytest.mark.slow


def _scan_payload(service: PipelineService, index: int) -> dict:
    return service.artifacts.read_json(f"scans/{scene_name(index)}.json", 'scan')


def test_scene_seeds_are_private_per_scene():
    assert scene_seed(3, 0) == scene_seed(3, 0)
    assert scene_seed(3, 0) != scene_seed(3, 1)
    assert scene_seed(3, 0) != scene_seed(4, 0)
    assert scene_name(42) == 'scene_00042'


def _full_rays_config(tmp_path, name: str, scene_count: int):
    return load_config(overrides={'seed': 3, 'workers': 1, 'scene_count': scene_count,
                                  'paths.out_dir': str(tmp_path / name)})


def _assert_perfect(report):
    for c in OBJECT_CLASSES:
        counts = report.counts[c]
        assert counts['gt'] > 0, c.label
        assert counts['tp'] == counts['gt']
        assert counts['fp'] == 0
        assert report.ap[c] == 1.0
        stats = report.stats[c]
        assert stats['l2_m'].mean == pytest.approx(0.0, abs=1e-9)
        for metric in ('geodesic_deg', 'yaw_deg'):
            assert stats[metric].mean == pytest.approx(0.0, abs=1e-6)
        if c is ObjectClass.GRIPPER:
            assert stats['opening_deg'].mean == pytest.approx(0.0, abs=1e-6)
    assert report.mean_ap == 1.0


def test_noiseless_run_scores_perfectly(tmp_path, clean_env, meshes):
    service = PipelineService(_full_rays_config(tmp_path, 'run', 16), meshes)
    _assert_perfect(service.run_all())

    for name in ('report.json', 'report.txt', 'pair_errors.csv'):
        assert service.artifacts.exists(f"eval/{name}")
    assert service.artifacts.read_json('eval/report.json', 'eval_report')['scenes'] == 16
    match = service.artifacts.read_json(f"eval/matches/{scene_name(0)}.json", 'match_report')
    assert set(match) >= {'hungarian', 'loss', 'pair_losses', 'eval'}


def test_noiseless_run_scores_perfectly_on_fifty_scenes(tmp_path, clean_env, meshes):
    _assert_perfect(PipelineService(_full_rays_config(tmp_path, 'run', 50), meshes).run_all())


def _artifact_files(out_dir) -> List[str]:
    return sorted(os.path.relpath(os.path.join(root, name), out_dir)
                  for root, _, files in os.walk(out_dir) for name in files)


def test_run_all_twice_gives_identical_artifacts(desk_config, meshes, tmp_path):
    noisy = desk_config.model_copy(update={'stub': desk_config.stub.model_copy(update={
        'position_sigma': 0.01, 'rotation_sigma_deg': 5.0, 'false_positive_rate': 0.5})})
    first = PipelineService(noisy, meshes)
    first.run_all()
    second = PipelineService(noisy.model_copy(update={
        'workers': 3, 'paths': noisy.paths.model_copy(update={'out_dir': str(tmp_path / 'again')})}), meshes)
    second.run_all()
    assert first.config_hash == second.config_hash

    files = _artifact_files(first.artifacts.out_dir)
    assert files == _artifact_files(second.artifacts.out_dir)
    assert {'scenes/index.json', 'eval/report.json', 'eval/pair_errors.csv'} <= set(files)
    assert any(f.startswith('predictions/') for f in files)
    assert any(f.startswith('eval/matches/') for f in files)
    for relative in files:
        if relative.endswith('.json'):
            with open(first.artifacts.path(relative)) as a, open(second.artifacts.path(relative)) as b:
                assert content_hash(json.load(a)) == content_hash(json.load(b)), relative
        elif relative.endswith('report.txt'):
            # runtime lines follow the table
            table = first.artifacts.read_bytes(relative).decode('utf-8').split('\n\n')[0]
            assert second.artifacts.read_bytes(relative).decode('utf-8').split('\n\n')[0] == table
        else:
            assert first.artifacts.read_bytes(relative) == second.artifacts.read_bytes(relative), relative


def test_scans_respect_budget_and_normalization(desk_config, meshes):
    service = PipelineService(desk_config, meshes)
    service.gen_scenes()
    service.scan()
    for index in range(4):
        payload = _scan_payload(service, index)
        cloud = decode_cloud(service.artifacts.read_bytes(payload['cloud_file']), Frame.SENSOR_BLENDER)
        assert len(cloud) == payload['points'] <= desk_config.lidar.budget
        if len(cloud):
            assert abs(cloud.points).max() <= 1.0 + 1e-6
        assert payload['runtime']['raycast_s'] >= 0.0
        kept_ids = {t['instance_id'] for t in payload['targets']}
        assert not kept_ids & set(payload['culled'])


def test_stages_are_deterministic(desk_config, meshes, tmp_path):
    first = PipelineService(desk_config, meshes)
    index = first.gen_scenes()
    first.scan()
    digests = [_scan_payload(first, i)['cloud_sha256'] for i in range(4)]

    assert [e['hash'] for e in first.gen_scenes()['scenes']] == [e['hash'] for e in index['scenes']]

    threaded = desk_config.model_copy(update={
        'workers': 3, 'paths': desk_config.paths.model_copy(update={'out_dir': str(tmp_path / 'threaded')})})
    second = PipelineService(threaded, meshes)
    second.gen_scenes()
    second.scan()
    assert [_scan_payload(second, i)['cloud_sha256'] for i in range(4)] == digests
    for i in range(4):
        assert (second.artifacts.read_json(f"scenes/{scene_name(i)}.json", 'scene')
                == first.artifacts.read_json(f"scenes/{scene_name(i)}.json", 'scene'))


def test_zero_scenes_make_an_empty_run(desk_config, meshes):
    service = PipelineService(desk_config, meshes)
    index = service.gen_scenes(0)
    assert index['count'] == 0
    assert index['scenes'] == []
    assert index['split'] == {'train': [], 'test': [], 'val': []}
    assert service.scan() == []
    assert service.predict_stub() == []
    assert service.evaluate().mean_ap is None


def test_index_records_split_and_mesh_hash(desk_config, meshes):
    service = PipelineService(desk_config, meshes)
    index = service.gen_scenes()
    assert index['mesh_hash'] == meshes.content_hash()
    split = index['split']
    assert sorted(split['train'] + split['test'] + split['val']) == [0, 1, 2, 3]
    with open(service.artifacts.path('scenes/index.json')) as f:
        assert json.load(f)['kind'] == 'scene_index'


def test_clearance_breach_is_an_invariant_violation(desk_config, meshes, monkeypatch):
    import pipeline_service
    monkeypatch.setattr(pipeline_service, 'clearance_violations', lambda placements, config: ['pallet 1 too close'])
    with pytest.raises(InvariantViolation):
        PipelineService(desk_config, meshes).gen_scenes(1)


def test_bench_writes_timings_and_accumulation_table(desk_config, meshes):
    service = PipelineService(desk_config, meshes)
    service.gen_scenes(2)
    timings = service.bench(2)
    assert list(timings.columns) == ['points', 'stage', 'mean_ms', 'std_ms']
    assert set(timings['points']) <= {1500, 3000, 6000}
    assert {'raycast', 'preprocess', 'fps', 'stub', 'match', 'eval'} <= set(timings['stage'])
    assert (timings['mean_ms'] >= 0).all()
    accumulation = pd.read_csv(service.artifacts.path('bench/accumulation.csv'), index_col=[0, 1])
    assert [int(c) for c in accumulation.columns] == [1500, 3000, 6000]
    assert len(accumulation) == len(OBJECT_CLASSES) * 5
    assert service.artifacts.exists('bench/accumulation.txt')
