# test_artifact_service.py
import json
import os

import pandas as pd
import pytest

from artifact_service import ArtifactService, content_hash
from config import SCHEMA_VERSION, TOOL_VERSION
from errors import ArtifactIOError


@pytest.fixture
def artifacts(tmp_path):
    return ArtifactService(str(tmp_path / 'out'), 'abc123')


def test_json_documents_are_stamped(artifacts):
    artifacts.write_json('scenes/scene_00000.json', 'scene', {'targets': [1, 2]})
    with open(artifacts.path('scenes/scene_00000.json')) as f:
        document = json.load(f)
    assert document['schema_version'] == SCHEMA_VERSION
    assert document['tool_version'] == TOOL_VERSION
    assert document['config_hash'] == 'abc123'
    assert document['kind'] == 'scene'
    assert document['created_at'].endswith('+00:00')
    assert artifacts.read_json('scenes/scene_00000.json', 'scene') == {'targets': [1, 2]}


def test_content_hash_skips_volatile_keys(artifacts):
    first = artifacts.write_json('a.json', 'scan', {'points': 3, 'runtime': {'raycast_s': 0.5}})
    second = artifacts.write_json('b.json', 'scan', {'points': 3, 'runtime': {'raycast_s': 0.9}})
    assert first == second
    assert first != artifacts.write_json('c.json', 'scan', {'points': 4})
    assert content_hash({'kind': 'x', 'created_at': '1'}) == content_hash({'kind': 'x', 'created_at': '2'})


def test_read_json_checks_kind_and_schema(artifacts):
    artifacts.write_json('doc.json', 'scene', {})
    with pytest.raises(ArtifactIOError):
        artifacts.read_json('doc.json', 'scan')
    with open(artifacts.path('doc.json')) as f:
        document = json.load(f)
    document['schema_version'] = SCHEMA_VERSION + 1
    artifacts.write_text('doc.json', json.dumps(document))
    with pytest.raises(ArtifactIOError):
        artifacts.read_json('doc.json')
    artifacts.write_text('bad.json', '{')
    with pytest.raises(ArtifactIOError):
        artifacts.read_json('bad.json')
    with pytest.raises(ArtifactIOError):
        artifacts.read_json('missing.json')


def test_foreign_config_is_only_a_warning(artifacts, tmp_path):
    artifacts.write_json('doc.json', 'scene', {'x': 1})
    other = ArtifactService(artifacts.out_dir, 'different')
    assert other.read_json('doc.json', 'scene') == {'x': 1}


def test_writes_are_atomic_and_leave_no_temp_files(artifacts):
    digest = artifacts.write_bytes('scans/cloud.pdc', b'\x00\x01')
    assert len(digest) == 64
    assert artifacts.read_bytes('scans/cloud.pdc') == b'\x00\x01'
    artifacts.write_csv('bench/timings.csv', pd.DataFrame({'count': [1, 2], 'ms': [0.5, 0.25]}))
    assert artifacts.exists('bench/timings.csv')
    assert open(artifacts.path('bench/timings.csv')).read().splitlines()[0] == 'count,ms'
    leftovers = [name for _, _, files in os.walk(artifacts.out_dir) for name in files if name.startswith('.tmp-')]
    assert leftovers == []


def test_unwritable_directory_is_an_artifact_error(tmp_path):
    blocker = tmp_path / 'blocker'
    blocker.write_text('file, not a directory')
    artifacts = ArtifactService(str(blocker), 'abc')
    with pytest.raises(ArtifactIOError):
        artifacts.write_text('x.txt', 'hello')
