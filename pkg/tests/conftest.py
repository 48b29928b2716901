# conftest.py
import numpy as np
import pytest

from config import ENV_OVERRIDES, PipelineConfig, load_config
from geometry_core import Pose, UnitQuaternion
from mesh_service import MeshService, ObjectClass, ParamTarget


@pytest.fixture(scope='session')
def meshes():
    return MeshService()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def clean_env(monkeypatch):
    for name in ENV_OVERRIDES:
        monkeypatch.delenv(name, raising=False)
    return monkeypatch


@pytest.fixture
def desk_config(tmp_path, clean_env) -> PipelineConfig:
    """Small, fast pipeline config writing below tmp_path"""
    return load_config(overrides={
        'seed': 3,
        'workers': 1,
        'scene_count': 4,
        'paths.out_dir': str(tmp_path / 'run'),
        'lidar.ray_count': 6000,
        'lidar.budget': 4096,
        'lidar.accumulation_counts': [1500, 3000, 6000],
        'stub.queries': 64,
    })


def make_target(object_class: ObjectClass, position=(0.0, 0.0, 0.0), yaw_deg: float = 0.0,
                opening=None, normalized: bool = True, instance_id=None) -> ParamTarget:
    if object_class is ObjectClass.GRIPPER and opening is None:
        opening = 0.0 if normalized else 45.0
    orientation = UnitQuaternion.from_yaw(np.radians(yaw_deg))
    return ParamTarget(object_class, Pose(tuple(position), orientation, normalized), opening, instance_id)
