# config.py
"""
Pipeline configuration: one pydantic model per section, unknown keys rejected.

Values come from (lowest to highest precedence) the model defaults, a JSON
config file, PARAMDET_* environment variables (a .env file is honored) and
CLI flags.
"""
import hashlib
import json
import logging
import os
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError

logger = logging.getLogger(__name__)

TOOL_VERSION = '1.0.0'
SCHEMA_VERSION = 1

# Corners and mid-edges of the truck bed (world xy, meters)
DEFAULT_POINTS_OF_INTEREST = [
    (-0.6, -1.2), (-0.6, 1.2), (-6.6, -1.2), (-6.6, 1.2),
    (-3.6, -1.2), (-3.6, 1.2), (-0.6, 0.0), (-6.6, 0.0),
]

Range = Tuple[float, float]


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


def _check_range(name: str, value: Range) -> Range:
    lo, hi = value
    if lo < 0 or hi < lo:
        raise ValueError(f"{name} must be a non-empty, non-negative range, got {value}")
    return value


class SceneConfig(_Section):
    forklift_radius_range: Range = (5.0, 16.0)
    gripper_radius_range: Range = (3.5, 8.0)
    gripper_height_range: Range = (0.5, 4.5)
    gripper_tilt_max_deg: float = 10.0
    opening_range: Range = (0.0, 90.0)
    pallet_min_clearance: float = 1.5
    vegetation_min_spacing: float = 1.0
    stack_max: int = 2
    stack_probability: float = 0.25
    box_probability: float = 0.2
    wall_count_range: Tuple[int, int] = (0, 3)
    wall_radius_range: Range = (12.0, 22.0)
    pallet_count_max: int = 10
    pallet_region_radius: float = 18.0
    pallet_base_spacing: float = 2.0
    tree_count_max: int = 8
    bush_count_max: int = 10
    vegetation_region_radius: float = 24.0
    perlin_octaves: int = 3
    perlin_persistence: float = 0.5
    perlin_frequency: float = 0.08
    perlin_amplitude: float = 1.0
    mast_height_range: Range = (1.8, 3.5)
    sensor_pitch_range_deg: Tuple[float, float] = (-2.0, 8.0)
    points_of_interest: List[Tuple[float, float]] = Field(default_factory=lambda: list(DEFAULT_POINTS_OF_INTEREST))
    occluder_probability: float = 0.0
    pallet_cylinder_probability: float = 0.0
    max_retries: int = 200
    rng_seed: int = Field(0, ge=0)

    @field_validator('forklift_radius_range', 'gripper_radius_range', 'gripper_height_range',
                     'opening_range', 'wall_radius_range', 'mast_height_range')
    @classmethod
    def _ranges(cls, value, info):
        return _check_range(info.field_name, value)

    @field_validator('wall_count_range')
    @classmethod
    def _int_range(cls, value):
        lo, hi = value
        if lo < 0 or hi < lo:
            raise ValueError(f"wall_count_range must be a non-empty, non-negative range, got {value}")
        return value

    @field_validator('pallet_min_clearance', 'vegetation_min_spacing', 'pallet_base_spacing')
    @classmethod
    def _positive(cls, value, info):
        if value <= 0:
            raise ValueError(f"{info.field_name} must be positive")
        return value

    @field_validator('stack_probability', 'box_probability', 'occluder_probability',
                     'pallet_cylinder_probability')
    @classmethod
    def _probability(cls, value, info):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{info.field_name} must lie in [0, 1]")
        return value

    @model_validator(mode='after')
    def _counts(self):
        if self.stack_max < 1 or self.max_retries < 1:
            raise ValueError("stack_max and max_retries must be at least 1")
        if len(self.points_of_interest) == 0:
            raise ValueError("points_of_interest must not be empty")
        return self


class LidarConfig(_Section):
    ray_table: Optional[str] = None
    # full scale: 400000+; desk scale keeps most clouds under the FPS budget
    ray_count: int = 30000
    fov_deg: float = 70.4
    max_range: float = 25.0
    budget: int = 32768
    cull_thresholds: Dict[str, int] = Field(default_factory=lambda: {
        'gripper': 50, 'loading_platform': 80, 'pallet': 30})
    # full scale: 50000, 200000, 400000
    accumulation_counts: List[int] = Field(default_factory=lambda: [5000, 20000, 40000])

    @model_validator(mode='after')
    def _check(self):
        if self.max_range <= 0 or self.budget < 1 or self.ray_count < 1:
            raise ValueError("max_range, budget and ray_count must be positive")
        unknown = set(self.cull_thresholds) - {'gripper', 'loading_platform', 'pallet'}
        if unknown:
            raise ValueError(f"Unknown classes in cull_thresholds: {sorted(unknown)}")
        if not self.accumulation_counts or min(self.accumulation_counts) < 1:
            raise ValueError("accumulation_counts needs at least one positive count")
        return self


class AugmentConfig(_Section):
    enabled: bool = False
    tilt_max_deg: float = 5.0
    noise_probability: float = 1.0 / 3.0
    noise_sigma_max: float = 0.04


class StubConfig(_Section):
    position_sigma: float = 0.0
    rotation_sigma_deg: float = 0.0
    opening_sigma_deg: float = 0.0
    class_confusion_rate: float = 0.0
    false_positive_rate: float = 0.0
    miss_rate: float = 0.0
    confidence_model: Literal['oracle', 'noise_coupled'] = 'oracle'
    queries: int = 128
    seed: int = Field(0, ge=0)

    @model_validator(mode='after')
    def _check(self):
        for name in ('class_confusion_rate', 'false_positive_rate', 'miss_rate'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ('position_sigma', 'rotation_sigma_deg', 'opening_sigma_deg'):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.queries < 1:
            raise ValueError("queries must be at least 1")
        return self


class EvalConfig(_Section):
    cd_threshold: float = 0.00125
    ap_integration: Literal['all_point'] = 'all_point'
    score_mode: Literal['softmax', 'no_object_suppressed'] = 'softmax'
    split: Literal['all', 'train', 'test', 'val'] = 'all'

    @field_validator('cd_threshold')
    @classmethod
    def _threshold(cls, value):
        if value <= 0:
            raise ValueError("cd_threshold must be positive")
        return value


class LossConfig(_Section):
    class_weights: Optional[List[float]] = None

    @field_validator('class_weights')
    @classmethod
    def _weights(cls, value):
        if value is not None and (len(value) != 4 or min(value) < 0):
            raise ValueError("class_weights needs 4 non-negative entries (no-object, gripper, platform, pallet)")
        return value


class PathsConfig(_Section):
    mesh_dir: Optional[str] = None
    out_dir: str = 'runs/default'


class PipelineConfig(_Section):
    seed: int = Field(0, ge=0)
    workers: int = 0
    scene_count: int = Field(50, ge=0)
    split_ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    lidar: LidarConfig = Field(default_factory=LidarConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    stub: StubConfig = Field(default_factory=StubConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @property
    def worker_count(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)


ENV_OVERRIDES = {
    'PARAMDET_SEED': ('seed', int),
    'PARAMDET_WORKERS': ('workers', int),
    'PARAMDET_OUT_DIR': ('paths.out_dir', str),
    'PARAMDET_MESH_DIR': ('paths.mesh_dir', str),
}


def _set_dotted(data: Dict, dotted: str, value):
    keys = dotted.split('.')
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def load_config(path: Optional[str] = None, overrides: Optional[Dict] = None) -> PipelineConfig:
    """
    Build the pipeline config.

    Args:
        path: JSON config file, optional
        overrides: dotted-key values (e.g. {'lidar.budget': 4096}) applied last

    Raises:
        ConfigError on unreadable files, unknown keys or invalid values
    """
    data: Dict = {}
    if path:
        try:
            with open(path) as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {str(e)}")
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")

    for env_name, (dotted, cast) in ENV_OVERRIDES.items():
        raw = os.getenv(env_name)
        if raw:
            try:
                _set_dotted(data, dotted, cast(raw))
            except ValueError:
                raise ConfigError(f"{env_name}={raw!r} is not a valid {cast.__name__}")
            logger.info(f"🔧 {env_name} overrides {dotted}")

    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, dotted, value)

    try:
        config = PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {str(e)}")
    # the scene sampler follows the global seed unless the scene section pins its own
    if 'rng_seed' not in data.get('scene', {}):
        config = config.model_copy(update={'scene': config.scene.model_copy(update={'rng_seed': config.seed})})
    return config


def config_hash(config: PipelineConfig) -> str:
    """SHA-256 of the canonical JSON dump without `workers` and `paths.out_dir`, which do not change outputs"""
    dump = config.model_dump(mode='json', exclude={'workers': True, 'paths': {'out_dir'}})
    canonical = json.dumps(dump, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
