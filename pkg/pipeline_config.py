"""YAML pipeline configuration (paths, board, cameras, tuning, annotation, synth)."""

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional
import yaml

from board import BoardSpec
from calib import TuningGrid
from config import (DEFAULT_WORKERS, DEPTH_SCALE, FRAME_RATE_FPS, IMAGE_HEIGHT, IMAGE_WIDTH,
                    IOU_THRESHOLD, MIN_VISIBLE_PIXELS, MOCAP_JITTER_DEG, MOCAP_JITTER_MM,
                    MOCK_DEPTH_DISTANCE_MM, RIG_CAMERA_COUNT, SYNC_WINDOW_S)
from errors import ConfigError, IoError, ParseError
from geometry import CameraIntrinsics
from jsonio import PathLike

PATH_KEYS = ('output', 'extrinsics', 'mocap_log', 'frame_index', 'board_observations', 'tuning', 'models')


@dataclass
class PathsConfig:
    output: Path = Path('dataset')
    extrinsics: Path = Path('extrinsics.json')
    mocap_log: Optional[Path] = None
    frame_index: Optional[Path] = None
    board_observations: Optional[Path] = None
    tuning: Optional[Path] = None
    models: Optional[Path] = None
    meshes: Dict[int, Path] = field(default_factory=dict)

    def require(self, name: str) -> Path:
        value = getattr(self, name)
        if value is None:
            raise ConfigError(f"paths.{name} is not configured")
        return value


@dataclass
class TuningConfig:
    grid: TuningGrid = field(default_factory=TuningGrid)
    threshold: float = IOU_THRESHOLD


@dataclass
class AnnotationConfig:
    min_visible_pixels: int = MIN_VISIBLE_PIXELS
    mock_depth_distance_mm: float = MOCK_DEPTH_DISTANCE_MM
    depth_scale: float = DEPTH_SCALE
    sync_window_s: float = SYNC_WINDOW_S


@dataclass
class SynthConfig:
    camera_count: int = RIG_CAMERA_COUNT
    image_width: int = IMAGE_WIDTH
    image_height: int = IMAGE_HEIGHT
    horizontal_fov_deg: float = 66.0
    ring_radius_mm: float = 6000.0
    camera_height_mm: float = 3500.0
    object_ids: List[int] = field(default_factory=lambda: [1, 2, 3])
    duration_s: float = 20.0
    frame_rate_fps: float = FRAME_RATE_FPS
    board_placements: int = 8
    corner_noise_px: float = 0.3
    mocap_jitter_mm: float = MOCAP_JITTER_MM
    mocap_jitter_deg: float = MOCAP_JITTER_DEG
    tuning_samples: int = 4
    scenario: str = 'synthetic'


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    board: BoardSpec = field(default_factory=BoardSpec)
    cameras: Dict[str, CameraIntrinsics] = field(default_factory=dict)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    annotation: AnnotationConfig = field(default_factory=AnnotationConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    workers: int = DEFAULT_WORKERS
    seed: int = 0
    source: Optional[Path] = None

    def intrinsics(self, camera_id: str) -> CameraIntrinsics:
        if camera_id not in self.cameras:
            raise ConfigError(f"cameras.{camera_id} is not configured")
        return self.cameras[camera_id]


def _mapping(value: Any, key_path: str) -> Dict[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{key_path}: expected a mapping")
    return value


def _number(value: Any, key_path: str, kind: Callable = float, minimum: Optional[float] = None):
    if isinstance(value, bool):
        raise ConfigError(f"{key_path}: expected a number, got {value!r}")
    try:
        number = kind(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key_path}: expected a number, got {value!r}") from e
    if kind is int and float(value) != number:
        raise ConfigError(f"{key_path}: expected an integer, got {value!r}")
    if minimum is not None and number < minimum:
        raise ConfigError(f"{key_path}: must be at least {minimum}, got {number}")
    return number


def _build(cls, doc: Mapping[str, Any], key_path: str, parsers: Mapping[str, Callable[[Any, str], Any]]):
    """Instantiate a dataclass from a mapping, rejecting unknown keys."""
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        if key not in known:
            raise ConfigError(f"{key_path}.{key}: unknown key")
        parse = parsers.get(key, lambda v, _: v)
        kwargs[key] = parse(value, f"{key_path}.{key}")
    try:
        return cls(**kwargs)
    except (ConfigError, TypeError) as e:
        raise ConfigError(f"{key_path}: {e}") from e


def _float(minimum=None):
    return lambda v, k: _number(v, k, float, minimum)


def _int(minimum=None):
    return lambda v, k: _number(v, k, int, minimum)


def _bool(value: Any, key_path: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ('true', 'false'):
        return value.strip().lower() == 'true'
    raise ConfigError(f"{key_path}: expected true or false, got {value!r}")


def _resolve(value: Any, key_path: str, base: Path) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{key_path}: expected a path string")
    path = Path(os.path.expandvars(value)).expanduser()
    return path if path.is_absolute() else Path(os.path.normpath(base / path))


def _parse_paths(doc: Dict[str, Any], base: Path) -> PathsConfig:
    parsers = {key: (lambda v, k: _resolve(v, k, base)) for key in PATH_KEYS}
    parsers['meshes'] = lambda v, k: {
        _number(obj_id, f"{k}.{obj_id}", int, 1): _resolve(p, f"{k}.{obj_id}", base)
        for obj_id, p in _mapping(v, k).items()
    }
    return _build(PathsConfig, doc, 'paths', parsers)


def _parse_cameras(doc: Dict[str, Any]) -> Dict[str, CameraIntrinsics]:
    parsers = {key: _float() for key in ('fx', 'fy', 'cx', 'cy', 'k1', 'k2')}
    parsers.update(width=_int(1), height=_int(1))
    return {str(camera_id): _build(CameraIntrinsics, _mapping(entry, f"cameras.{camera_id}"),
                                   f"cameras.{camera_id}", parsers)
            for camera_id, entry in doc.items()}


def _parse_board(doc: Dict[str, Any]) -> BoardSpec:
    parsers = {'inner_cols': _int(1), 'inner_rows': _int(1), 'square_size': _float(),
               'board_width': _float(), 'board_height': _float(),
               'origin_offset': lambda v, k: tuple(_number(x, f"{k}[{i}]") for i, x in enumerate(v))}
    return _build(BoardSpec, doc, 'board', parsers)


def _parse_tuning(doc: Dict[str, Any]) -> TuningConfig:
    doc = dict(doc)
    threshold = _number(doc.pop('threshold', IOU_THRESHOLD), 'tuning.threshold')
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"tuning.threshold: must lie in [0, 1], got {threshold}")
    parsers = {'translation_range': _float(), 'translation_step': _float(),
               'rotation_range': _float(), 'rotation_step': _float(),
               'max_candidates': _int(1), 'two_pass': _bool}
    return TuningConfig(_build(TuningGrid, doc, 'tuning', parsers), threshold)


def _parse_annotation(doc: Dict[str, Any]) -> AnnotationConfig:
    parsers = {'min_visible_pixels': _int(0), 'mock_depth_distance_mm': _float(),
               'depth_scale': _float(), 'sync_window_s': _float(0.0)}
    config = _build(AnnotationConfig, doc, 'annotation', parsers)
    if config.mock_depth_distance_mm <= 0 or config.depth_scale <= 0:
        raise ConfigError("annotation: mock_depth_distance_mm and depth_scale must be positive")
    return config


def _parse_synth(doc: Dict[str, Any]) -> SynthConfig:
    parsers = {'camera_count': _int(1), 'image_width': _int(1), 'image_height': _int(1),
               'horizontal_fov_deg': _float(1.0), 'ring_radius_mm': _float(), 'camera_height_mm': _float(),
               'object_ids': lambda v, k: [_number(x, f"{k}[{i}]", int, 1) for i, x in enumerate(v)],
               'duration_s': _float(0.0), 'frame_rate_fps': _float(), 'board_placements': _int(1),
               'corner_noise_px': _float(0.0), 'mocap_jitter_mm': _float(0.0),
               'mocap_jitter_deg': _float(0.0), 'tuning_samples': _int(0), 'scenario': lambda v, k: str(v)}
    return _build(SynthConfig, doc, 'synth', parsers)


def _set_dotted(doc: Dict[str, Any], dotted: str, value: Any) -> None:
    *parents, leaf = dotted.split('.')
    node = doc
    for part in parents:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: cannot override inside a non-mapping")
    node[leaf] = value


def parse_pipeline_config(doc: Any, base: Path, overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    doc = dict(_mapping(doc, '<root>'))
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(doc, dotted, value)
    known = {'paths', 'board', 'cameras', 'tuning', 'annotation', 'synth', 'workers', 'seed'}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{key}: unknown section")
    return PipelineConfig(
        paths=_parse_paths(_mapping(doc.get('paths'), 'paths'), base),
        board=_parse_board(_mapping(doc.get('board'), 'board')),
        cameras=_parse_cameras(_mapping(doc.get('cameras'), 'cameras')),
        tuning=_parse_tuning(_mapping(doc.get('tuning'), 'tuning')),
        annotation=_parse_annotation(_mapping(doc.get('annotation'), 'annotation')),
        synth=_parse_synth(_mapping(doc.get('synth'), 'synth')),
        workers=_number(doc.get('workers', DEFAULT_WORKERS), 'workers', int, 1),
        seed=_number(doc.get('seed', 0), 'seed', int, 0),
    )


def load_pipeline_config(path: PathLike, overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """Read a YAML config; relative paths resolve against its directory.

    ``overrides`` maps dotted keys (``workers``, ``paths.output``) to values
    applied before validation; None values are ignored.
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError as e:
        raise IoError(f"config not found: {path}") from e
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ParseError(f"{path}: invalid YAML ({e})") from e
    config = parse_pipeline_config(doc or {}, path.parent.resolve(), overrides)
    config.source = path
    return config


def _relative(path: Optional[Path], base: Path) -> Optional[str]:
    if path is None:
        return None
    try:
        return os.path.relpath(Path(path).resolve(), base)
    except ValueError:
        return str(path)


def pipeline_config_to_dict(config: PipelineConfig, base: Path) -> Dict[str, Any]:
    base = base.resolve()
    paths = {key: _relative(getattr(config.paths, key), base) for key in PATH_KEYS}
    paths = {key: value for key, value in paths.items() if value is not None}
    if config.paths.meshes:
        paths['meshes'] = {obj_id: _relative(p, base) for obj_id, p in sorted(config.paths.meshes.items())}
    tuning = asdict(config.tuning.grid)
    tuning['threshold'] = config.tuning.threshold
    board = asdict(config.board)
    board['origin_offset'] = [float(v) for v in config.board.origin_offset]
    return {
        'paths': paths,
        'board': board,
        'cameras': {camera_id: asdict(k) for camera_id, k in sorted(config.cameras.items())},
        'tuning': tuning,
        'annotation': asdict(config.annotation),
        'synth': asdict(config.synth),
        'workers': config.workers,
        'seed': config.seed,
    }


def dump_pipeline_config(config: PipelineConfig, path: PathLike) -> None:
    """Write the YAML form, with paths relative to the file's directory."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        text = yaml.safe_dump(pipeline_config_to_dict(config, path.parent), sort_keys=False)
        path.write_text(text, encoding='utf-8')
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot serialise config: {e}") from e
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
