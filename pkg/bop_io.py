"""BOP-style scene directories, one scene per snap, plus dataset statistics.

Per scene (``<root>/<scene_id:06d>/``):

    scene_camera.json   image_id -> cam_K, depth_scale, cam_R_w2c, cam_t_w2c
    scene_gt.json       image_id -> [{obj_id, cam_R_m2c, cam_t_m2c}]
    scene_gt_info.json  image_id -> [{bbox_obj, bbox_visib, px_count_visib, ...}]
    cameras.json        snap sidecar: image_id -> camera id, size, rgb, tuning state
    scene_objects.json  every tracked object state of the snap
    mask/, mask_visib/  {image_id:06d}_{annotation:06d}.png (identical copies)
    depth/              {image_id:06d}.png, 16-bit mock depth
    rgb/                source images, when available
"""

import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from annotate import Annotation, CameraView, SceneRecord
from calib import CameraExtrinsics
from config import MAX_CAMERAS_PER_SCENE
from errors import OutputExists, PoseLabelError, SchemaError
from geometry import CameraIntrinsics, Pose, invert, rotation_drift
from images import image_size, read_depth_png, read_mask_png, write_depth_png, write_mask_png
from jsonio import (PathLike, float_list, matrix_to_list, number, pose_from_dict, pose_to_dict,
                    read_json, require, write_json)
from mocap import ObjectState

logger = logging.getLogger(__name__)

SCENE_FILES = ('scene_camera.json', 'scene_gt.json', 'scene_gt_info.json',
               'cameras.json', 'scene_objects.json')
ROTATION_CHECK_TOL = 1e-6


def scene_dir(root: PathLike, scene_id: int) -> Path:
    return Path(root) / f"{scene_id:06d}"


def mask_name(image_id: int, annotation_index: int) -> str:
    return f"{image_id:06d}_{annotation_index:06d}.png"


def list_scenes(root: PathLike) -> List[int]:
    """Scene ids present under root, ascending."""
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(int(p.name) for p in root.iterdir()
                  if p.is_dir() and len(p.name) == 6 and p.name.isdigit())


def _copy_rgb(view: CameraView, directory: Path) -> Optional[str]:
    if not view.image_path:
        return None
    source = Path(view.image_path)
    if not source.is_file():
        logger.warning("image %s for camera %s not found, skipping rgb copy", source, view.camera_id)
        return None
    name = f"{view.image_id:06d}{source.suffix.lower() or '.png'}"
    (directory / 'rgb').mkdir(parents=True, exist_ok=True)
    shutil.copyfile(source, directory / 'rgb' / name)
    return f"rgb/{name}"


def write_scene(record: SceneRecord, root: PathLike, overwrite: bool = False) -> Path:
    """Write one snap as a BOP scene directory and return its path."""
    directory = scene_dir(root, record.scene_id)
    if directory.exists():
        if not overwrite:
            raise OutputExists(f"{directory} already exists (use --overwrite)")
        shutil.rmtree(directory)
    directory.mkdir(parents=True)

    scene_camera, scene_gt, scene_gt_info, cameras = {}, {}, {}, {}
    for view in sorted(record.views, key=lambda v: v.image_id):
        key = str(view.image_id)
        w2c = invert(view.extrinsics.pose_mc_cam)
        scene_camera[key] = {
            'cam_K': matrix_to_list(view.intrinsics.matrix),
            'depth_scale': record.depth_scale,
            'cam_R_w2c': matrix_to_list(w2c.rotation),
            'cam_t_w2c': matrix_to_list(w2c.translation),
        }
        scene_gt[key] = []
        scene_gt_info[key] = []
        for i, ann in enumerate(view.annotations):
            scene_gt[key].append({
                'obj_id': ann.object_id,
                'cam_R_m2c': matrix_to_list(ann.relative_pose.rotation),
                'cam_t_m2c': matrix_to_list(ann.relative_pose.translation),
            })
            scene_gt_info[key].append({
                'bbox_obj': list(ann.bbox),
                'bbox_visib': list(ann.bbox),
                'px_count_all': ann.visible_pixel_count,
                'px_count_visib': ann.visible_pixel_count,
                'visib_fract': 1.0,
            })
            write_mask_png(ann.mask, directory / 'mask' / mask_name(view.image_id, i))
            write_mask_png(ann.mask, directory / 'mask_visib' / mask_name(view.image_id, i))
        depth = view.depth if view.depth is not None else np.zeros(view.intrinsics.shape, np.uint16)
        write_depth_png(depth, directory / 'depth' / f"{view.image_id:06d}.png")
        cameras[key] = {
            'camera_id': view.camera_id,
            'width': view.intrinsics.width,
            'height': view.intrinsics.height,
            'k1': view.intrinsics.k1,
            'k2': view.intrinsics.k2,
            'rgb': _copy_rgb(view, directory),
            'tuned': view.extrinsics.tuned,
            'tuning_score': view.extrinsics.tuning_score,
            'rms_px': view.extrinsics.rms_reprojection_error,
        }

    write_json(directory / 'scene_camera.json', scene_camera)
    write_json(directory / 'scene_gt.json', scene_gt)
    write_json(directory / 'scene_gt_info.json', scene_gt_info)
    write_json(directory / 'cameras.json', {
        'scene_id': record.scene_id,
        'timestamp_s': record.timestamp,
        'scenario': record.scenario,
        'annotation_time_s': record.annotation_time_s,
        'images': cameras,
    })
    write_json(directory / 'scene_objects.json', {'objects': [
        {'obj_id': s.object_id, 'timestamp_s': s.timestamp, **pose_to_dict(s.pose_mc_obj)}
        for s in record.objects
    ]})
    logger.debug("wrote scene %d (%d images, %d instances)",
                 record.scene_id, len(record.views), record.instance_count)
    return directory


def _rotation(values: Any, path: Path, key_path: str) -> np.ndarray:
    return float_list(values, 9, path, key_path).reshape(3, 3)


def _read_pose(entry: Dict[str, Any], r_key: str, t_key: str, path: Path, key_path: str) -> Pose:
    r = _rotation(require(entry, r_key, path, key_path), path, f"{key_path}.{r_key}")
    t = float_list(require(entry, t_key, path, key_path), 3, path, f"{key_path}.{t_key}")
    try:
        return Pose(r, t)
    except ValueError as e:
        raise SchemaError(path, f"{key_path}.{r_key}", str(e)) from e


def _read_bbox(entry: Dict[str, Any], path: Path, key_path: str):
    box = require(entry, 'bbox_obj', path, key_path)
    if not isinstance(box, list) or len(box) != 4 or not all(isinstance(v, int) for v in box):
        raise SchemaError(path, f"{key_path}.bbox_obj", "expected 4 integers")
    return tuple(box)


def read_scene(root: PathLike, scene_id: int) -> SceneRecord:
    """Reconstruct a SceneRecord from its directory; unknown keys are ignored."""
    directory = scene_dir(root, scene_id)
    paths = {name: directory / name for name in SCENE_FILES}
    docs = {name: read_json(p) for name, p in paths.items()}
    try:
        return _parse_scene(directory, paths, docs, scene_id)
    except PoseLabelError:
        raise
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise SchemaError(directory, "<scene>", f"malformed scene documents ({e})") from e


def _parse_scene(directory: Path, paths: Dict[str, Path], docs: Dict[str, Any], scene_id: int) -> SceneRecord:
    cameras_doc = docs['cameras.json']
    images = require(cameras_doc, 'images', paths['cameras.json'])

    views = []
    for key in sorted(images, key=int):
        image_id = int(key)
        meta = images[key]
        meta_path = f"images.{key}"
        cam_path = paths['scene_camera.json']
        cam_entry = require(docs['scene_camera.json'], key, cam_path)
        k_matrix = _rotation(require(cam_entry, 'cam_K', cam_path, key), cam_path, f"{key}.cam_K")
        intrinsics = CameraIntrinsics.from_matrix(
            k_matrix,
            int(require(meta, 'width', paths['cameras.json'], meta_path)),
            int(require(meta, 'height', paths['cameras.json'], meta_path)),
            k1=float(meta.get('k1', 0.0)), k2=float(meta.get('k2', 0.0)),
        )
        w2c = _read_pose(cam_entry, 'cam_R_w2c', 'cam_t_w2c', cam_path, key)
        extrinsics = CameraExtrinsics(
            camera_id=str(require(meta, 'camera_id', paths['cameras.json'], meta_path)),
            pose_mc_cam=invert(w2c),
            rms_reprojection_error=float(meta.get('rms_px', 0.0)),
            tuned=bool(meta.get('tuned', False)),
            tuning_score=meta.get('tuning_score'),
        )

        gt_path, info_path = paths['scene_gt.json'], paths['scene_gt_info.json']
        gt_list = require(docs['scene_gt.json'], key, gt_path)
        info_list = require(docs['scene_gt_info.json'], key, info_path)
        if len(gt_list) != len(info_list):
            raise SchemaError(info_path, key, f"{len(info_list)} entries for {len(gt_list)} poses")
        annotations = []
        for i, (gt, info) in enumerate(zip(gt_list, info_list)):
            pose = _read_pose(gt, 'cam_R_m2c', 'cam_t_m2c', gt_path, f"{key}[{i}]")
            mask = read_mask_png(directory / 'mask' / mask_name(image_id, i))
            annotations.append(Annotation(
                object_id=int(require(gt, 'obj_id', gt_path, f"{key}[{i}]")),
                relative_pose=pose,
                mask=mask,
                bbox=_read_bbox(info, info_path, f"{key}[{i}]"),
                visible_pixel_count=int(info.get('px_count_visib', np.count_nonzero(mask))),
            ))
        rgb = meta.get('rgb')
        views.append(CameraView(
            camera_id=extrinsics.camera_id,
            image_id=image_id,
            intrinsics=intrinsics,
            extrinsics=extrinsics,
            annotations=annotations,
            image_path=str(directory / rgb) if rgb else None,
            depth=read_depth_png(directory / 'depth' / f"{image_id:06d}.png"),
        ))

    objects_path = paths['scene_objects.json']
    objects = []
    for i, entry in enumerate(require(docs['scene_objects.json'], 'objects', objects_path)):
        key_path = f"objects[{i}]"
        objects.append(ObjectState(
            object_id=int(require(entry, 'obj_id', objects_path, key_path)),
            pose_mc_obj=pose_from_dict(entry, objects_path, key_path),
            timestamp=number(entry.get('timestamp_s', 0.0), objects_path, f"{key_path}.timestamp_s"),
        ))

    first_scale = next(iter(docs['scene_camera.json'].values()), {}).get('depth_scale', 1.0)
    return SceneRecord(
        scene_id=int(cameras_doc.get('scene_id', scene_id)),
        objects=objects,
        views=views,
        timestamp=float(cameras_doc.get('timestamp_s', 0.0)),
        scenario=str(cameras_doc.get('scenario', 'default')),
        annotation_time_s=float(cameras_doc.get('annotation_time_s', 0.0)),
        depth_scale=float(first_scale),
    )


@dataclass(frozen=True)
class Violation:
    scene_id: int
    kind: str
    path: str
    message: str

    def __str__(self) -> str:
        return f"[{self.kind}] scene {self.scene_id:06d} {self.path}: {self.message}"


def _check_image(violations: List[Violation], scene_id: int, path: Path, size) -> None:
    if not path.is_file():
        violations.append(Violation(scene_id, 'missing-file', str(path), "file not found"))
        return
    try:
        actual = image_size(path)
    except PoseLabelError as e:
        violations.append(Violation(scene_id, 'unreadable', str(path), str(e)))
        return
    if size is not None and tuple(actual) != tuple(size):
        violations.append(Violation(scene_id, 'dimension', str(path),
                                    f"image is {actual[0]}x{actual[1]}, camera is {size[0]}x{size[1]}"))


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and np.isfinite(value)


def _valid_box(box: Any) -> bool:
    return isinstance(box, list) and len(box) == 4 and all(_is_number(v) for v in box)


def _image_meta_size(meta: Any) -> Optional[tuple]:
    if isinstance(meta, dict) and _is_number(meta.get('width')) and _is_number(meta.get('height')):
        return meta['width'], meta['height']
    return None


def _validate_scene(root: Path, scene_id: int) -> List[Violation]:
    directory = scene_dir(root, scene_id)
    violations: List[Violation] = []
    docs = {}
    for name in SCENE_FILES:
        path = directory / name
        if not path.is_file():
            violations.append(Violation(scene_id, 'missing-file', str(path), "file not found"))
            continue
        try:
            doc = read_json(path)
        except PoseLabelError as e:
            violations.append(Violation(scene_id, 'schema', str(path), str(e)))
            continue
        if not isinstance(doc, dict):
            violations.append(Violation(scene_id, 'schema', str(path),
                                        f"expected an object, got {type(doc).__name__}"))
            continue
        docs[name] = doc
    if any(name not in docs for name in ('scene_camera.json', 'scene_gt.json', 'scene_gt_info.json')):
        return violations

    images = docs.get('cameras.json', {}).get('images', {})
    if not isinstance(images, dict):
        violations.append(Violation(scene_id, 'schema', str(directory / 'cameras.json'),
                                    "images must be an object keyed by image id"))
        images = {}
    scene_camera, scene_gt, scene_gt_info = (docs['scene_camera.json'], docs['scene_gt.json'],
                                             docs['scene_gt_info.json'])
    gt_path = str(directory / 'scene_gt.json')
    info_path = str(directory / 'scene_gt_info.json')
    if len(scene_camera) > MAX_CAMERAS_PER_SCENE:
        violations.append(Violation(scene_id, 'layout', str(directory),
                                    f"{len(scene_camera)} images in one snap"))
    for key, entries in scene_gt.items():
        if key not in scene_camera:
            violations.append(Violation(scene_id, 'missing-camera', gt_path,
                                        f"image {key} has no scene_camera entry"))
        meta = images.get(key)
        size = _image_meta_size(meta)
        if size is None:
            violations.append(Violation(scene_id, 'missing-camera', str(directory / 'cameras.json'),
                                        f"image {key} has no size"))
        if not key.isdigit():
            violations.append(Violation(scene_id, 'layout', gt_path, f"image id {key!r} is not numeric"))
            continue
        if not isinstance(entries, list):
            violations.append(Violation(scene_id, 'schema', gt_path, f"{key} must be a list of poses"))
            continue
        image_id = int(key)
        infos = scene_gt_info.get(key, [])
        if not isinstance(infos, list):
            violations.append(Violation(scene_id, 'schema', info_path, f"{key} must be a list"))
            infos = []
        elif len(infos) != len(entries):
            violations.append(Violation(scene_id, 'schema', info_path,
                                        f"image {key}: {len(infos)} info entries for {len(entries)} poses"))
        for i, entry in enumerate(entries):
            try:
                r = np.asarray(entry['cam_R_m2c'], dtype=float).reshape(3, 3)
            except (KeyError, TypeError, ValueError, IndexError):
                violations.append(Violation(scene_id, 'schema', gt_path, f"{key}[{i}].cam_R_m2c malformed"))
            else:
                if not np.all(np.isfinite(r)) or rotation_drift(r) > ROTATION_CHECK_TOL or np.linalg.det(r) <= 0:
                    violations.append(Violation(scene_id, 'orthonormality', gt_path,
                                                f"{key}[{i}].cam_R_m2c is not a rotation"))
            if i < len(infos) and size is not None:
                box = infos[i].get('bbox_obj') if isinstance(infos[i], dict) else None
                if not _valid_box(box):
                    violations.append(Violation(scene_id, 'schema', info_path,
                                                f"{key}[{i}].bbox_obj must be four numbers, got {box!r}"))
                else:
                    x, y, w, h = box
                    if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > size[0] or y + h > size[1]:
                        violations.append(Violation(scene_id, 'bbox', info_path,
                                                    f"{key}[{i}].bbox_obj {box} outside image"))
            for folder in ('mask', 'mask_visib'):
                _check_image(violations, scene_id, directory / folder / mask_name(image_id, i), size)
        if key in scene_camera:
            _check_image(violations, scene_id, directory / "depth" / f"{image_id:06d}.png", size)
        rgb = meta.get('rgb') if isinstance(meta, dict) else None
        if rgb:
            _check_image(violations, scene_id, directory / str(rgb), size)
    return violations


def validate(root: PathLike) -> List[Violation]:
    """Every layout violation found under root; empty when the dataset is sound."""
    root = Path(root)
    violations = []
    for scene_id in list_scenes(root):
        violations.extend(_validate_scene(root, scene_id))
    return violations


@dataclass
class ScenarioStats:
    instances: int = 0
    frames: int = 0
    annotation_time_s: float = 0.0

    def __add__(self, other: 'ScenarioStats') -> 'ScenarioStats':
        return ScenarioStats(self.instances + other.instances, self.frames + other.frames,
                             self.annotation_time_s + other.annotation_time_s)


def _merge(a: Dict, b: Dict, zero) -> Dict:
    out = dict(a)
    for key, value in b.items():
        out[key] = out.get(key, zero()) + value
    return out


@dataclass
class DatasetStats:
    per_class: Dict[int, int] = field(default_factory=dict)
    frames: int = 0
    scenes: int = 0
    per_scenario: Dict[str, ScenarioStats] = field(default_factory=dict)
    annotation_time_s: float = 0.0

    @property
    def total_instances(self) -> int:
        return sum(self.per_class.values())

    def __add__(self, other: 'DatasetStats') -> 'DatasetStats':
        return DatasetStats(
            per_class=_merge(self.per_class, other.per_class, int),
            frames=self.frames + other.frames,
            scenes=self.scenes + other.scenes,
            per_scenario=_merge(self.per_scenario, other.per_scenario, ScenarioStats),
            annotation_time_s=self.annotation_time_s + other.annotation_time_s,
        )


def scene_stats(root: PathLike, scene_id: int) -> DatasetStats:
    directory = scene_dir(root, scene_id)
    gt = read_json(directory / 'scene_gt.json')
    meta = read_json(directory / 'cameras.json')
    try:
        return _count_scene(gt, meta)
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise SchemaError(directory, "<scene>", f"cannot count instances ({e})") from e


def _count_scene(gt: Dict[str, Any], meta: Dict[str, Any]) -> DatasetStats:
    per_class: Dict[int, int] = {}
    for entries in gt.values():
        for entry in entries:
            per_class[int(entry['obj_id'])] = per_class.get(int(entry['obj_id']), 0) + 1
    instances = sum(per_class.values())
    elapsed = float(meta.get('annotation_time_s', 0.0))
    scenario = str(meta.get('scenario', 'default'))
    return DatasetStats(per_class=per_class, frames=len(gt), scenes=1,
                        per_scenario={scenario: ScenarioStats(instances, len(gt), elapsed)},
                        annotation_time_s=elapsed)


def stats(root: PathLike) -> DatasetStats:
    """Exact instance and frame counts, per class and per scenario tag."""
    total = DatasetStats()
    for scene_id in list_scenes(root):
        total = total + scene_stats(root, scene_id)
    return total


def format_stats(s: DatasetStats) -> str:
    """Instances, frames and annotation minutes per scenario, then per-class counts."""
    names = sorted(s.per_scenario)
    columns = names + ['Total']
    rows = [
        ('Instances', [s.per_scenario[n].instances for n in names] + [s.total_instances]),
        ('Frames', [s.per_scenario[n].frames for n in names] + [s.frames]),
        ('Annotation time [min]', [f"{s.per_scenario[n].annotation_time_s / 60:.1f}" for n in names]
         + [f"{s.annotation_time_s / 60:.1f}"]),
    ]
    label_width = max(len(r[0]) for r in rows)
    widths = [max(len(str(c)), *(len(str(r[1][i])) for r in rows)) for i, c in enumerate(columns)]
    lines = [' ' * label_width + ''.join(f"  {c:>{w}}" for c, w in zip(columns, widths))]
    for label, values in rows:
        lines.append(f"{label:<{label_width}}" + ''.join(f"  {str(v):>{w}}" for v, w in zip(values, widths)))
    lines.append('')
    lines.append(f"Scenes: {s.scenes}")
    for obj_id in sorted(s.per_class):
        lines.append(f"  obj {obj_id:>3}: {s.per_class[obj_id]}")
    return '\n'.join(lines)
