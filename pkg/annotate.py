"""Relative poses, silhouettes, bounding boxes and mock depth per scene snap."""

import asyncio
import functools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple
import numpy as np
import pandas as pd

from calib import CameraExtrinsics
from config import (DEPTH_SCALE, MAX_CAMERAS_PER_SCENE, MIN_VISIBLE_PIXELS,
                    MOCK_DEPTH_DISTANCE_MM, SYNC_WINDOW_S)
from errors import InvalidInput, IoError, MissingExtrinsics, MissingMesh, ParseError, SchemaError, ValueOverflow
from geometry import CameraIntrinsics, Pose, compose, invert
from jsonio import PathLike
from mesh_render import TriMesh, aggregate_masks, rasterize_mask
from mocap import MocapLog, ObjectState

logger = logging.getLogger(__name__)

BBox = Tuple[int, int, int, int]
FRAME_INDEX_COLUMNS = ['scene_id', 'camera_id', 'timestamp_s', 'image_path', 'scenario']
DEFAULT_SCENARIO = 'default'


@dataclass(frozen=True, eq=False)
class Annotation:
    object_id: int
    relative_pose: Pose
    mask: np.ndarray
    bbox: BBox
    visible_pixel_count: int


@dataclass(frozen=True, eq=False)
class RigCamera:
    camera_id: str
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics


@dataclass(eq=False)
class CameraView:
    """One image of a snap and the objects annotated in it."""

    camera_id: str
    image_id: int
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    annotations: List[Annotation] = field(default_factory=list)
    image_path: Optional[str] = None
    depth: Optional[np.ndarray] = None

    @property
    def aggregated_mask(self) -> np.ndarray:
        return aggregate_masks([a.mask for a in self.annotations], shape=self.intrinsics.shape)


@dataclass(eq=False)
class SceneRecord:
    """A snap: every tracked object state plus each camera's annotations."""

    scene_id: int
    objects: List[ObjectState]
    views: List[CameraView]
    timestamp: float = 0.0
    scenario: str = DEFAULT_SCENARIO
    annotation_time_s: float = 0.0
    depth_scale: float = DEPTH_SCALE

    def __post_init__(self):
        if len(self.views) > MAX_CAMERAS_PER_SCENE:
            raise InvalidInput(f"scene {self.scene_id} has {len(self.views)} images, "
                             f"at most {MAX_CAMERAS_PER_SCENE} allowed")

    @property
    def instance_count(self) -> int:
        return sum(len(v.annotations) for v in self.views)


@dataclass(eq=False)
class SceneInput:
    """A snap to annotate: frames per camera and the object states at its time."""

    scene_id: int
    timestamp: float
    frames: Dict[str, Optional[str]]
    scenario: str = DEFAULT_SCENARIO
    objects: List[ObjectState] = field(default_factory=list)


def relative_pose(cam: CameraExtrinsics, obj: ObjectState) -> Pose:
    """Object pose in the camera frame: inverse camera pose times object pose."""
    return compose(invert(cam.pose_mc_cam), obj.pose_mc_obj)


def fit_bbox(mask: np.ndarray) -> Optional[BBox]:
    """Tight (x, y, w, h) around the set pixels; None for an empty mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    if len(rows) == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def annotate_object(cam: CameraExtrinsics, k: CameraIntrinsics, obj: ObjectState, mesh: TriMesh,
                    min_visible_pixels: int = MIN_VISIBLE_PIXELS) -> Optional[Annotation]:
    """Annotation for one object in one camera, or None when it is filtered out."""
    if mesh.object_id != obj.object_id:
        raise InvalidInput(f"mesh {mesh.object_id} does not belong to object {obj.object_id}")
    pose = relative_pose(cam, obj)
    mask = rasterize_mask(mesh, pose, k)
    count = int(np.count_nonzero(mask))
    if count < min_visible_pixels:
        logger.debug("object %d filtered in camera %s (%d visible pixels)",
                     obj.object_id, cam.camera_id, count)
        return None
    return Annotation(obj.object_id, pose, mask, fit_bbox(mask), count)


def mock_depth(aggregated: np.ndarray, fixed_distance: float = MOCK_DEPTH_DISTANCE_MM,
               depth_scale: float = DEPTH_SCALE) -> np.ndarray:
    """16-bit depth stamping one fixed distance onto the mask."""
    if fixed_distance <= 0:
        raise InvalidInput(f"fixed_distance must be positive, got {fixed_distance}")
    if depth_scale <= 0:
        raise InvalidInput(f"depth_scale must be positive, got {depth_scale}")
    value = int(np.floor(fixed_distance / depth_scale + 0.5))
    if value > np.iinfo(np.uint16).max:
        raise ValueOverflow(f"depth {fixed_distance} mm at scale {depth_scale} quantizes to "
                            f"{value}, beyond 16 bits")
    return np.where(aggregated, value, 0).astype(np.uint16)


def image_ids(rig: Mapping[str, RigCamera]) -> Dict[str, int]:
    """Stable image id per camera: its index in the sorted rig."""
    return {camera_id: i for i, camera_id in enumerate(sorted(rig))}


def annotate_scene(rig: Mapping[str, RigCamera], meshes: Mapping[int, TriMesh], scene: SceneInput,
                   min_visible_pixels: int = MIN_VISIBLE_PIXELS,
                   mock_depth_distance: float = MOCK_DEPTH_DISTANCE_MM,
                   depth_scale: float = DEPTH_SCALE) -> SceneRecord:
    """Annotate every tracked object in every camera of one snap."""
    started = time.perf_counter()
    objects = sorted(scene.objects, key=lambda s: s.object_id)
    for state in objects:
        if state.object_id not in meshes:
            raise MissingMesh(f"scene {scene.scene_id}: no mesh for object {state.object_id}")
    ids = image_ids(rig)
    views = []
    for camera_id in sorted(scene.frames):
        if camera_id not in rig:
            raise MissingExtrinsics(f"scene {scene.scene_id}: camera {camera_id} is not calibrated")
        camera = rig[camera_id]
        annotations = []
        for state in objects:
            annotation = annotate_object(camera.extrinsics, camera.intrinsics, state,
                                         meshes[state.object_id], min_visible_pixels)
            if annotation is not None:
                annotations.append(annotation)
        view = CameraView(camera_id, ids[camera_id], camera.intrinsics, camera.extrinsics,
                          annotations, scene.frames[camera_id])
        view.depth = mock_depth(view.aggregated_mask, mock_depth_distance, depth_scale)
        views.append(view)
    record = SceneRecord(scene.scene_id, objects, views, scene.timestamp, scene.scenario,
                         depth_scale=depth_scale)
    record.annotation_time_s = time.perf_counter() - started
    return record


async def annotate_scenes(rig: Mapping[str, RigCamera], meshes: Mapping[int, TriMesh],
                          scenes: Sequence[SceneInput], workers: Optional[int] = None,
                          sink: Optional[Callable[[SceneRecord], object]] = None,
                          **options) -> List[object]:
    """Annotate scenes on a worker pool; results come back in input order.

    With a sink, each record is handed to it on the worker thread and the
    sink's return value is collected instead of the record.
    """
    def job(scene: SceneInput):
        record = annotate_scene(rig, meshes, scene, **options)
        return sink(record) if sink is not None else record

    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        tasks = [loop.run_in_executor(pool, functools.partial(job, scene)) for scene in scenes]
        return list(await asyncio.gather(*tasks))


def load_frame_index(path: PathLike) -> List[SceneInput]:
    """Group frame rows into snaps; a snap's time is the mean of its frames."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"frame index not found: {path}")
    try:
        frame = pd.read_csv(path, skipinitialspace=True, float_precision='round_trip',
                            dtype={'camera_id': str, 'image_path': str, 'scenario': str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: malformed CSV ({e})") from e
    missing = [c for c in ('scene_id', 'camera_id', 'timestamp_s') if c not in frame.columns]
    if missing:
        raise SchemaError(path, ','.join(missing), "missing columns")
    scenes = []
    for scene_id, group in frame.groupby('scene_id', sort=True):
        frames = {}
        for _, row in group.iterrows():
            image = row.get('image_path')
            frames[str(row['camera_id'])] = None if pd.isna(image) or image == '' else str(image)
        scenario = group['scenario'].iloc[0] if 'scenario' in group else DEFAULT_SCENARIO
        scenes.append(SceneInput(
            scene_id=int(scene_id),
            timestamp=float(group['timestamp_s'].mean()),
            frames=frames,
            scenario=DEFAULT_SCENARIO if pd.isna(scenario) else str(scenario),
        ))
    return scenes


def write_frame_index(scenes: Sequence[SceneInput], path: PathLike) -> None:
    rows = [[s.scene_id, camera_id, s.timestamp, s.frames[camera_id] or '', s.scenario]
            for s in scenes for camera_id in sorted(s.frames)]
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows, columns=FRAME_INDEX_COLUMNS).to_csv(path, index=False, float_format='%.17g')
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def attach_object_states(scenes: Sequence[SceneInput], log: MocapLog,
                         window: float = SYNC_WINDOW_S) -> List[SceneInput]:
    """Fill each snap's object states with the nearest mocap samples."""
    for scene in scenes:
        scene.objects = log.states_at(scene.timestamp, window)
    return list(scenes)
