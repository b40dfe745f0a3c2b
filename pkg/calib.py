"""Camera localization against the mocap frame and mask-overlap tuning."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple
import numpy as np

from board import BoardObservation, BoardSpec, build_correspondences
from config import (IOU_THRESHOLD, MAX_TUNING_CANDIDATES, SYNC_WINDOW_S, TUNING_ROTATION_RANGE_DEG,
                    TUNING_ROTATION_STEP_DEG, TUNING_TRANSLATION_RANGE_MM, TUNING_TRANSLATION_STEP_MM)
from errors import ConfigError, DimensionMismatch, InvalidInput, MissingMesh, SchemaError, TuningGridTooLarge
from geometry import CameraIntrinsics, Pose, compose, invert, perturb_pose
from images import read_mask_png
from jsonio import PathLike, pose_from_dict, pose_to_dict, read_json, require, write_json
from mesh_render import TriMesh, aggregate_masks, rasterize_mask
from mocap import MocapLog, ObjectState
from pnp import solve_pnp

logger = logging.getLogger(__name__)

Offset = Tuple[Tuple[float, float, float], Tuple[float, float, float]]
REFINE_COARSE_STEPS = 2


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    """Camera pose in the mocap frame (maps camera coordinates to mocap)."""

    camera_id: str
    pose_mc_cam: Pose
    rms_reprojection_error: float = 0.0
    tuned: bool = False
    tuning_score: Optional[float] = None


@dataclass(frozen=True)
class TuningGrid:
    """Offsets searched around the initial camera pose, in the camera's own frame.

    A zero range pins that axis group to zero; otherwise the range must be at
    least one step.
    """

    translation_range: float = TUNING_TRANSLATION_RANGE_MM
    translation_step: float = TUNING_TRANSLATION_STEP_MM
    rotation_range: float = TUNING_ROTATION_RANGE_DEG
    rotation_step: float = TUNING_ROTATION_STEP_DEG
    max_candidates: int = MAX_TUNING_CANDIDATES
    two_pass: bool = False

    def __post_init__(self):
        for name in ('translation', 'rotation'):
            rng, step = getattr(self, f'{name}_range'), getattr(self, f'{name}_step')
            if step <= 0:
                raise ConfigError(f"tuning {name}_step must be positive, got {step}")
            if rng < 0 or (0 < rng < step):
                raise ConfigError(f"tuning {name}_range must be 0 or at least one step, got {rng}")

    @staticmethod
    def _axis(rng: float, step: float) -> np.ndarray:
        m = int(np.floor(rng / step + 1e-9))
        return np.arange(-m, m + 1) * step

    @property
    def translation_values(self) -> np.ndarray:
        return self._axis(self.translation_range, self.translation_step)

    @property
    def rotation_values(self) -> np.ndarray:
        return self._axis(self.rotation_range, self.rotation_step)

    @property
    def candidate_count(self) -> int:
        return len(self.translation_values) ** 3 * len(self.rotation_values) ** 3

    def refined(self) -> 'TuningGrid':
        """Half-step grid reaching two coarse steps either side of the coarse best."""
        return TuningGrid(
            translation_range=REFINE_COARSE_STEPS * self.translation_step if self.translation_range else 0.0,
            translation_step=self.translation_step / 2,
            rotation_range=REFINE_COARSE_STEPS * self.rotation_step if self.rotation_range else 0.0,
            rotation_step=self.rotation_step / 2,
            max_candidates=self.max_candidates,
        )


@dataclass(frozen=True, eq=False)
class TuningSample:
    """A manually masked image and the mocap poses of the objects in it."""

    image_id: str
    camera_id: str
    ground_truth_mask: np.ndarray
    objects: List[ObjectState] = field(default_factory=list)

    @property
    def object_ids(self) -> List[int]:
        return [state.object_id for state in self.objects]


@dataclass(frozen=True, eq=False)
class TuningResult:
    offset: Offset
    pose_mc_cam: Pose
    score: float
    evaluated: int


def localize_camera(spec: BoardSpec, observations: Sequence[BoardObservation],
                    k: CameraIntrinsics) -> CameraExtrinsics:
    """PnP over all board placements of one camera."""
    correspondences = build_correspondences(spec, observations, k)
    solution = solve_pnp(correspondences)
    camera_id = observations[0].camera_id
    logger.info("camera %s localized from %d points, rms %.3f px",
                camera_id, correspondences.n, solution.rms_reprojection_error)
    return CameraExtrinsics(camera_id, invert(solution.pose), solution.rms_reprojection_error)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; 0 when both masks are empty."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def candidate_offsets(grid: TuningGrid) -> List[Offset]:
    count = grid.candidate_count
    if count > grid.max_candidates:
        raise TuningGridTooLarge(f"tuning grid has {count} candidates, cap is {grid.max_candidates}")
    t_values = grid.translation_values.tolist()
    r_values = grid.rotation_values.tolist()
    offsets = []
    for rx in r_values:
        for ry in r_values:
            for rz in r_values:
                for tx in t_values:
                    for ty in t_values:
                        for tz in t_values:
                            offsets.append(((rx, ry, rz), (tx, ty, tz)))
    return offsets


def _tie_key(offset: Offset) -> tuple:
    rotation, translation = offset
    return (float(np.linalg.norm(rotation)), float(np.linalg.norm(translation)), rotation, translation)


def select_best(offsets: Sequence[Offset], scores: Sequence[float]) -> int:
    """Index of the highest score; ties go to the smallest offset.

    The result does not depend on the order the candidates were listed in.
    """
    if not offsets:
        raise InvalidInput("no candidates to select from")
    return min(range(len(offsets)), key=lambda i: (-scores[i], _tie_key(offsets[i])))


def _offset_pose(pose: Pose, offset: Offset) -> Pose:
    rotation, translation = offset
    return perturb_pose(pose, rotation, translation, degrees=True)


def render_sample(sample: TuningSample, pose_mc_cam: Pose, meshes: Mapping[int, TriMesh],
                  k: CameraIntrinsics) -> np.ndarray:
    """Union of every sample object's silhouette seen from pose_mc_cam."""
    pose_cam_mc = invert(pose_mc_cam)
    masks = [rasterize_mask(meshes[state.object_id], compose(pose_cam_mc, state.pose_mc_obj), k)
             for state in sample.objects]
    return aggregate_masks(masks, shape=k.shape)


def _check_tuning_inputs(samples: Sequence[TuningSample], meshes: Mapping[int, TriMesh],
                         k: CameraIntrinsics) -> None:
    if not samples:
        raise InvalidInput("tuning needs at least one sample")
    for sample in samples:
        if sample.ground_truth_mask.shape != k.shape:
            raise DimensionMismatch(f"tuning mask {sample.image_id} is {sample.ground_truth_mask.shape}, "
                                    f"camera images are {k.shape}")
        for obj_id in sample.object_ids:
            if obj_id not in meshes:
                raise MissingMesh(f"no mesh for object {obj_id} (tuning sample {sample.image_id})")


def search_tuning_grid(init_pose: Pose, grid: TuningGrid, samples: Sequence[TuningSample],
                       meshes: Mapping[int, TriMesh], k: CameraIntrinsics,
                       workers: Optional[int] = None,
                       order: Optional[Callable[[List[Offset]], List[Offset]]] = None) -> TuningResult:
    """Exhaustive mean-IoU search over grid offsets around init_pose.

    ``order`` may reorder candidate evaluation; the selected pose does not
    change with it.
    """
    _check_tuning_inputs(samples, meshes, k)

    def score(offset: Offset) -> float:
        pose = _offset_pose(init_pose, offset)
        return float(np.mean([iou(render_sample(s, pose, meshes, k), s.ground_truth_mask)
                              for s in samples]))

    def run(offsets: List[Offset]) -> Tuple[Offset, float]:
        if order is not None:
            offsets = order(list(offsets))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, offsets))
        best = select_best(offsets, scores)
        return offsets[best], scores[best]

    offsets = candidate_offsets(grid)
    best_offset, best_score = run(offsets)
    evaluated = len(offsets)

    if grid.two_pass:
        (rx, ry, rz), (tx, ty, tz) = best_offset
        fine = [((rx + a, ry + b, rz + c), (tx + d, ty + e, tz + g))
                for (a, b, c), (d, e, g) in candidate_offsets(grid.refined())]
        fine_offset, fine_score = run(fine)
        evaluated += len(fine)
        if fine_score > best_score:
            best_offset, best_score = fine_offset, fine_score

    logger.debug("tuning searched %d candidates, best offset %s score %.4f",
                 evaluated, best_offset, best_score)
    return TuningResult(best_offset, _offset_pose(init_pose, best_offset), best_score, evaluated)


def tune_camera(init: CameraExtrinsics, grid: TuningGrid, samples: Sequence[TuningSample],
                meshes: Mapping[int, TriMesh], k: CameraIntrinsics,
                threshold: float = IOU_THRESHOLD, workers: Optional[int] = None) -> CameraExtrinsics:
    """Accept the best grid pose if its mean IoU reaches threshold, else keep init."""
    result = search_tuning_grid(init.pose_mc_cam, grid, samples, meshes, k, workers)
    return accept_tuning(init, result, threshold)


def accept_tuning(init: CameraExtrinsics, result: TuningResult, threshold: float) -> CameraExtrinsics:
    if result.score >= threshold:
        return replace(init, pose_mc_cam=result.pose_mc_cam, tuned=True, tuning_score=result.score)
    logger.info("camera %s: best tuning score %.4f below threshold %.2f, keeping initial pose",
                init.camera_id, result.score, threshold)
    return replace(init, tuned=False, tuning_score=None)


def load_extrinsics(path: PathLike) -> Dict[str, CameraExtrinsics]:
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise SchemaError(path, '<root>', "expected an object keyed by camera id")
    rig = {}
    for camera_id, entry in doc.items():
        score = entry.get('tuning_score') if isinstance(entry, dict) else None
        rig[camera_id] = CameraExtrinsics(
            camera_id=camera_id,
            pose_mc_cam=pose_from_dict(entry, path, camera_id),
            rms_reprojection_error=float(require(entry, 'rms_px', path, camera_id)),
            tuned=bool(entry.get('tuned', False)),
            tuning_score=None if score is None else float(score),
        )
    return rig


def dump_extrinsics(rig: Mapping[str, CameraExtrinsics], path: PathLike) -> None:
    doc = {}
    for camera_id in sorted(rig):
        cam = rig[camera_id]
        doc[camera_id] = {**pose_to_dict(cam.pose_mc_cam), 'rms_px': cam.rms_reprojection_error,
                          'tuned': cam.tuned, 'tuning_score': cam.tuning_score}
    write_json(path, doc)


def load_tuning_samples(path: PathLike, mocap_log: Optional[MocapLog] = None,
                        window: float = SYNC_WINDOW_S) -> List[TuningSample]:
    """Read the tuning document; object poses are inline or looked up in the mocap log."""
    base = Path(path).parent
    doc = read_json(path)
    entries = require(doc, 'samples', path)
    samples = []
    for i, entry in enumerate(entries):
        key = f"samples[{i}]"
        mask = read_mask_png(base / str(require(entry, 'mask', path, key)))
        if 'objects' in entry:
            objects = [ObjectState(int(require(o, 'obj_id', path, f"{key}.objects[{j}]")),
                                   pose_from_dict(o, path, f"{key}.objects[{j}]"))
                       for j, o in enumerate(entry['objects'])]
        elif mocap_log is not None:
            timestamp = float(require(entry, 'timestamp_s', path, key))
            objects = mocap_log.states_at(timestamp, window)
        else:
            raise SchemaError(path, f"{key}.objects", "no inline objects and no mocap log to look them up")
        samples.append(TuningSample(str(require(entry, 'image_id', path, key)),
                                    str(require(entry, 'camera_id', path, key)), mask, objects))
    return samples
