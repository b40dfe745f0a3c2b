"""Tracked checkerboard model.

The mocap system tracks a virtual origin at the board's upper-left corner,
with x along the columns, y along the rows and z out of the printed face.
Interior intersections are extrapolated from that pose with a static offset.
"""

import logging
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import List, Sequence, Tuple
import numpy as np

from config import (BOARD_INNER_COLS, BOARD_INNER_ROWS, BOARD_SQUARE_MM, BOARD_WIDTH_MM,
                    BOARD_HEIGHT_MM, MIN_ORIENTATION_DIVERSITY_DEG, CORNER_MARGIN_FRACTION)
from errors import (ConfigError, DimensionMismatch, InsufficientOrientationDiversity,
                    InvalidObservation, MixedCameras, SchemaError)
from geometry import CameraIntrinsics, Pose, compose, rotation_angle, transform_points
from jsonio import PathLike, float_list, number, pose_from_dict, pose_to_dict, read_json, require, write_json
from pnp import Correspondences

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoardSpec:
    inner_cols: int = BOARD_INNER_COLS
    inner_rows: int = BOARD_INNER_ROWS
    square_size: float = BOARD_SQUARE_MM
    origin_offset: Tuple[float, float, float] = (BOARD_SQUARE_MM, BOARD_SQUARE_MM, 0.0)
    board_width: float = BOARD_WIDTH_MM
    board_height: float = BOARD_HEIGHT_MM

    def __post_init__(self):
        object.__setattr__(self, 'origin_offset', tuple(float(v) for v in self.origin_offset))
        if self.inner_cols < 3 or self.inner_rows < 3:
            raise ConfigError(f"board needs at least 3x3 interior intersections, "
                              f"got {self.inner_cols}x{self.inner_rows}")
        if self.square_size <= 0:
            raise ConfigError(f"square_size must be positive, got {self.square_size}")
        if len(self.origin_offset) != 3:
            raise ConfigError("origin_offset must have three components")
        ox, oy, oz = self.origin_offset
        if not (0.0 <= ox <= self.board_width and 0.0 <= oy <= self.board_height and oz == 0.0):
            raise ConfigError(f"origin_offset {self.origin_offset} lies outside the "
                              f"{self.board_width}x{self.board_height} mm board")

    @property
    def corner_count(self) -> int:
        return self.inner_cols * self.inner_rows

    def local_points(self) -> np.ndarray:
        """Interior intersections in the board frame, row-major."""
        rows, cols = np.meshgrid(np.arange(self.inner_rows), np.arange(self.inner_cols), indexing='ij')
        local = np.zeros((self.corner_count, 3))
        local[:, 0] = cols.ravel() * self.square_size
        local[:, 1] = rows.ravel() * self.square_size
        return local + np.asarray(self.origin_offset)


@dataclass(frozen=True, eq=False)
class BoardObservation:
    """One tracked board placement and its detected corners in one camera."""

    board_pose_mc: Pose
    corners_2d: np.ndarray
    camera_id: str
    timestamp: float = 0.0

    def __post_init__(self):
        corners = np.array(self.corners_2d, dtype=float).reshape(-1, 2)
        corners.flags.writeable = False
        object.__setattr__(self, 'corners_2d', corners)


def first_intersection_mc(spec: BoardSpec, board_pose_mc: Pose) -> Pose:
    """Pose of the first interior intersection in the mocap frame."""
    static_offset = Pose.from_translation(spec.origin_offset)
    return compose(board_pose_mc, static_offset)


def grid_points_mc(spec: BoardSpec, board_pose_mc: Pose) -> np.ndarray:
    """All interior intersections in the mocap frame, row-major (n, 3)."""
    return transform_points(board_pose_mc, spec.local_points())


def _check_observation(spec: BoardSpec, obs: BoardObservation, index: int, k: CameraIntrinsics):
    if len(obs.corners_2d) != spec.corner_count:
        raise DimensionMismatch(f"observation {index} has {len(obs.corners_2d)} corners, "
                                f"board has {spec.corner_count}")
    if not np.all(k.contains(obs.corners_2d, margin=CORNER_MARGIN_FRACTION)):
        raise InvalidObservation(f"observation {index} has corners outside the image")


def orientation_diversity(observations: Sequence[BoardObservation],
                          enough: float = np.inf) -> float:
    """Largest pairwise rotation between board placements, in degrees.

    Stops scanning once a pair reaches ``enough`` degrees.
    """
    best = 0.0
    for a, b in combinations(observations, 2):
        angle = np.degrees(rotation_angle(a.board_pose_mc.rotation, b.board_pose_mc.rotation))
        best = max(best, float(angle))
        if best >= enough:
            break
    return best


def build_correspondences(spec: BoardSpec, observations: Sequence[BoardObservation],
                          k: CameraIntrinsics) -> Correspondences:
    """Concatenate grid points and detected corners across placements."""
    camera_ids = {obs.camera_id for obs in observations}
    if len(camera_ids) > 1:
        raise MixedCameras(f"observations span cameras {sorted(camera_ids)}")
    if len(observations) < 2:
        raise InsufficientOrientationDiversity(
            f"need at least two board placements, got {len(observations)}")
    diversity = orientation_diversity(observations, enough=MIN_ORIENTATION_DIVERSITY_DEG)
    if diversity < MIN_ORIENTATION_DIVERSITY_DEG:
        raise InsufficientOrientationDiversity(
            f"board placements differ by at most {diversity:.2f} deg "
            f"(need {MIN_ORIENTATION_DIVERSITY_DEG} deg)")

    points_3d, points_2d = [], []
    for index, obs in enumerate(observations):
        _check_observation(spec, obs, index, k)
        points_3d.append(grid_points_mc(spec, obs.board_pose_mc))
        points_2d.append(obs.corners_2d)
    logger.debug("camera %s: %d placements, %d correspondences",
                 next(iter(camera_ids)), len(observations), sum(len(p) for p in points_2d))
    return Correspondences(np.vstack(points_3d), np.vstack(points_2d), k)


def load_observations(path: PathLike) -> Tuple[str, List[BoardObservation]]:
    """Read one camera's board observation document."""
    doc = read_json(path)
    camera_id = str(require(doc, 'camera_id', path))
    entries = require(doc, 'observations', path)
    if not isinstance(entries, list):
        raise SchemaError(path, 'observations', "expected a list")
    observations = []
    for i, entry in enumerate(entries):
        key = f"observations[{i}]"
        corners = require(entry, 'corners', path, key)
        if not isinstance(corners, list):
            raise SchemaError(path, f"{key}.corners", "expected a list of [u, v]")
        observations.append(BoardObservation(
            board_pose_mc=pose_from_dict(require(entry, 'board_pose', path, key), path, f"{key}.board_pose"),
            corners_2d=float_list(corners, 2 * len(corners), path, f"{key}.corners").reshape(-1, 2),
            camera_id=camera_id,
            timestamp=number(entry.get('timestamp', 0.0), path, f"{key}.timestamp"),
        ))
    return camera_id, observations


def dump_observations(camera_id: str, observations: Sequence[BoardObservation], path: PathLike) -> None:
    write_json(path, {
        'camera_id': camera_id,
        'observations': [{
            'timestamp': obs.timestamp,
            'board_pose': pose_to_dict(obs.board_pose_mc),
            'corners': obs.corners_2d.tolist(),
        } for obs in observations],
    })


def find_observation_files(directory: PathLike) -> List[Path]:
    return sorted(Path(directory).glob('*.json'))
