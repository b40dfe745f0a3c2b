"""Motion-capture pose log ingestion.

CSV with header: timestamp_s, object_id, tx_mm, ty_mm, tz_mm, qx, qy, qz, qw.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List
import numpy as np
import pandas as pd

from errors import IoError, ParseError, SchemaError
from geometry import Pose, pose_from_quat, quat_from_rotation
from jsonio import PathLike

logger = logging.getLogger(__name__)

MOCAP_COLUMNS = ['timestamp_s', 'object_id', 'tx_mm', 'ty_mm', 'tz_mm', 'qx', 'qy', 'qz', 'qw']


@dataclass(frozen=True, eq=False)
class ObjectState:
    """Tracked object pose in the mocap frame at one instant."""

    object_id: int
    pose_mc_obj: Pose
    timestamp: float = 0.0


class MocapLog:
    """Time-indexed object poses, grouped per object for nearest-sample lookup."""

    def __init__(self, frame: pd.DataFrame):
        self.frame = frame.sort_values(['object_id', 'timestamp_s'], kind='mergesort').reset_index(drop=True)
        self._groups: Dict[int, pd.DataFrame] = {
            int(obj_id): group.reset_index(drop=True)
            for obj_id, group in self.frame.groupby('object_id', sort=True)
        }
        self._times = {obj_id: g['timestamp_s'].to_numpy() for obj_id, g in self._groups.items()}

    @classmethod
    def from_states(cls, states: Iterable[ObjectState]) -> 'MocapLog':
        rows = []
        for state in states:
            q = quat_from_rotation(state.pose_mc_obj.rotation)
            rows.append([state.timestamp, state.object_id, *state.pose_mc_obj.translation, *q])
        frame = pd.DataFrame(rows, columns=MOCAP_COLUMNS)
        frame['object_id'] = frame['object_id'].astype(np.int64)
        return cls(frame)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def object_ids(self) -> List[int]:
        return sorted(self._groups)

    def _state(self, obj_id: int, index: int) -> ObjectState:
        row = self._groups[obj_id].iloc[index]
        pose = pose_from_quat([row['tx_mm'], row['ty_mm'], row['tz_mm']],
                              [row['qx'], row['qy'], row['qz'], row['qw']])
        return ObjectState(obj_id, pose, float(row['timestamp_s']))

    def nearest(self, obj_id: int, timestamp: float, window: float):
        """Sample of obj_id closest to timestamp, or None outside the window."""
        times = self._times.get(obj_id)
        if times is None or len(times) == 0:
            return None
        i = int(np.searchsorted(times, timestamp))
        candidates = [j for j in (i - 1, i) if 0 <= j < len(times)]
        best = min(candidates, key=lambda j: (abs(times[j] - timestamp), j))
        if abs(times[best] - timestamp) > window:
            return None
        return self._state(obj_id, best)

    def states_at(self, timestamp: float, window: float) -> List[ObjectState]:
        """Every object with a sample within window of timestamp, by object id."""
        states = []
        for obj_id in self.object_ids:
            state = self.nearest(obj_id, timestamp, window)
            if state is None:
                logger.debug("object %d has no mocap sample within %.3f s of %.3f",
                             obj_id, window, timestamp)
                continue
            states.append(state)
        return states


def load_mocap_log(path: PathLike) -> MocapLog:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"mocap log not found: {path}")
    try:
        frame = pd.read_csv(path, skipinitialspace=True, float_precision='round_trip')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: malformed CSV ({e})") from e
    missing = [c for c in MOCAP_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(path, ','.join(missing), "missing columns")
    try:
        frame = frame[MOCAP_COLUMNS].astype(float)
    except ValueError as e:
        raise ParseError(f"{path}: non-numeric values ({e})") from e
    if not np.all(np.isfinite(frame.to_numpy())):
        raise ParseError(f"{path}: non-finite values")
    frame['object_id'] = frame['object_id'].astype(np.int64)
    return MocapLog(frame)


def write_mocap_log(log: MocapLog, path: PathLike) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        log.frame.sort_values(['timestamp_s', 'object_id'], kind='mergesort').to_csv(
            path, index=False, float_format='%.17g')
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
