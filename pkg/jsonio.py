"""JSON document helpers with file/key-path aware errors."""

import json
from pathlib import Path
from typing import Any, Dict, Sequence, Union

import numpy as np

from errors import IoError, ParseError, SchemaError, SerializationError
from geometry import Pose, pose_from_quat, pose_to_quat

PathLike = Union[str, Path]


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            return json.load(fh)
    except FileNotFoundError as e:
        raise IoError(f"file not found: {path}") from e
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e})") from e


def write_json(path: PathLike, data: Any) -> None:
    path = Path(path)
    try:
        text = json.dumps(data, indent=2, sort_keys=False)
    except (TypeError, ValueError) as e:
        raise SerializationError(f"cannot serialise {path}: {e}") from e
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + '\n', encoding='utf-8')
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def require(doc: Dict[str, Any], key: str, path: PathLike, key_path: str = '') -> Any:
    """doc[key], raising SchemaError naming the file and key path when absent."""
    full = f"{key_path}.{key}" if key_path else key
    if not isinstance(doc, dict):
        raise SchemaError(path, key_path or '<root>', "expected an object")
    if key not in doc:
        raise SchemaError(path, full, "missing key")
    return doc[key]


def number(value: Any, path: PathLike, key_path: str) -> float:
    """A single finite number, or SchemaError naming the key."""
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise SchemaError(path, key_path, f"expected a finite number, got {value!r}")
    return float(value)


def float_list(value: Any, length: int, path: PathLike, key_path: str) -> np.ndarray:
    try:
        array = np.asarray(value, dtype=float).reshape(-1)
    except (TypeError, ValueError) as e:
        raise SchemaError(path, key_path, "expected numbers") from e
    if len(array) != length or not np.all(np.isfinite(array)):
        raise SchemaError(path, key_path, f"expected {length} finite numbers")
    return array


def pose_to_dict(pose: Pose) -> Dict[str, list]:
    t, q = pose_to_quat(pose)
    return {'t': t.tolist(), 'q': q.tolist()}


def pose_from_dict(doc: Dict[str, Any], path: PathLike, key_path: str) -> Pose:
    t = float_list(require(doc, 't', path, key_path), 3, path, f"{key_path}.t")
    q = float_list(require(doc, 'q', path, key_path), 4, path, f"{key_path}.q")
    if np.linalg.norm(q) < 1e-12:
        raise SchemaError(path, f"{key_path}.q", "zero quaternion")
    return pose_from_quat(t, q)


def matrix_to_list(values: Sequence) -> list:
    return [float(v) for v in np.asarray(values, dtype=float).reshape(-1)]
