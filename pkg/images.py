"""PNG reading and writing for masks (8-bit, 0/255) and depth (16-bit)."""

from pathlib import Path
from typing import Tuple
import numpy as np
from PIL import Image

from errors import IoError, ParseError
from jsonio import PathLike


def _open(path: PathLike) -> Image.Image:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"image not found: {path}")
    try:
        image = Image.open(path)
        image.load()
        return image
    except OSError as e:
        raise ParseError(f"{path}: unreadable image ({e})") from e


def _save(image: Image.Image, path: PathLike) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        image.save(path, format='PNG')
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def write_mask_png(mask: np.ndarray, path: PathLike) -> None:
    _save(Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)), path)


def read_mask_png(path: PathLike) -> np.ndarray:
    """Single-channel mask; any value above 127 counts as set."""
    return np.asarray(_open(path).convert('L')) > 127


def write_depth_png(depth: np.ndarray, path: PathLike) -> None:
    _save(Image.fromarray(np.ascontiguousarray(depth, dtype=np.uint16)), path)


def read_depth_png(path: PathLike) -> np.ndarray:
    return np.asarray(_open(path)).astype(np.uint16)


def write_rgb_png(rgb: np.ndarray, path: PathLike) -> None:
    _save(Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)), path)


def read_rgb(path: PathLike) -> np.ndarray:
    return np.asarray(_open(path).convert('RGB'))


def image_size(path: PathLike) -> Tuple[int, int]:
    """(width, height) without decoding pixel data."""
    path = Path(path)
    try:
        with Image.open(path) as image:
            return image.size
    except FileNotFoundError as e:
        raise IoError(f"image not found: {path}") from e
    except OSError as e:
        raise ParseError(f"{path}: unreadable image ({e})") from e
