"""Triangle meshes and binary silhouette rendering.

Masks are boolean arrays of shape (height, width). A pixel is set when its
centre is covered by a projected triangle lying in front of the near plane.
Edges follow the top-left ownership rule so that shared edges are never
drawn twice or skipped, which keeps masks bit-identical across runs.
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple
import numpy as np
from plyfile import PlyData, PlyElement
from scipy import ndimage

from config import Z_NEAR_MM
from errors import DimensionMismatch, InvalidInput, IoError, ParseError, UnsupportedFormat
from geometry import CameraIntrinsics, Pose, transform_points
from jsonio import PathLike

logger = logging.getLogger(__name__)

MIN_TRIANGLE_AREA_MM2 = 1e-9
_MODEL_NAME = re.compile(r'obj_(\d+)')


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Vertices in the object frame (mm) and vertex-index triples."""

    vertices: np.ndarray
    triangles: np.ndarray
    object_id: int = 0

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float).reshape(-1, 3)
        triangles = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise InvalidInput("mesh vertices must be finite")
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise InvalidInput("triangle index out of range")
        vertices.flags.writeable = False
        triangles.flags.writeable = False
        object.__setattr__(self, 'vertices', vertices)
        object.__setattr__(self, 'triangles', triangles)

    @property
    def corners(self) -> np.ndarray:
        """Triangle vertex coordinates, shape (m, 3, 3)."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)


def drop_degenerate(mesh: TriMesh) -> Tuple[TriMesh, int]:
    """Remove triangles whose area is below MIN_TRIANGLE_AREA_MM2."""
    keep = mesh.areas() >= MIN_TRIANGLE_AREA_MM2
    dropped = int(np.count_nonzero(~keep))
    if dropped == 0:
        return mesh, 0
    return TriMesh(mesh.vertices, mesh.triangles[keep], mesh.object_id), dropped


def merge_meshes(meshes: Sequence[TriMesh], object_id: int = 0) -> TriMesh:
    vertices, triangles, offset = [], [], 0
    for mesh in meshes:
        vertices.append(mesh.vertices)
        triangles.append(mesh.triangles + offset)
        offset += len(mesh.vertices)
    if not vertices:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), object_id)
    return TriMesh(np.vstack(vertices), np.vstack(triangles), object_id)


def fan_triangulate(polygon: Sequence[int]) -> List[Tuple[int, int, int]]:
    return [(polygon[0], polygon[i], polygon[i + 1]) for i in range(1, len(polygon) - 1)]


def _object_id_from_path(path: Path) -> int:
    match = _MODEL_NAME.search(path.stem)
    return int(match.group(1)) if match else 0


def _build_mesh(vertices, polygons, object_id: int, path: Path) -> TriMesh:
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(vertices)):
        raise ParseError(f"{path}: non-finite vertex coordinates")
    triangles = []
    for face_index, polygon in enumerate(polygons):
        polygon = [int(i) for i in polygon]
        if len(polygon) < 3:
            raise ParseError(f"{path}: face {face_index} has fewer than 3 vertices")
        if min(polygon) < 0 or max(polygon) >= len(vertices):
            raise ParseError(f"{path}: face {face_index} references a vertex out of range")
        triangles.extend(fan_triangulate(polygon))
    mesh = TriMesh(vertices, np.asarray(triangles, dtype=np.int64).reshape(-1, 3), object_id)
    mesh, dropped = drop_degenerate(mesh)
    if dropped:
        logger.warning("%s: dropped %d degenerate triangles", path, dropped)
    return mesh


def _read_ply(path: Path):
    try:
        ply = PlyData.read(str(path))
    except Exception as e:
        raise ParseError(f"{path}: malformed PLY ({e})") from e
    if not ply.text and ply.byte_order == '>':
        raise UnsupportedFormat(f"{path}: big-endian PLY is not supported")
    try:
        vertex = ply['vertex']
        face = ply['face']
    except KeyError as e:
        raise ParseError(f"{path}: missing element {e}") from e
    names = face.data.dtype.names or ()
    prop = 'vertex_indices' if 'vertex_indices' in names else 'vertex_index'
    if prop not in names:
        raise ParseError(f"{path}: face element has no vertex index list")
    vertices = np.stack([vertex['x'], vertex['y'], vertex['z']], axis=1).astype(float)
    return vertices, [list(f) for f in face[prop]]


def _parse_obj_index(token: str, vertex_count: int, path: Path, line_no: int) -> int:
    try:
        index = int(token.split('/')[0])
    except ValueError as e:
        raise ParseError(f"{path}:{line_no}: bad face index {token!r}") from e
    if index == 0:
        raise ParseError(f"{path}:{line_no}: OBJ indices start at 1")
    return index - 1 if index > 0 else vertex_count + index


def _read_obj(path: Path):
    vertices, polygons = [], []
    with open(path, 'r', encoding='utf-8', errors='replace') as fh:
        for line_no, line in enumerate(fh, 1):
            elements = line.split()
            if not elements or elements[0].startswith('#'):
                continue
            if elements[0] == 'v':
                try:
                    vertices.append([float(v) for v in elements[1:4]])
                except ValueError as e:
                    raise ParseError(f"{path}:{line_no}: bad vertex") from e
                if len(vertices[-1]) != 3:
                    raise ParseError(f"{path}:{line_no}: vertex needs three coordinates")
            elif elements[0] == 'f':
                polygons.append([_parse_obj_index(t, len(vertices), path, line_no) for t in elements[1:]])
    return vertices, polygons


def load_mesh(path: PathLike, object_id: Optional[int] = None) -> TriMesh:
    """Load a PLY (ascii or binary little-endian) or OBJ mesh."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == '.ply':
        vertices, polygons = _read_ply(path)
    elif suffix == '.obj':
        vertices, polygons = _read_obj(path)
    else:
        raise UnsupportedFormat(f"{path}: unsupported mesh format {suffix!r}")
    if object_id is None:
        object_id = _object_id_from_path(path)
    return _build_mesh(vertices, polygons, object_id, path)


def write_mesh_ply(mesh: TriMesh, path: PathLike, text: bool = True) -> None:
    vertex = np.array([tuple(v) for v in mesh.vertices],
                      dtype=[('x', 'f8'), ('y', 'f8'), ('z', 'f8')])
    face = np.empty(len(mesh.triangles), dtype=[('vertex_indices', 'i4', (3,))])
    face['vertex_indices'] = mesh.triangles
    ply = PlyData([PlyElement.describe(vertex, 'vertex'),
                   PlyElement.describe(face, 'face')], text=text, byte_order='<')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        ply.write(str(path))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def empty_mask(k: CameraIntrinsics) -> np.ndarray:
    return np.zeros(k.shape, dtype=bool)


def _clip_near(tri: np.ndarray, z_near: float) -> List[np.ndarray]:
    """Clip one camera-frame triangle to z > z_near; returns 0-2 triangles."""
    polygon = []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        a_in, b_in = a[2] > z_near, b[2] > z_near
        if a_in:
            polygon.append(a)
        if a_in != b_in:
            s = (z_near - a[2]) / (b[2] - a[2])
            point = a + s * (b - a)
            point[2] = z_near
            polygon.append(point)
    if len(polygon) < 3:
        return []
    return [np.array([polygon[0], polygon[i], polygon[i + 1]]) for i in range(1, len(polygon) - 1)]


def camera_triangles(mesh: TriMesh, relative_pose: Pose, z_near: float = Z_NEAR_MM) -> np.ndarray:
    """Mesh triangles in the camera frame, clipped to the near plane, (m, 3, 3)."""
    if len(mesh.triangles) == 0:
        return np.zeros((0, 3, 3))
    cam = transform_points(relative_pose, mesh.vertices)[mesh.triangles]
    in_front = cam[:, :, 2] > z_near
    keep = [cam[in_front.all(axis=1)]]
    for tri in cam[in_front.any(axis=1) & ~in_front.all(axis=1)]:
        keep.extend(t[None] for t in _clip_near(tri, z_near))
    return np.concatenate(keep, axis=0) if keep else np.zeros((0, 3, 3))


def project_triangles(tris: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Camera-frame triangles (all z > 0) to pixel triangles, (m, 3, 2)."""
    xy = tris[:, :, :2] / tris[:, :, 2:3]
    return k.to_pixels(xy)


def _is_top_left(d: np.ndarray) -> bool:
    return (d[1] == 0.0 and d[0] > 0.0) or d[1] < 0.0


def _fill_triangle(mask: np.ndarray, tri: np.ndarray) -> None:
    a, b, c = tri
    area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if not np.isfinite(area2) or abs(area2) < 1e-12:
        return
    if area2 < 0:
        b, c = c, b
    height, width = mask.shape
    c0 = max(int(np.ceil(min(a[0], b[0], c[0]))), 0)
    c1 = min(int(np.floor(max(a[0], b[0], c[0]))), width - 1)
    r0 = max(int(np.ceil(min(a[1], b[1], c[1]))), 0)
    r1 = min(int(np.floor(max(a[1], b[1], c[1]))), height - 1)
    if c0 > c1 or r0 > r1:
        return
    us = np.arange(c0, c1 + 1, dtype=float)[None, :]
    vs = np.arange(r0, r1 + 1, dtype=float)[:, None]
    inside = np.ones((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
    for p, q in ((a, b), (b, c), (c, a)):
        d = q - p
        e = d[0] * (vs - p[1]) - d[1] * (us - p[0])
        if _is_top_left(d):
            inside &= e >= 0.0
        else:
            inside &= e > 0.0
    mask[r0:r1 + 1, c0:c1 + 1] |= inside


def rasterize_mask(mesh: TriMesh, relative_pose: Pose, k: CameraIntrinsics,
                   z_near: float = Z_NEAR_MM) -> np.ndarray:
    """Binary silhouette of mesh at the object-to-camera pose."""
    mask = empty_mask(k)
    tris = camera_triangles(mesh, relative_pose, z_near)
    if len(tris) == 0:
        return mask
    for tri in project_triangles(tris, k):
        _fill_triangle(mask, tri)
    return mask


def raycast_mask(mesh: TriMesh, relative_pose: Pose, k: CameraIntrinsics,
                 z_near: float = Z_NEAR_MM, front_faces_only: bool = False) -> np.ndarray:
    """Brute-force silhouette: one Möller-Trumbore ray per pixel centre.

    O(pixels x triangles); meant as a test oracle for rasterize_mask. When the
    whole mesh lies in front of the camera only pixels inside the projected
    vertex bounds are cast.
    """
    mask = empty_mask(k)
    if len(mesh.triangles) == 0:
        return mask
    cam = transform_points(relative_pose, mesh.vertices)
    r0, r1, c0, c1 = 0, k.height - 1, 0, k.width - 1
    if not k.has_distortion and np.all(cam[:, 2] > z_near):
        uv = k.to_pixels(cam[:, :2] / cam[:, 2:3])
        c0, c1 = max(c0, int(np.floor(uv[:, 0].min()))), min(c1, int(np.ceil(uv[:, 0].max())))
        r0, r1 = max(r0, int(np.floor(uv[:, 1].min()))), min(r1, int(np.ceil(uv[:, 1].max())))
        if c0 > c1 or r0 > r1:
            return mask
    rows, cols = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    uv = np.stack([cols.ravel(), rows.ravel()], axis=1).astype(float)
    xy = k.to_normalized(uv)
    dirs = np.hstack([xy, np.ones((len(xy), 1))])
    hit = np.zeros(len(dirs), dtype=bool)

    for v0, v1, v2 in cam[mesh.triangles]:
        e1, e2 = v1 - v0, v2 - v0
        pvec = np.cross(dirs, e2)
        det = pvec @ e1
        valid = det > 1e-12 if front_faces_only else np.abs(det) > 1e-12
        if not valid.any():
            continue
        inv = np.zeros_like(det)
        inv[valid] = 1.0 / det[valid]
        tvec = -v0
        u = (pvec @ tvec) * inv
        qvec = np.cross(tvec, e1)
        v = (dirs @ qvec) * inv
        t = (e2 @ qvec) * inv
        hit |= valid & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > z_near)
    mask[r0:r1 + 1, c0:c1 + 1] = hit.reshape(rows.shape)
    return mask


def aggregate_masks(masks: Sequence[np.ndarray], shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Pixelwise union; ``shape`` gives the result for an empty list."""
    if not masks:
        if shape is None:
            raise InvalidInput("cannot aggregate an empty list without a shape")
        return np.zeros(shape, dtype=bool)
    first = masks[0].shape
    for m in masks[1:]:
        if m.shape != first:
            raise DimensionMismatch(f"mask shapes differ: {first} vs {m.shape}")
    if shape is not None and tuple(shape) != first:
        raise DimensionMismatch(f"masks are {first}, expected {tuple(shape)}")
    return np.logical_or.reduce([np.asarray(m, dtype=bool) for m in masks])


def mask_outline(mask: np.ndarray) -> np.ndarray:
    """One-pixel boundary of a silhouette."""
    return mask & ~ndimage.binary_erosion(mask)
