"""Rigid transforms, rotations, camera intrinsics and pinhole projection.

All lengths are millimetres, all image coordinates pixels. Pixel centres sit
on integer coordinates: pixel (row r, column c) is centred at (u=c, v=r),
which is the convention the camera matrix K uses.

Quaternions cross the I/O boundary as (qx, qy, qz, qw), w last, Hamilton
convention, which is also what ``scipy.spatial.transform.Rotation`` expects.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple
import numpy as np
from scipy.spatial.transform import Rotation

from config import Z_NEAR_MM, ROTATION_TOLERANCE
from errors import ConfigError, InvalidInput

# Above this the matrix is rejected rather than silently repaired.
_REPAIRABLE_DRIFT = 1e-6


def _readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


def rotation_drift(r: np.ndarray) -> float:
    """Max-norm distance of RᵀR from the identity."""
    return float(np.abs(r.T @ r - np.eye(3)).max())


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Closest proper rotation to r (orthogonal polar factor)."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def is_rotation(r: np.ndarray, tol: float = ROTATION_TOLERANCE) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return rotation_drift(r) < tol and abs(np.linalg.det(r) - 1.0) <= tol


def rotation_from_quat(q: Sequence[float]) -> np.ndarray:
    return Rotation.from_quat(np.asarray(q, dtype=float)).as_matrix()


def quat_from_rotation(r: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(r).as_quat()


def rotation_from_rotvec(rotvec: Sequence[float], degrees: bool = False) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=float), degrees=degrees).as_matrix()


def rotation_about(axis: str, angle: float, degrees: bool = False) -> np.ndarray:
    """Rotation about one of the x, y, z axes."""
    return Rotation.from_euler(axis, angle, degrees=degrees).as_matrix()


def rotation_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic distance between two rotations, in radians."""
    return float(Rotation.from_matrix(np.asarray(a).T @ np.asarray(b)).magnitude())


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform in SE(3): x' = R x + t, translation in millimetres.

    Naming follows the transform chain: ``pose_a_b`` maps coordinates in
    frame b into frame a.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidInput("pose components must be finite")
        drift = rotation_drift(r)
        if drift > _REPAIRABLE_DRIFT or np.linalg.det(r) <= 0.0:
            raise InvalidInput(f"not a proper rotation (drift {drift:.3g})")
        if drift > ROTATION_TOLERANCE:
            r = orthonormalize(r)
        object.__setattr__(self, 'rotation', _readonly(r))
        object.__setattr__(self, 'translation', _readonly(t))

    @classmethod
    def identity(cls) -> 'Pose':
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, h: np.ndarray) -> 'Pose':
        h = np.asarray(h, dtype=float)
        if h.shape != (4, 4) or not np.allclose(h[3], [0.0, 0.0, 0.0, 1.0]):
            raise InvalidInput("expected a 4x4 homogeneous matrix")
        return cls(h[:3, :3], h[:3, 3])

    @classmethod
    def from_translation(cls, t: Sequence[float]) -> 'Pose':
        return cls(np.eye(3), t)

    @property
    def matrix(self) -> np.ndarray:
        h = np.eye(4)
        h[:3, :3] = self.rotation
        h[:3, 3] = self.translation
        return h

    def __matmul__(self, other: 'Pose') -> 'Pose':
        return compose(self, other)

    def __repr__(self) -> str:
        q = np.round(quat_from_rotation(self.rotation), 6).tolist()
        t = np.round(self.translation, 3).tolist()
        return f"Pose(t={t}, q={q})"


def compose(a: Pose, b: Pose) -> Pose:
    """Homogeneous product H_a · H_b."""
    r = a.rotation @ b.rotation
    t = transform_points(a, b.translation)[0]
    if rotation_drift(r) > ROTATION_TOLERANCE:
        r = orthonormalize(r)
    return Pose(r, t)


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -(rt @ p.translation))


def transform_points(p: Pose, points: np.ndarray) -> np.ndarray:
    """Apply p to an (n, 3) array of points.

    Spelled out elementwise so a single point and a batch round identically.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    r = p.rotation
    return (points[:, 0:1] * r[:, 0] + points[:, 1:2] * r[:, 1]
            + points[:, 2:3] * r[:, 2] + p.translation)


def transform_point(p: Pose, x: Sequence[float]) -> np.ndarray:
    return transform_points(p, x)[0]


def pose_from_quat(t: Sequence[float], q: Sequence[float]) -> Pose:
    return Pose(rotation_from_quat(q), t)


def pose_to_quat(p: Pose) -> Tuple[np.ndarray, np.ndarray]:
    return p.translation.copy(), quat_from_rotation(p.rotation)


def perturb_pose(p: Pose, rotvec: Sequence[float], translation: Sequence[float],
                 degrees: bool = False) -> Pose:
    """Apply an offset expressed in p's own (local) frame."""
    delta = Pose(rotation_from_rotvec(rotvec, degrees=degrees), translation)
    return compose(p, delta)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera matrix plus image size, with optional radial terms."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"image size must be positive, got {self.width}x{self.height}")

    @classmethod
    def from_matrix(cls, k: np.ndarray, width: int, height: int,
                    k1: float = 0.0, k2: float = 0.0) -> 'CameraIntrinsics':
        k = np.asarray(k, dtype=float).reshape(3, 3)
        return cls(float(k[0, 0]), float(k[1, 1]), float(k[0, 2]), float(k[1, 2]),
                   int(width), int(height), k1, k2)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> Tuple[int, int]:
        """Image array shape (rows, columns)."""
        return (self.height, self.width)

    @property
    def has_distortion(self) -> bool:
        return self.k1 != 0.0 or self.k2 != 0.0

    def distort_normalized(self, xy: np.ndarray) -> np.ndarray:
        if not self.has_distortion:
            return xy
        r2 = np.sum(xy * xy, axis=-1, keepdims=True)
        return xy * (1.0 + self.k1 * r2 + self.k2 * r2 * r2)

    def to_pixels(self, xy: np.ndarray) -> np.ndarray:
        """Normalized image coordinates to pixels (distortion applied)."""
        xy = self.distort_normalized(np.asarray(xy, dtype=float))
        return np.stack([self.fx * xy[..., 0] + self.cx,
                         self.fy * xy[..., 1] + self.cy], axis=-1)

    def to_normalized(self, uv: np.ndarray, iterations: int = 20) -> np.ndarray:
        """Pixels to undistorted normalized coordinates."""
        uv = np.asarray(uv, dtype=float)
        xd = np.stack([(uv[..., 0] - self.cx) / self.fx,
                       (uv[..., 1] - self.cy) / self.fy], axis=-1)
        if not self.has_distortion:
            return xd
        x = xd.copy()
        for _ in range(iterations):
            r2 = np.sum(x * x, axis=-1, keepdims=True)
            x = xd / (1.0 + self.k1 * r2 + self.k2 * r2 * r2)
        return x

    def undistort_points(self, uv: np.ndarray) -> np.ndarray:
        """Map observed pixels to where an ideal pinhole would have put them."""
        if not self.has_distortion:
            return np.asarray(uv, dtype=float)
        x = self.to_normalized(uv)
        return np.stack([self.fx * x[..., 0] + self.cx,
                         self.fy * x[..., 1] + self.cy], axis=-1)

    def contains(self, uv: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Whether pixels fall inside the image, extended by a fractional margin."""
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        mx, my = margin * self.width, margin * self.height
        return ((uv[:, 0] >= -mx) & (uv[:, 0] < self.width + mx) &
                (uv[:, 1] >= -my) & (uv[:, 1] < self.height + my))


def projection_matrix(k: CameraIntrinsics, pose_cam_frame: Pose) -> np.ndarray:
    """P = K[R|t]."""
    return k.matrix @ np.hstack([pose_cam_frame.rotation, pose_cam_frame.translation[:, None]])


def project_points(k: CameraIntrinsics, pose_cam_frame: Pose, points: np.ndarray,
                   z_near: float = Z_NEAR_MM) -> Tuple[np.ndarray, np.ndarray]:
    """Project (n, 3) points given in some frame F; pose maps F into the camera.

    Returns pixel coordinates and a mask of points in front of the near plane.
    Pixels of points behind the plane are NaN.
    """
    cam = transform_points(pose_cam_frame, points)
    in_front = cam[:, 2] > z_near
    with np.errstate(divide='ignore', invalid='ignore'):
        xy = cam[:, :2] / cam[:, 2:3]
    uv = k.to_pixels(xy)
    uv[~in_front] = np.nan
    return uv, in_front


def project(k: CameraIntrinsics, cam_pose_of_point_frame: Pose, x: Sequence[float],
            z_near: float = Z_NEAR_MM) -> Optional[np.ndarray]:
    """Project one point; None signals it is behind the near plane.

    The returned pixel may lie outside the image; callers filter.
    """
    uv, in_front = project_points(k, cam_pose_of_point_frame, np.asarray(x, dtype=float)[None, :], z_near)
    if not in_front[0]:
        return None
    return uv[0]
