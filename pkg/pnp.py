"""Camera pose from 2D-3D correspondences.

A linear DLT estimate seeds a damped Gauss-Newton (Levenberg-Marquardt)
refinement of the reprojection error. The pose returned maps world (mocap)
points into the camera frame; the camera's pose in the world is its inverse.
"""

import logging
from dataclasses import dataclass
import numpy as np
from scipy.spatial import cKDTree

from config import (PNP_MIN_POINTS, PNP_MAX_ITER, PNP_TOL_PX, LM_LAMBDA_INIT, LM_LAMBDA_MAX,
                    COPLANARITY_RATIO, DUPLICATE_POINT_MM, Z_NEAR_MM)
from errors import DegenerateConfiguration, InvalidInput, NonFiniteResidual, TooFewPoints
from geometry import CameraIntrinsics, Pose, orthonormalize, rotation_from_rotvec, transform_points

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Paired world points (mm) and observed pixels for one camera."""

    points_3d: np.ndarray
    points_2d: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        p3 = np.array(self.points_3d, dtype=float).reshape(-1, 3)
        p2 = np.array(self.points_2d, dtype=float).reshape(-1, 2)
        if len(p3) != len(p2):
            raise InvalidInput(f"{len(p3)} 3D points but {len(p2)} 2D points")
        if not (np.all(np.isfinite(p3)) and np.all(np.isfinite(p2))):
            raise InvalidInput("correspondences must be finite")
        if len(p3) > 1 and cKDTree(p3).query_pairs(DUPLICATE_POINT_MM):
            raise DegenerateConfiguration("two 3D points coincide")
        p3.flags.writeable = False
        p2.flags.writeable = False
        object.__setattr__(self, 'points_3d', p3)
        object.__setattr__(self, 'points_2d', p2)

    @property
    def n(self) -> int:
        return len(self.points_3d)


@dataclass(frozen=True, eq=False)
class PnPSolution:
    pose: Pose
    rms_reprojection_error: float
    iterations: int


def solve_dlt(c: Correspondences) -> Pose:
    """Linear estimate of [R|t] from non-coplanar correspondences."""
    if c.n < PNP_MIN_POINTS:
        raise TooFewPoints(f"need at least {PNP_MIN_POINTS} correspondences, got {c.n}")

    centroid = c.points_3d.mean(axis=0)
    centered = c.points_3d - centroid
    spread = np.linalg.svd(centered, compute_uv=False)
    if spread[-1] < COPLANARITY_RATIO * spread[0]:
        raise DegenerateConfiguration(
            "3D points are (nearly) coplanar; board placements need more orientation diversity")

    # Centre and scale the points for conditioning.
    scale = np.sqrt(np.mean(np.sum(centered ** 2, axis=1)))
    xh = np.hstack([centered / scale, np.ones((c.n, 1))])
    xy = c.intrinsics.to_normalized(c.points_2d)

    a = np.zeros((2 * c.n, 12))
    a[0::2, 0:4] = xh
    a[0::2, 8:12] = -xy[:, 0:1] * xh
    a[1::2, 4:8] = xh
    a[1::2, 8:12] = -xy[:, 1:2] * xh
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] <= 1e-12 * sv[0]:
        raise DegenerateConfiguration("DLT system is rank deficient")
    p = vt[-1].reshape(3, 4)

    # The normalized centroid sits at the origin, so p[2, 3] is its depth.
    if p[2, 3] < 0:
        p = -p
    m = p[:, :3]
    lam = np.linalg.svd(m, compute_uv=False).mean() / scale
    rotation = orthonormalize(m)
    translation = (p[:, 3] - m @ centroid / scale) / lam
    return Pose(rotation, translation)


def _project_pinhole(k: CameraIntrinsics, cam: np.ndarray) -> np.ndarray:
    return np.stack([k.fx * cam[:, 0] / cam[:, 2] + k.cx,
                     k.fy * cam[:, 1] / cam[:, 2] + k.cy], axis=1)


def _jacobian(k: CameraIntrinsics, cam: np.ndarray) -> np.ndarray:
    """d(pixels)/d(rotvec, translation) for a left-multiplied perturbation."""
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    zeros = np.zeros_like(z)
    d_pix = np.empty((len(cam), 2, 3))
    d_pix[:, 0] = np.stack([k.fx / z, zeros, -k.fx * x / z ** 2], axis=1)
    d_pix[:, 1] = np.stack([zeros, k.fy / z, -k.fy * y / z ** 2], axis=1)
    # d(cam)/d(omega) = -[cam]x
    d_rot = np.empty((len(cam), 3, 3))
    d_rot[:, 0] = np.stack([zeros, z, -y], axis=1)
    d_rot[:, 1] = np.stack([-z, zeros, x], axis=1)
    d_rot[:, 2] = np.stack([y, -x, zeros], axis=1)
    jac = np.concatenate([np.einsum('nij,njk->nik', d_pix, d_rot), d_pix], axis=2)
    return jac.reshape(-1, 6)


def _apply_update(pose: Pose, delta: np.ndarray) -> Pose:
    step = rotation_from_rotvec(delta[:3])
    return Pose(step @ pose.rotation, step @ pose.translation + delta[3:])


def reprojection_residuals(c: Correspondences, pose: Pose) -> np.ndarray:
    """Projected minus observed pixel for every correspondence, shape (n, 2)."""
    observed = c.intrinsics.undistort_points(c.points_2d)
    cam = transform_points(pose, c.points_3d)
    return _project_pinhole(c.intrinsics, cam) - observed


def refine_gauss_newton(c: Correspondences, init: Pose, max_iter: int = PNP_MAX_ITER,
                        tol: float = PNP_TOL_PX) -> PnPSolution:
    """Minimise squared reprojection error over a 6-DOF local perturbation.

    Steps that raise the error, or put a point behind the camera, are rejected
    and the damping grows, so the RMS never increases.
    """
    if max_iter < 1:
        raise InvalidInput("max_iter must be at least 1")
    k = c.intrinsics
    observed = k.undistort_points(c.points_2d)

    def evaluate(pose: Pose):
        cam = transform_points(pose, c.points_3d)
        if np.any(cam[:, 2] <= Z_NEAR_MM):
            return None, cam
        residual = (_project_pinhole(k, cam) - observed).ravel()
        if not np.all(np.isfinite(residual)):
            return None, cam
        return residual, cam

    pose = init
    residual, cam = evaluate(pose)
    if residual is None:
        raise NonFiniteResidual("initial pose puts correspondences behind the camera")
    cost = float(residual @ residual)
    lam = LM_LAMBDA_INIT
    iterations = 0

    for _ in range(max_iter):
        jac = _jacobian(k, cam)
        jtj = jac.T @ jac
        grad = jac.T @ residual
        accepted = None
        while lam < LM_LAMBDA_MAX:
            hessian = jtj + lam * np.diag(np.diag(jtj))
            try:
                delta = -np.linalg.solve(hessian, grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = _apply_update(pose, delta)
            new_residual, new_cam = evaluate(candidate)
            if new_residual is not None:
                new_cost = float(new_residual @ new_residual)
                if new_cost <= cost:
                    accepted = (candidate, new_residual, new_cam, new_cost)
                    break
            lam *= 10.0
        if accepted is None:
            break
        iterations += 1
        lam /= 10.0
        old_rms = np.sqrt(cost / c.n)
        pose, residual, cam, cost = accepted
        if old_rms - np.sqrt(cost / c.n) < tol:
            break

    rms = float(np.sqrt(cost / c.n))
    logger.debug("refined pose in %d iterations, rms %.4f px", iterations, rms)
    return PnPSolution(pose, rms, iterations)


def solve_pnp(c: Correspondences) -> PnPSolution:
    return refine_gauss_newton(c, solve_dlt(c), PNP_MAX_ITER, PNP_TOL_PX)
