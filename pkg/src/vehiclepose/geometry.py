"""Pinhole cameras, rigid poses, rays and two-view triangulation.

Conventions: world frame is z-up; camera frame is x right, y down, z forward.
A camera stores the world->camera transform, ``x_cam = R @ x_world + t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRays, NonPositiveDepth

MIN_DEPTH = 1e-9
PARALLEL_TOL = 1e-9


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        return False
    return bool(np.abs(r.T @ r - np.eye(3)).max() <= tol and abs(np.linalg.det(r) - 1.0) <= tol)


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues' formula; ``axis`` need not be normalized."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation from a random unit quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _as_rotation(r) -> np.ndarray:
    r = np.array(r, dtype=float).reshape(3, 3)
    if not is_rotation(r):
        raise ValueError("rotation must be orthonormal with determinant +1")
    r.setflags(write=False)
    return r


def _as_vec3(v) -> np.ndarray:
    v = np.array(v, dtype=float).reshape(3)
    v.setflags(write=False)
    return v


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform taking body-frame points to world coordinates."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)


@dataclass(frozen=True, eq=False)
class CameraModel:
    focal_length_px: tuple[float, float]
    principal_point_px: tuple[float, float]
    image_size_px: tuple[int, int]
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        fx, fy = (float(v) for v in self.focal_length_px)
        if fx <= 0 or fy <= 0:
            raise ValueError("focal lengths must be positive")
        w, h = (int(v) for v in self.image_size_px)
        if w <= 0 or h <= 0:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "focal_length_px", (fx, fy))
        object.__setattr__(self, "principal_point_px", tuple(float(v) for v in self.principal_point_px))
        object.__setattr__(self, "image_size_px", (w, h))
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        return self.rotation[2].copy()

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.array(self.direction, dtype=float).reshape(3)
        n = np.linalg.norm(d)
        if not n > 0:
            raise ValueError("ray direction must be nonzero")
        d = d / n
        d.setflags(write=False)
        object.__setattr__(self, "origin", _as_vec3(self.origin))
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def apply_pose(pose: Pose, points) -> np.ndarray:
    """Return ``R p + T`` for every row of ``points``."""
    pts = np.asarray(points, dtype=float)
    return pts @ pose.rotation.T + pose.translation


def project_points(camera: CameraModel, points) -> np.ndarray:
    """Vectorized pinhole projection of an (N, 3) array of world points."""
    pc = camera.to_camera(np.atleast_2d(points))
    z = pc[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise NonPositiveDepth(f"{int(np.sum(z <= MIN_DEPTH))} point(s) at non-positive depth")
    (fx, fy), (cx, cy) = camera.focal_length_px, camera.principal_point_px
    return np.column_stack((fx * pc[:, 0] / z + cx, fy * pc[:, 1] / z + cy))


def project(camera: CameraModel, point) -> np.ndarray:
    return project_points(camera, np.asarray(point, dtype=float).reshape(1, 3))[0]


def backproject_directions(camera: CameraModel, pixels) -> np.ndarray:
    """Unit world-frame viewing directions for an (N, 2) array of pixels."""
    px = np.atleast_2d(np.asarray(pixels, dtype=float))
    (fx, fy), (cx, cy) = camera.focal_length_px, camera.principal_point_px
    d_cam = np.column_stack(((px[:, 0] - cx) / fx, (px[:, 1] - cy) / fy, np.ones(len(px))))
    d = d_cam @ camera.rotation  # R^T applied row-wise
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def backproject_ray(camera: CameraModel, pixel) -> Ray:
    return Ray(camera.center, backproject_directions(camera, pixel)[0])


def closest_points_on_rays(origins, directions, points) -> np.ndarray:
    """Row-wise ``closest_point_on_ray``; ``origins`` broadcasts against the others."""
    origins = np.asarray(origins, dtype=float)
    directions = np.asarray(directions, dtype=float)
    points = np.asarray(points, dtype=float)
    t = np.einsum("...i,...i->...", points - origins, directions)
    return origins + np.maximum(t, 0.0)[..., None] * directions


def closest_point_on_ray(ray: Ray, point) -> np.ndarray:
    # t is clamped at zero so a target can never land behind the camera
    return closest_points_on_rays(ray.origin, ray.direction, np.asarray(point, dtype=float))


def _midpoint(oa, da, ob, db):
    cross = np.cross(da, db)
    denom = np.einsum("...i,...i->...", cross, cross)
    w0 = oa - ob
    b = np.einsum("...i,...i->...", da, db)
    d = np.einsum("...i,...i->...", da, w0)
    e = np.einsum("...i,...i->...", db, w0)
    ok = np.sqrt(denom) > PARALLEL_TOL
    safe = np.where(ok, denom, 1.0)
    # parallel rays: foot of ray a's origin on ray b
    s = np.where(ok, (b * e - d) / safe, 0.0)
    t = np.where(ok, (e - b * d) / safe, e)
    pa = oa + s[..., None] * da
    pb = ob + t[..., None] * db
    return 0.5 * (pa + pb), np.linalg.norm(pa - pb, axis=-1), ok


def triangulate(cam_a: CameraModel, px_a, cam_b: CameraModel, px_b) -> tuple[np.ndarray, float]:
    """Midpoint of the common perpendicular between two viewing rays, and its length."""
    ra, rb = backproject_ray(cam_a, px_a), backproject_ray(cam_b, px_b)
    point, gap, ok = _midpoint(ra.origin, ra.direction, rb.origin, rb.direction)
    if not ok:
        raise DegenerateRays("viewing rays are parallel")
    return point, float(gap)


def triangulate_many(cam_a: CameraModel, px_a, cam_b: CameraModel, px_b):
    """Vectorized ``triangulate``.

    Returns ``(points, gaps, ok)``. Rows where ``ok`` is False had parallel rays; they
    hold the midpoint between camera A's center and its foot on ray B.
    """
    da = backproject_directions(cam_a, px_a)
    db = backproject_directions(cam_b, px_b)
    oa = np.broadcast_to(cam_a.center, da.shape)
    ob = np.broadcast_to(cam_b.center, db.shape)
    return _midpoint(oa, da, ob, db)


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World->camera (R, t) for a camera at ``center`` looking at ``target``."""
    center = np.asarray(center, dtype=float)
    fwd = np.asarray(target, dtype=float) - center
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    right /= n
    down = np.cross(fwd, right)
    r = np.vstack((right, down, fwd))
    return r, -r @ center
