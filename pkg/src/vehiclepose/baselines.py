"""Comparison methods: per-keypoint stereo triangulation and single-camera model fitting."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import AllZeroConfidence
from .geometry import Pose, apply_pose, backproject_directions, project_points, rot_z, triangulate_many
from .scenegen import SceneObservation
from .solver import SolverConfig, _relative_change, _Rays, align_to_rays
from .wireframe import K, WireframeModel


class Method(str, Enum):
    STEREO = "stereo"
    MONO = "mono"


@dataclass(frozen=True, eq=False)
class BaselineResult:
    method: Method
    world_keypoints: np.ndarray
    pose: Pose | None
    # stereo: triangulation gap in meters (inf for parallel rays); mono: reprojection error in pixels
    quality: np.ndarray
    camera_index: int | None = None
    iterations_used: int = 0

    def __post_init__(self):
        if np.shape(self.world_keypoints) != (K, 3):
            raise ValueError(f"world_keypoints must have shape ({K}, 3)")


def stereo_solve(scene: SceneObservation) -> BaselineResult:
    """Triangulate each keypoint independently; no shape model, no symmetry."""
    if scene.num_cameras != 2:
        raise ValueError("stereo_solve needs exactly two cameras")
    px = scene.pixels()
    points, gaps, ok = triangulate_many(scene.cameras[0], px[0], scene.cameras[1], px[1])
    return BaselineResult(Method.STEREO, points, None, np.where(ok, gaps, np.inf))


def _mono_start(scene: SceneObservation, camera_index: int, shape: np.ndarray, weights: np.ndarray, yaw: float) -> Pose:
    """Upright pose at ``yaw`` whose centroid sits on the mean viewing ray at a size-matched depth."""
    cam = scene.cameras[camera_index]
    px = scene.pixels()[camera_index]
    mean_px = weights @ px
    spread_px = np.sqrt(weights @ np.sum((px - mean_px) ** 2, axis=1))
    centroid = weights @ shape
    spread_m = np.sqrt(weights @ np.sum((shape - centroid) ** 2, axis=1))
    depth = np.mean(cam.focal_length_px) * spread_m / max(spread_px, 1e-6)
    direction = backproject_directions(cam, mean_px)[0]
    r = rot_z(yaw)
    return Pose(r, cam.center + depth * direction - r @ centroid)


def mono_solve(
    scene: SceneObservation,
    camera_index: int,
    initial_shape: WireframeModel,
    config: SolverConfig = SolverConfig(),
    n_yaw: int = 8,
    probe_iters: int = 15,
) -> BaselineResult:
    """Single-camera pose fit with a fixed shape and fixed confidence weights.

    Only the observations of ``camera_index`` are read. The upright start is picked
    among ``n_yaw`` headings by reprojection error after ``probe_iters`` iterations.
    """
    if not 0 <= camera_index < scene.num_cameras:
        raise IndexError(f"camera index {camera_index} out of range")
    cam = scene.cameras[camera_index]
    obs = scene.observations[camera_index]
    single = SceneObservation([cam], [obs])
    conf = single.confidences()[0]
    if np.all(conf <= 0):
        raise AllZeroConfidence(f"camera {camera_index} has zero confidence for every keypoint")
    weights = conf / conf.sum()
    shape = initial_shape.points
    rays = _Rays(single)
    px = single.pixels()[0]

    def cost(pose: Pose) -> float:
        posed = apply_pose(pose, shape)
        if np.any(cam.to_camera(posed)[:, 2] <= 1e-9):
            return np.inf
        return float(weights @ np.sum((project_points(cam, posed) - px) ** 2, axis=1))

    def run(pose: Pose, iters: int) -> tuple[Pose, int]:
        prev = cost(pose)
        for it in range(1, iters + 1):
            pose = align_to_rays(pose, shape, rays, weights)
            cur = cost(pose)
            if cur <= 1e-20 or _relative_change(prev, cur) < config.energy_tol:
                return pose, it
            prev = cur
        return pose, iters

    starts = [run(_mono_start(single, 0, shape, weights, 2 * np.pi * y / n_yaw), probe_iters)[0] for y in range(n_yaw)]
    best = min(starts, key=cost)
    pose, used = run(best, config.max_iters)
    world = apply_pose(pose, shape)
    err = np.linalg.norm(project_points(cam, world) - px, axis=1)
    return BaselineResult(Method.MONO, world, pose, err, camera_index, used + probe_iters)
