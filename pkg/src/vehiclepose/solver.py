"""Cross projection optimization (CPO) of vehicle pose and shape from several cameras.

One pose candidate is kept per camera. Each candidate carries its own keypoint
weight vector (row ``i`` of a :class:`WeightMatrix`), is aligned against the
observations of every camera, and is scored by projecting it into every image.
Weights are re-estimated from the cross-projection residuals each iteration, and
after a pose-only warm-up the shared wireframe is refined from all candidates
under the hierarchical shape constraints. Pose and shape steps are both
accepted only when they do not raise the cross-projection energy under the
current weights.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import AllZeroConfidence, BehindCamera, DegenerateConfiguration, NonPositiveDepth
from .geometry import (
    CameraModel,
    Pose,
    apply_pose,
    backproject_directions,
    closest_points_on_rays,
    project_points,
    rot_z,
    triangulate_many,
)
from .scenegen import KeypointObservation, SceneObservation
from .wireframe import K, HwcConfig, WireframeModel, clamp_step, hwc_project

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class SolverConfig:
    # initial weights: (confidence gain, cross-camera contrast)
    mu_init: tuple[float, float] = (1.0, 0.5)
    # weight update: (previous weight, residual fit, cross-camera contrast)
    mu_update: tuple[float, float, float] = (0.5, 0.3, 0.2)
    robust_sigma_px: float = 8.0
    warmup_iters: int = 10
    max_iters: int = 100
    energy_tol: float = 1e-6
    hwc: HwcConfig = field(default_factory=HwcConfig)
    # smallest backtracking fraction tried for a shape step before it is rejected
    min_shape_step: float = 0.25
    # keep weights at their initial values (used to study the pure alignment dynamics)
    freeze_weights: bool = False

    def __post_init__(self):
        if self.warmup_iters < 1:
            raise ValueError("warmup_iters must be >= 1")
        if self.warmup_iters >= self.max_iters:
            raise ValueError("warmup_iters must be smaller than max_iters")
        if self.energy_tol <= 0:
            raise ValueError("energy_tol must be positive")
        if not 0 < self.min_shape_step <= 1:
            raise ValueError("min_shape_step must be in (0, 1]")
        if self.robust_sigma_px <= 0:
            raise ValueError("robust_sigma_px must be positive")
        object.__setattr__(self, "mu_init", tuple(float(m) for m in self.mu_init))
        object.__setattr__(self, "mu_update", tuple(float(m) for m in self.mu_update))


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Per-camera keypoint weights; row ``i`` is the diagonal of camera ``i``'s matrix."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != K:
            raise ValueError(f"expected shape (C, {K}), got {v.shape}")
        if np.any(v < 0):
            raise ValueError("weights must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def num_cameras(self) -> int:
        return self.values.shape[0]

    def matrix(self, i: int) -> np.ndarray:
        return np.diag(self.values[i])

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return bool(np.all(self.values >= 0) and np.all(np.abs(self.values.sum(axis=1) - 1.0) <= tol))


@dataclass(frozen=True, eq=False)
class PoseCandidate:
    camera_index: int
    pose: Pose
    shape: WireframeModel
    last_energy: float = float("nan")


@dataclass(frozen=True, eq=False)
class Estimate:
    pose: Pose
    shape: WireframeModel
    world_keypoints: np.ndarray
    per_camera_energy: list[float]
    iterations_used: int
    trace: list[float]
    selected_camera: int = 0
    weights: WeightMatrix | None = None
    weight_trace: list[WeightMatrix] = field(default_factory=list)
    candidates: list[PoseCandidate] = field(default_factory=list)


def _others_mean(values: np.ndarray) -> np.ndarray:
    """Row i -> mean of all other rows (the other camera when C = 2)."""
    c = values.shape[0]
    if c == 1:
        return values.copy()
    return (values.sum(axis=0, keepdims=True) - values) / (c - 1)


def _normalize_rows(raw: np.ndarray) -> np.ndarray:
    raw = np.maximum(raw, WEIGHT_FLOOR)
    return raw / raw.sum(axis=1, keepdims=True)


def initial_weights(obs: SceneObservation, config: SolverConfig = SolverConfig()) -> WeightMatrix:
    """Confidence weights boosted where a camera sees a keypoint better than the other(s)."""
    conf = obs.confidences()
    empty = np.flatnonzero(np.all(conf <= 0, axis=1))
    if empty.size:
        raise AllZeroConfidence(f"camera {int(empty[0])} has zero confidence for every keypoint")
    gain, contrast = config.mu_init
    raw = gain * conf + contrast * (conf - _others_mean(conf))
    return WeightMatrix(_normalize_rows(raw))


def _pixels(obs) -> np.ndarray:
    if isinstance(obs, np.ndarray):
        return obs.astype(float).reshape(K, 2)
    return np.array([o.pixel for o in obs], dtype=float)


def _check_depth(camera: CameraModel, world: np.ndarray) -> None:
    if np.any(camera.to_camera(world)[:, 2] <= 1e-9):
        raise BehindCamera("posed model keypoint behind camera")


def correspondence_targets(
    camera: CameraModel, pose: Pose, shape: WireframeModel, obs: list[KeypointObservation]
) -> np.ndarray:
    """Closest point on each keypoint's viewing ray to the posed model keypoint."""
    posed = apply_pose(pose, shape.points)
    _check_depth(camera, posed)
    dirs = backproject_directions(camera, _pixels(obs))
    return closest_points_on_rays(camera.center, dirs, posed)


def weighted_rigid_align(source, target, weights) -> Pose:
    """Weighted least-squares rotation and translation taking ``source`` onto ``target``."""
    src = np.asarray(source, dtype=float)
    tgt = np.asarray(target, dtype=float)
    w = np.asarray(weights, dtype=float)
    if src.shape != tgt.shape or src.shape[0] != w.shape[0]:
        raise ValueError("source, target and weights must have matching lengths")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if np.count_nonzero(w > 0) < 3:
        raise DegenerateConfiguration("need at least three positively weighted points")
    w = w / w.sum()
    cs = w @ src
    ct = w @ tgt
    xs = src - cs
    sw = np.sqrt(w)[:, None]
    spread = np.linalg.svd(sw * xs, compute_uv=False)
    if spread[0] < 1e-12 or spread[1] < 1e-9 * spread[0]:
        raise DegenerateConfiguration("weighted source points are collinear or coincident")
    h = (w[:, None] * xs).T @ (tgt - ct)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(r, ct - r @ cs)


def cross_projection_residual(
    pose: Pose, shape: WireframeModel, camera: CameraModel, obs: list[KeypointObservation]
) -> np.ndarray:
    """(12, 2) pixel residuals of the posed model projected into ``camera``."""
    try:
        proj = project_points(camera, apply_pose(pose, shape.points))
    except NonPositiveDepth as exc:
        raise BehindCamera(str(exc)) from exc
    return proj - _pixels(obs)


def residual_tensor(poses: list[Pose], shape: WireframeModel, obs: SceneObservation) -> np.ndarray:
    """(C, C, 12) residual norms: candidate i projected into image j."""
    return np.array([
        [np.linalg.norm(cross_projection_residual(p, shape, cam, o), axis=1)
         for cam, o in zip(obs.cameras, obs.observations)]
        for p in poses
    ])


def _energy(res: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-candidate cross energy terms from a (C, C, K) residual tensor."""
    return 0.5 * np.einsum("ik,ijk->i", w, res ** 2)


def cross_energy(candidates: list[PoseCandidate], weights: WeightMatrix, obs: SceneObservation) -> float:
    if len(candidates) != obs.num_cameras:
        raise ValueError("need one candidate per camera")
    total = 0.0
    for cand in candidates:
        w = weights.values[cand.camera_index]
        for cam, o in zip(obs.cameras, obs.observations):
            r = cross_projection_residual(cand.pose, cand.shape, cam, o)
            total += 0.5 * float(w @ np.einsum("kd,kd->k", r, r))
    return total


def _robust_scale(res: np.ndarray, sigma: float) -> np.ndarray:
    """Per-candidate residual scale: ``sigma``, widened while residuals are still large."""
    return np.maximum(sigma, np.median(res, axis=(1, 2)))


def update_weights(
    weights: WeightMatrix, residuals, obs: SceneObservation, config: SolverConfig = SolverConfig()
) -> WeightMatrix:
    """One weight update from (C, C, 12) cross-projection residual norms.

    Row ``i`` rates camera ``i``'s observations: it mixes the previous weights, a
    decaying function of candidate ``i``'s residual in its own image, and the
    difference to the other camera(s).
    """
    res = np.asarray(residuals, dtype=float)
    c = weights.num_cameras
    if res.shape != (c, c, K):
        raise ValueError(f"residuals must have shape ({c}, {c}, {K}), got {res.shape}")
    keep, fit, contrast = config.mu_update
    w = weights.values
    r2 = np.einsum("iik->ik", res) ** 2
    scale = _robust_scale(res, config.robust_sigma_px)[:, None]
    decay = np.exp(-r2 / scale ** 2)
    raw = keep * w + fit * decay + contrast * (w - _others_mean(w))
    return WeightMatrix(_normalize_rows(raw))


def projection_weights(weights: WeightMatrix, residual_norms, sigma_px: float = 8.0) -> np.ndarray:
    """(C, 12) per-keypoint fusion weights, summing to one over cameras.

    ``weights`` are the confidence-derived keypoint weights; ``residual_norms`` is each
    candidate's reprojection error in its own image. The residual penalty is relative
    to the best camera's residual for that keypoint: sharp when one image fits and
    another does not, soft when none fits (a shape error rather than a bad observation).
    """
    r = np.asarray(residual_norms, dtype=float)
    best = r.min(axis=0, keepdims=True)
    raw = weights.values * np.exp(-(r - best) / (sigma_px + best))
    total = raw.sum(axis=0, keepdims=True)
    uniform = np.full_like(raw, 1.0 / raw.shape[0])
    return np.where(total > 0, raw / np.where(total > 0, total, 1.0), uniform)


def fuse_shapes(candidate_points, weights: WeightMatrix, residual_norms, sigma_px: float = 8.0) -> np.ndarray:
    pts = np.asarray(candidate_points, dtype=float)
    pw = projection_weights(weights, residual_norms, sigma_px)
    return np.einsum("ik,ikd->kd", pw, pts)


def fuse_shape(points_i, points_j, weights: WeightMatrix, residual_norms, sigma_px: float = 8.0) -> np.ndarray:
    """Per-keypoint convex combination of two candidates' body-frame shapes."""
    return fuse_shapes([points_i, points_j], weights, residual_norms, sigma_px)


def initial_pose(obs: SceneObservation, shape: WireframeModel) -> Pose:
    """Upright pose from triangulating the first two cameras' observations.

    Position comes from the wheel keypoints (all keypoints when a wheel is weakly
    detected); heading from the front-minus-back direction. Roll and pitch are zero.
    """
    if obs.num_cameras < 2:
        raise ValueError("initialization needs at least two cameras")
    px = obs.pixels()
    conf = obs.confidences()
    tri, _, ok = triangulate_many(obs.cameras[0], px[0], obs.cameras[1], px[1])
    quality = np.where(ok, np.minimum(conf[0], conf[1]), 0.0)
    body = shape.points

    wheels = np.arange(4)
    if quality[wheels].min() >= 0.5 * quality.max() and quality.max() > 0:
        front, back, pos_ids = np.array([0, 1]), np.array([2, 3]), wheels
    else:
        front = np.array([0, 1, 4, 5, 8, 9])
        back = np.array([2, 3, 6, 7, 10, 11])
        pos_ids = np.arange(K)

    def wmean(points, ids):
        q = quality[ids]
        if q.sum() <= 0:
            q = np.ones(len(ids))
        return q @ points[ids] / q.sum()

    heading_world = wmean(tri, front) - wmean(tri, back)
    heading_body = wmean(body, front) - wmean(body, back)
    yaw = np.arctan2(heading_world[1], heading_world[0]) - np.arctan2(heading_body[1], heading_body[0])
    r = rot_z(yaw)
    return Pose(r, wmean(tri, pos_ids) - r @ wmean(body, pos_ids))


class _Rays:
    """Back-projected viewing rays of every observation in a scene."""

    def __init__(self, obs: SceneObservation):
        px = obs.pixels()
        self.origins = np.array([cam.center for cam in obs.cameras])[:, None, :]
        self.directions = np.array([backproject_directions(cam, p) for cam, p in zip(obs.cameras, px)])

    def targets(self, posed: np.ndarray) -> np.ndarray:
        """(C, 12, 3) closest ray points to ``posed`` in every camera."""
        return closest_points_on_rays(self.origins, self.directions, posed[None, :, :])


def optimal_translation(rotation: np.ndarray, shape: np.ndarray, rays: _Rays, weights) -> np.ndarray:
    """Translation minimizing the weighted object-space error for a fixed rotation.

    Each ray contributes its orthogonal-complement projector ``I - d d^T``; the
    normal equations are a single 3x3 solve.
    """
    d = rays.directions
    c = d.shape[0]
    w = np.broadcast_to(weights, (c, K))
    comp = np.eye(3) - d[..., :, None] * d[..., None, :]
    a = np.einsum("ck,ckij->ij", w, comp)
    rotated = shape @ rotation.T
    b = np.einsum("ck,ckij,ckj->i", w, comp, rays.origins - rotated[None])
    return np.linalg.solve(a, b)


def align_to_rays(pose: Pose, shape: np.ndarray, rays: _Rays, weights) -> Pose:
    """One object-space iteration: lift to the rays, weighted rigid alignment, re-solve translation.

    ``weights`` is either one 12-vector applied in every camera, or a (C, 12) array.
    """
    targets = rays.targets(apply_pose(pose, shape))
    c = targets.shape[0]
    w = np.broadcast_to(weights, (c, K))
    aligned = weighted_rigid_align(np.tile(shape, (c, 1)), targets.reshape(-1, 3), w.reshape(-1))
    try:
        t = optimal_translation(aligned.rotation, shape, rays, w)
    except np.linalg.LinAlgError:
        return aligned
    return Pose(aligned.rotation, t)


def observation_weights(weights: WeightMatrix, i: int) -> np.ndarray:
    """(C, 12) alignment weights for candidate ``i``: a cross-image observation counts
    only as much as both cameras trust that keypoint."""
    w = weights.values
    return np.minimum(w[i][None, :], w)


def _shape_proposal(pose: Pose, shape: np.ndarray, rays: _Rays, camera: int) -> np.ndarray:
    """Gauss-Newton step of one candidate's keypoints onto its own camera's viewing rays."""
    posed = apply_pose(pose, shape)
    targets = closest_points_on_rays(rays.origins[camera], rays.directions[camera], posed)
    return (targets - pose.translation) @ pose.rotation


def _relative_change(prev: float, cur: float) -> float:
    return abs(prev - cur) / max(abs(prev), 1e-300)


def cpo_solve(
    scene: SceneObservation, initial_shape: WireframeModel, config: SolverConfig = SolverConfig()
) -> Estimate:
    c = scene.num_cameras
    if c < 2:
        raise ValueError("cpo_solve needs at least two cameras")
    rays = _Rays(scene)
    weights = initial_weights(scene, config)
    shape = initial_shape
    pose0 = initial_pose(scene, shape)
    poses = [pose0] * c

    res = residual_tensor(poses, shape, scene)
    trace = [float(_energy(res, weights.values).sum())]
    weight_trace = [weights]
    iterations = 0

    def align_all(shape):
        new = [align_to_rays(poses[i], shape.points, rays, observation_weights(weights, i)) for i in range(c)]
        r = residual_tensor(new, shape, scene)
        return new, r, float(_energy(r, weights.values).sum())

    for it in range(1, config.max_iters + 1):
        iterations = it
        trial = None
        if it > config.warmup_iters:
            proposals = [_shape_proposal(poses[i], shape.points, rays, i) for i in range(c)]
            fused = fuse_shapes(proposals, weight_trace[0], np.einsum("iik->ik", res), config.robust_sigma_px)
            trial = hwc_project(clamp_step(shape.points, fused, config.hwc.max_step), config.hwc)

        new_poses, new_res, energy = align_all(shape)
        # alignment minimizes object-space error; keep the current poses if pixel energy would rise
        current = float(_energy(res, weights.values).sum())
        if energy > current:
            new_poses, new_res, energy = poses, res, current
        # shape steps must not raise the energy: backtrack, then fall back to the current shape
        step = 1.0
        while trial is not None and step >= config.min_shape_step:
            cand = trial if step == 1.0 else hwc_project(shape.points + step * (trial.points - shape.points), config.hwc)
            cand_poses, cand_res, cand_energy = align_all(cand)
            if cand_energy <= energy:
                shape, new_poses, new_res, energy = cand, cand_poses, cand_res, cand_energy
                break
            step *= 0.5
        poses, res = new_poses, new_res
        trace.append(energy)
        if not config.freeze_weights:
            weights = update_weights(weights, res, scene, config)
        weight_trace.append(weights)

        if trace[-1] <= 1e-20:
            break
        if it > config.warmup_iters + 1 and _relative_change(trace[-2], trace[-1]) < config.energy_tol:
            break
    else:
        log.debug("scene %s: no convergence after %d iterations", scene.scene_id, config.max_iters)

    # score the final state with the weights it was aligned under
    final_w = weight_trace[-2] if len(weight_trace) > 1 else weights
    energies = _energy(res, final_w.values)
    best = int(np.argmin(energies))
    candidates = [PoseCandidate(i, poses[i], shape, float(energies[i])) for i in range(c)]
    return Estimate(
        pose=poses[best],
        shape=shape,
        world_keypoints=apply_pose(poses[best], shape.points),
        per_camera_energy=[float(e) for e in energies],
        iterations_used=iterations,
        trace=trace,
        selected_camera=best,
        weights=weights,
        weight_trace=weight_trace,
        candidates=candidates,
    )
