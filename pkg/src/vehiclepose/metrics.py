"""Pose and keypoint error metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NotARotation
from .wireframe import K


def _check_rotation(r: np.ndarray, name: str) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise NotARotation(f"{name} must be 3x3, got {r.shape}")
    if np.abs(r.T @ r - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(r) - 1.0) > 1e-6:
        raise NotARotation(f"{name} is not a proper rotation")
    return r


def rotation_error(r1, r2) -> float:
    """Geodesic distance between two rotations in radians, in [0, pi].

    Equals the Frobenius norm of log(R1^T R2) over sqrt(2). The angle comes from
    atan2 of the skew part against the trace, which stays accurate near 0 and pi
    where a bare arccos of the trace loses about half the digits.
    """
    r1 = _check_rotation(r1, "r1")
    r2 = _check_rotation(r2, "r2")
    m = r1.T @ r2
    skew = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    return float(np.arctan2(np.linalg.norm(skew), np.trace(m) - 1.0))


def translation_error(points1, points2) -> float:
    """Distance in meters between the centroids of two point sets."""
    p1 = np.asarray(points1, dtype=float).reshape(-1, 3)
    p2 = np.asarray(points2, dtype=float).reshape(-1, 3)
    if len(p1) != len(p2) or len(p1) == 0:
        raise LengthMismatch(f"point sets must have equal nonzero length, got {len(p1)} and {len(p2)}")
    return float(np.linalg.norm(p1.mean(axis=0) - p2.mean(axis=0)))


def per_keypoint_errors(estimated, truth) -> tuple[np.ndarray, float]:
    """Per-keypoint Euclidean errors in centimeters and their mean."""
    est = np.asarray(estimated, dtype=float).reshape(-1, 3)
    gt = np.asarray(truth, dtype=float).reshape(-1, 3)
    if len(est) != K or len(gt) != K:
        raise LengthMismatch(f"expected {K} keypoints each, got {len(est)} and {len(gt)}")
    err = 100.0 * np.linalg.norm(est - gt, axis=1)
    return err, float(err.mean())


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Errors of one method averaged over a batch of scenes."""

    method: str
    per_keypoint_cm: np.ndarray
    mean_cm: float
    rotation_deg: float
    translation_cm: float
    scene_count: int
    config_digest: str = ""
    dataset: str = "synthetic"
    failures: tuple[str, ...] = ()

    @classmethod
    def aggregate(
        cls,
        method: str,
        keypoint_errors_cm,
        rotation_deg,
        translation_cm,
        config_digest: str = "",
        dataset: str = "synthetic",
        failures=(),
    ) -> "EvalReport":
        """Average per-scene errors; ``rotation_deg`` entries may be NaN for pose-free methods."""
        ke = np.asarray(keypoint_errors_cm, dtype=float).reshape(-1, K)
        n = len(ke)
        per_kp = ke.mean(axis=0) if n else np.full(K, np.nan)
        rot = np.asarray(rotation_deg, dtype=float)
        return cls(
            method=method,
            per_keypoint_cm=per_kp,
            mean_cm=float(per_kp.mean()),
            rotation_deg=float(rot.mean()) if n and not np.all(np.isnan(rot)) else float("nan"),
            translation_cm=float(np.mean(translation_cm)) if n else float("nan"),
            scene_count=n,
            config_digest=config_digest,
            dataset=dataset,
            failures=tuple(failures),
        )
