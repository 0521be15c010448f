"""Twelve-keypoint vehicle wireframe and the hierarchical shape constraints.

Body frame: x forward, y left, z up, medial plane y = 0. The twelve keypoints form
six left/right pairs, grouped into three layers of two pairs each (front, back):

    wheels   (1, 2) front  (3, 4) back
    lights   (5, 6) front  (7, 8) back
    rooftop  (9, 10) windshield top  (11, 12) rear window top

Every layer is handled through a per-pair parametrization ``(x, half_width, z)``:
a pair is mirror-symmetric exactly when it equals ``(x, +w, z), (x, -w, z)``. A
symmetric layer is then automatically an isosceles trapezoid whose plane contains
the y axis, i.e. it is perpendicular to the medial plane. The wheel layer further
shares ``half_width`` and ``z`` across its two pairs (a rectangle).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

K = 12

KEYPOINT_NAMES = (
    "Left Front Wheel",
    "Right Front Wheel",
    "Left Back Wheel",
    "Right Back Wheel",
    "Left Front Light",
    "Right Front Light",
    "Left Back Light",
    "Right Back Light",
    "Left-up Windshield",
    "Right-up Windshield",
    "Left-up Rear Window",
    "Right-up Rear Window",
)

# zero-based (left, right) indices
PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9), (10, 11))
LAYERS = {"wheel": (0, 1, 2, 3), "light": (4, 5, 6, 7), "rooftop": (8, 9, 10, 11)}
# pair index -> label used in constraint names
_PAIR_LABELS = ("wheel:front", "wheel:back", "light:front", "light:back", "rooftop:front", "rooftop:back")

_MIRROR = np.diag([1.0, -1.0, 1.0])
_SWAP = np.array([1, 0, 3, 2, 5, 4, 7, 6, 9, 8, 11, 10])


def keypoint_name(index: int) -> str:
    """Semantic name for a one-based keypoint index."""
    if not 1 <= index <= K:
        raise ValueError(f"keypoint index must be in [1, {K}], got {index}")
    return KEYPOINT_NAMES[index - 1]


def _as_points(points) -> np.ndarray:
    pts = np.array(points, dtype=float)
    if pts.shape != (K, 3):
        raise ValueError(f"expected a ({K}, 3) array, got shape {pts.shape}")
    return pts


@dataclass(frozen=True, eq=False)
class WireframeModel:
    points: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def layer(self, name: str) -> np.ndarray:
        return self.points[list(LAYERS[name])]

    def scaled(self, factor: float) -> "WireframeModel":
        return WireframeModel(self.points * factor)

    def mirrored(self) -> "WireframeModel":
        return WireframeModel(mirror_points(self.points))

    @property
    def wheelbase(self) -> float:
        p = _pair_params(self.points)
        return float(p[0, 0] - p[1, 0])


def mirror_points(points) -> np.ndarray:
    """Reflect across y = 0 and swap left/right labels."""
    return (_as_points(points) @ _MIRROR)[_SWAP]


@dataclass(frozen=True)
class HwcConfig:
    wheelbase: tuple[float, float] = (2.0, 3.6)
    track: tuple[float, float] = (1.2, 2.0)
    light_width: tuple[float, float] = (1.0, 1.9)
    rooftop_width: tuple[float, float] = (0.9, 1.6)
    light_height: tuple[float, float] = (0.4, 1.1)
    rooftop_height: tuple[float, float] = (1.1, 2.0)
    # light/rooftop points stay within this multiple of the wheelbase from the wheel-layer center
    longitudinal_ratio: float = 1.3
    max_step: float = 0.05
    eps_sym: float = 1e-6

    def __post_init__(self):
        for name in ("wheelbase", "track", "light_width", "rooftop_width", "light_height", "rooftop_height"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} bounds must satisfy min < max, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.longitudinal_ratio <= 0:
            raise ValueError("longitudinal_ratio must be positive")


def canonical_model() -> WireframeModel:
    """Sedan-like mean shape, centered at the wheelbase midpoint on the ground."""
    pairs = (
        (1.40, 0.80, 0.33),
        (-1.40, 0.80, 0.33),
        (2.05, 0.70, 0.75),
        (-2.05, 0.70, 0.80),
        (0.30, 0.60, 1.42),
        (-0.85, 0.62, 1.40),
    )
    return WireframeModel(_points_from_params(np.array(pairs)))


def _pair_params(points: np.ndarray) -> np.ndarray:
    """Least-squares symmetric fit of each pair: rows of (x, half_width, z)."""
    left = points[[a for a, _ in PAIRS]]
    right = points[[b for _, b in PAIRS]]
    return np.column_stack((
        0.5 * (left[:, 0] + right[:, 0]),
        0.5 * (left[:, 1] - right[:, 1]),
        0.5 * (left[:, 2] + right[:, 2]),
    ))


def _points_from_params(params: np.ndarray) -> np.ndarray:
    pts = np.empty((K, 3))
    for (a, b), (x, w, z) in zip(PAIRS, params):
        pts[a] = (x, w, z)
        pts[b] = (x, -w, z)
    return pts


def _outside(value: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return max(lo - value, value - hi, 0.0)


def hwc_violations(points, config: HwcConfig = HwcConfig()) -> list[tuple[str, float]]:
    """Every violated shape rule with its magnitude (meters); empty iff feasible."""
    pts = _as_points(points)
    found: list[tuple[str, float]] = []

    mirrored = mirror_points(pts)
    for (a, b), label in zip(PAIRS, _PAIR_LABELS):
        # distance from the pair to its symmetric projection, per point
        found.append((f"symmetry:{label}", 0.5 * float(np.linalg.norm(pts[a] - mirrored[a]))))

    p = _pair_params(pts)
    found.append(("wheel_rectangle:height", 0.5 * abs(p[0, 2] - p[1, 2])))
    found.append(("wheel_rectangle:width", 0.5 * abs(p[0, 1] - p[1, 1])))

    wheelbase = p[0, 0] - p[1, 0]
    found.append(("wheelbase", _outside(wheelbase, config.wheelbase)))
    for i, label in enumerate(_PAIR_LABELS[:2]):
        found.append((f"track:{label}", _outside(2 * p[i, 1], config.track)))
    for i, label in zip((2, 3), _PAIR_LABELS[2:4]):
        found.append((f"width:{label}", _outside(2 * p[i, 1], config.light_width)))
        found.append((f"height:{label}", _outside(p[i, 2], config.light_height)))
    for i, label in zip((4, 5), _PAIR_LABELS[4:6]):
        found.append((f"width:{label}", _outside(2 * p[i, 1], config.rooftop_width)))
        found.append((f"height:{label}", _outside(p[i, 2], config.rooftop_height)))

    mid = 0.5 * (p[0, 0] + p[1, 0])
    reach = config.longitudinal_ratio * max(wheelbase, 0.0)
    for i in range(2, 6):
        found.append((f"longitudinal:{_PAIR_LABELS[i]}", max(abs(p[i, 0] - mid) - reach, 0.0)))
    for layer, (f, b) in (("light", (2, 3)), ("rooftop", (4, 5))):
        found.append((f"order:{layer}", max(p[b, 0] - p[f, 0], 0.0)))

    return [(name, mag) for name, mag in found if mag > config.eps_sym]


def hwc_project(points, config: HwcConfig = HwcConfig()) -> WireframeModel:
    """Nearest wireframe satisfying the hierarchical constraints.

    Pairs are symmetrized, the wheel layer is snapped to its least-squares
    rectangle, and all distances are clamped into ``config``'s bounds.
    """
    p = _pair_params(_as_points(points))

    p[0:2, 1] = p[0:2, 1].mean()
    p[0:2, 2] = p[0:2, 2].mean()

    mid = 0.5 * (p[0, 0] + p[1, 0])
    wheelbase = float(np.clip(p[0, 0] - p[1, 0], *config.wheelbase))
    p[0, 0], p[1, 0] = mid + 0.5 * wheelbase, mid - 0.5 * wheelbase
    p[0:2, 1] = np.clip(p[0:2, 1], *(0.5 * np.array(config.track)))
    p[2:4, 1] = np.clip(p[2:4, 1], *(0.5 * np.array(config.light_width)))
    p[4:6, 1] = np.clip(p[4:6, 1], *(0.5 * np.array(config.rooftop_width)))
    p[2:4, 2] = np.clip(p[2:4, 2], *config.light_height)
    p[4:6, 2] = np.clip(p[4:6, 2], *config.rooftop_height)

    for f, b in ((2, 3), (4, 5)):
        if p[f, 0] < p[b, 0]:
            p[f, 0] = p[b, 0] = 0.5 * (p[f, 0] + p[b, 0])
    reach = config.longitudinal_ratio * wheelbase
    p[2:6, 0] = np.clip(p[2:6, 0], mid - reach, mid + reach)

    return WireframeModel(_points_from_params(p))


def clamp_step(previous, proposed, max_step: float) -> np.ndarray:
    """Limit each keypoint's displacement from ``previous`` to ``max_step`` meters."""
    if max_step <= 0:
        raise ValueError("max_step must be positive")
    prev = np.asarray(previous, dtype=float)
    step = np.asarray(proposed, dtype=float) - prev
    length = np.linalg.norm(step, axis=-1, keepdims=True)
    scale = np.minimum(1.0, max_step / np.maximum(length, 1e-300))
    return prev + step * scale
