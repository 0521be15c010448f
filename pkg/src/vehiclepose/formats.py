"""JSON scene/result files and the CSV report.

Scene file keys: ``scene_id``, ``cameras`` (fx, fy, cx, cy, width, height,
row-major ``rotation``, ``translation``), ``observations`` (per camera, twelve
``{u, v, confidence, visible}``) and optional ``ground_truth`` (``pose`` plus a
flat 36-value ``model``). Result files carry ``estimate`` and ``trace`` instead.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .geometry import CameraModel, Pose
from .metrics import EvalReport
from .scenegen import KeypointObservation, SceneObservation
from .wireframe import K, WireframeModel

REPORT_HEADER = ["method", *[f"P{k}" for k in range(1, K + 1)], "mean", "rotation_deg", "translation_cm", "scenes"]


def _floats(a) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def pose_to_dict(pose: Pose) -> dict:
    return {"rotation": _floats(pose.rotation), "translation": _floats(pose.translation)}


def pose_from_dict(d: dict) -> Pose:
    return Pose(np.reshape(d["rotation"], (3, 3)), d["translation"])


def camera_to_dict(cam: CameraModel) -> dict:
    (fx, fy), (cx, cy), (w, h) = cam.focal_length_px, cam.principal_point_px, cam.image_size_px
    return {
        "fx": float(fx), "fy": float(fy), "cx": float(cx), "cy": float(cy),
        "width": int(w), "height": int(h),
        "rotation": _floats(cam.rotation), "translation": _floats(cam.translation),
    }


def camera_from_dict(d: dict) -> CameraModel:
    return CameraModel(
        (d["fx"], d["fy"]), (d["cx"], d["cy"]), (int(d["width"]), int(d["height"])),
        np.reshape(d["rotation"], (3, 3)), d["translation"],
    )


def scene_to_dict(scene: SceneObservation) -> dict:
    d = {
        "scene_id": scene.scene_id,
        "cameras": [camera_to_dict(c) for c in scene.cameras],
        "observations": [
            [{"u": o.pixel[0], "v": o.pixel[1], "confidence": o.confidence, "visible": o.visible} for o in cam]
            for cam in scene.observations
        ],
    }
    if scene.ground_truth_pose is not None and scene.ground_truth_model is not None:
        d["ground_truth"] = {
            "pose": pose_to_dict(scene.ground_truth_pose),
            "model": _floats(scene.ground_truth_model.points),
        }
    return d


def scene_from_dict(d: dict) -> SceneObservation:
    cams = [camera_from_dict(c) for c in d["cameras"]]
    obs = [
        [KeypointObservation((float(o["u"]), float(o["v"])), float(o["confidence"]), bool(o.get("visible", True))) for o in cam]
        for cam in d["observations"]
    ]
    gt = d.get("ground_truth")
    pose = pose_from_dict(gt["pose"]) if gt else None
    model = WireframeModel(np.reshape(gt["model"], (K, 3))) if gt else None
    return SceneObservation(cams, obs, pose, model, str(d.get("scene_id", "")))


def write_json(path, data: dict) -> None:
    # sorted keys and repr-exact floats keep files byte-stable across runs
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def save_scene(path, scene: SceneObservation) -> None:
    write_json(path, scene_to_dict(scene))


def load_scene(path) -> SceneObservation:
    return scene_from_dict(read_json(path))


def scene_paths(source) -> list[Path]:
    """A single file, or every ``*.json`` in a directory in name order."""
    p = Path(source)
    if p.is_dir():
        return sorted(p.glob("*.json"))
    if not p.exists():
        raise FileNotFoundError(p)
    return [p]


def result_dict(
    scene_id: str,
    method: str,
    world_keypoints=None,
    pose: Pose | None = None,
    shape: WireframeModel | None = None,
    trace=(),
    camera_index: int | None = None,
    failure: str | None = None,
) -> dict:
    d = {"scene_id": scene_id, "method": method, "camera_index": camera_index, "failure": failure, "trace": _floats(trace)}
    if failure is None:
        d["estimate"] = {
            "world_keypoints": _floats(world_keypoints),
            "pose": pose_to_dict(pose) if pose is not None else None,
            "model": _floats(shape.points) if shape is not None else None,
        }
    return d


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.4f}"


def report_csv(reports: list[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in reports:
        w.writerow([r.method, *map(_fmt, r.per_keypoint_cm), _fmt(r.mean_cm), _fmt(r.rotation_deg), _fmt(r.translation_cm), r.scene_count])
    return buf.getvalue()


def write_report(path, reports: list[EvalReport]) -> None:
    """CSV table plus a JSON sidecar holding the config digest, dataset tag and failures."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_csv(reports), encoding="utf-8")
    meta = {
        r.method: {"config_digest": r.config_digest, "dataset": r.dataset, "failures": list(r.failures)}
        for r in reports
    }
    write_json(path.with_suffix(".meta.json"), meta)


def read_report(path) -> list[dict]:
    """Rows of a CSV report as dicts of floats (``method`` and ``scenes`` excepted)."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return [
        {k: (v if k == "method" else int(v) if k == "scenes" else float(v)) for k, v in row.items()}
        for row in rows
    ]
