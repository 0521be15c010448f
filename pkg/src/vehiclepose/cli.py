"""Command-line entry point: gen, solve, baseline, eval, sweep."""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import VehiclePoseError
from .experiment import (
    METHODS,
    ExperimentConfig,
    MethodOutput,
    evaluate,
    generate_scenes,
    run_experiment,
    run_method,
    solver_config_from_dict,
)
from .formats import load_scene, read_json, result_dict, save_scene, scene_paths, write_json, write_report
from .geometry import Pose
from .scenegen import NoiseConfig, SceneSampler
from .solver import SolverConfig
from .wireframe import K, WireframeModel, canonical_model

log = logging.getLogger("vehiclepose")


def _range(text: str) -> tuple[float, float]:
    """``8`` or ``6,12``."""
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 1:
        return vals[0], vals[0]
    if len(vals) == 2:
        return vals[0], vals[1]
    raise argparse.ArgumentTypeError(f"expected one value or lo,hi: {text!r}")


def _image_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT: {text!r}") from None
    return w, h


def _occlusion(text: str) -> dict[int, frozenset[int]]:
    """``0:11,0:12`` -> camera 0 loses keypoints 11 and 12 (one-based)."""
    occ: dict[int, set[int]] = {}
    for item in filter(None, text.split(",")):
        try:
            cam, k = (int(v) for v in item.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected cam:k items, got {item!r}") from None
        if not 1 <= k <= K:
            raise argparse.ArgumentTypeError(f"keypoint id must be in 1..{K}, got {k}")
        occ.setdefault(cam, set()).add(k)
    return {c: frozenset(ks) for c, ks in occ.items()}


def _add_scene_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rig-separation-deg", type=_range, default=(60.0, 120.0), help="angle or lo,hi range")
    p.add_argument("--distance-m", type=_range, default=(6.0, 12.0), help="distance or lo,hi range")
    p.add_argument("--height-m", type=float, default=3.0)
    p.add_argument("--focal-px", type=float, default=500.0)
    p.add_argument("--image-size", type=_image_size, default=(640, 480), help="WIDTHxHEIGHT")
    p.add_argument("--noise-sigma-px", type=float, default=0.0)
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--outlier-shift-px", type=float, default=25.0)
    p.add_argument("--occlude", type=_occlusion, default={}, metavar="CAM:K,...")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)


def _experiment_config(args, **overrides) -> ExperimentConfig:
    sampler = SceneSampler(
        separation_deg=args.rig_separation_deg,
        distance_m=args.distance_m,
        height_m=args.height_m,
        focal_px=args.focal_px,
        image_size=args.image_size,
    )
    noise = NoiseConfig(
        pixel_sigma=args.noise_sigma_px,
        outlier_rate=args.outlier_rate,
        outlier_shift_px=args.outlier_shift_px,
        occluded_ids=args.occlude,
    )
    return replace(ExperimentConfig(sampler=sampler, noise=noise, scene_count=args.count, master_seed=args.seed), **overrides)


def _load_run_config(path) -> tuple[SolverConfig, float]:
    """Config file: ``{"solver": {...SolverConfig fields}, "initial_scale": 1.0}``."""
    if path is None:
        return SolverConfig(), 1.0
    d = read_json(path)
    return solver_config_from_dict(d.get("solver", {})), float(d.get("initial_scale", 1.0))


def cmd_gen(args) -> int:
    cfg = _experiment_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for scene in generate_scenes(cfg):
        save_scene(out / f"{scene.scene_id}.json", scene)
    print(f"wrote {cfg.scene_count} scenes to {out}")
    return 0


def _write_output(out_dir: Path, o: MethodOutput) -> None:
    write_json(
        out_dir / f"{o.scene_id}.{o.method}.json",
        result_dict(o.scene_id, o.method, o.world_keypoints, o.pose, o.shape, o.trace, o.camera_index, o.failure),
    )
    if o.failure:
        print(f"{o.scene_id} {o.method}: FAILED {o.failure}", file=sys.stderr)


def _run_on_scenes(args, method: str, camera: int | None = None) -> int:
    config, scale = _load_run_config(args.config)
    initial = canonical_model().scaled(scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for path in scene_paths(args.scene):
        scene = load_scene(path)
        if not scene.scene_id:
            scene = replace(scene, scene_id=path.stem)
        outputs = run_method(method, scene, initial, config)
        if camera is not None:
            outputs = [o for o in outputs if o.camera_index == camera]
            if not outputs:
                raise IndexError(f"camera {camera} not in scene {scene.scene_id}")
        for o in outputs:
            _write_output(out, o)
        n += 1
    print(f"{method}: solved {n} scenes into {out}")
    return 0


def cmd_solve(args) -> int:
    return _run_on_scenes(args, "cpo")


def cmd_baseline(args) -> int:
    if args.method == "stereo" and args.camera is not None:
        raise ValueError("--camera applies to the mono baseline only")
    return _run_on_scenes(args, args.method, args.camera)


def _output_from_dict(d: dict) -> MethodOutput:
    if d.get("failure"):
        return MethodOutput(d["method"], d["scene_id"], camera_index=d.get("camera_index"), failure=d["failure"])
    est = d["estimate"]
    pose = Pose(np.reshape(est["pose"]["rotation"], (3, 3)), est["pose"]["translation"]) if est.get("pose") else None
    shape = WireframeModel(np.reshape(est["model"], (K, 3))) if est.get("model") else None
    return MethodOutput(
        d["method"], d["scene_id"], np.reshape(est["world_keypoints"], (K, 3)), pose, shape,
        tuple(d.get("trace", ())), d.get("camera_index"),
    )


def cmd_eval(args) -> int:
    truth = {}
    for path in scene_paths(args.truth):
        s = load_scene(path)
        truth[s.scene_id or path.stem] = s
    outputs = [_output_from_dict(read_json(p)) for p in scene_paths(args.results)]
    missing = sorted({o.scene_id for o in outputs} - set(truth))
    if missing:
        raise KeyError(f"no ground truth for scenes: {', '.join(missing[:5])}")
    digest = hashlib.sha256(b"".join(p.read_bytes() for p in scene_paths(args.truth) + scene_paths(args.results))).hexdigest()[:16]
    reports = evaluate(outputs, truth, digest)
    write_report(args.report, reports)
    for r in reports:
        print(f"{r.method:10s} mean {r.mean_cm:8.3f} cm  rot {r.rotation_deg:7.3f} deg  trans {r.translation_cm:8.3f} cm  n={r.scene_count}")
        for f in r.failures:
            print(f"  {r.method} {f}", file=sys.stderr)
    return 0


_SWEEPABLE = {
    "noise-sigma-px": lambda c, v: replace(c, noise=replace(c.noise, pixel_sigma=v)),
    "outlier-rate": lambda c, v: replace(c, noise=replace(c.noise, outlier_rate=v)),
    "rig-separation-deg": lambda c, v: replace(c, sampler=replace(c.sampler, separation_deg=(v, v))),
    "distance-m": lambda c, v: replace(c, sampler=replace(c.sampler, distance_m=(v, v))),
    "initial-scale": lambda c, v: replace(c, initial_scale=v),
}


def cmd_sweep(args) -> int:
    solver, scale = _load_run_config(args.config)
    methods = tuple(m for m in args.methods.split(",") if m)
    base = _experiment_config(args, solver=solver, initial_scale=scale, methods=methods)
    out = Path(args.out)
    for text in args.values.split(","):
        value = float(text)
        cfg = replace(_SWEEPABLE[args.param](base, value), report_path=str(out / f"report_{args.param}_{text}.csv"))
        reports = run_experiment(cfg)
        summary = ", ".join(f"{r.method} {r.mean_cm:.2f}" for r in reports)
        print(f"{args.param}={text}: {summary}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vehiclepose", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write synthetic scene files")
    _add_scene_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    for name, helptext in (("solve", "run the multi-camera solver"), ("baseline", "run a comparison method")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--scene", required=True, help="scene file or directory")
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", required=True)
        if name == "baseline":
            p.add_argument("--method", choices=("stereo", "mono"), required=True)
            p.add_argument("--camera", type=int, help="mono only; default is every camera")
        p.set_defaults(func=cmd_solve if name == "solve" else cmd_baseline)

    p = sub.add_parser("eval", help="score result files against ground truth")
    p.add_argument("--results", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="one report per parameter value")
    _add_scene_flags(p)
    p.add_argument("--param", choices=sorted(_SWEEPABLE), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (VehiclePoseError, ValueError, KeyError, IndexError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
