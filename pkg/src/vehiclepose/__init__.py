"""Multi-camera vehicle pose and shape estimation from semantic keypoints."""
from .baselines import BaselineResult, Method, mono_solve, stereo_solve
from .geometry import CameraModel, Pose, Ray, apply_pose, backproject_ray, project, triangulate
from .metrics import EvalReport, per_keypoint_errors, rotation_error, translation_error
from .scenegen import NoiseConfig, SceneObservation, SceneSampler, make_rig, sample_scene, synthesize_scene
from .solver import Estimate, SolverConfig, WeightMatrix, cpo_solve, cross_energy, weighted_rigid_align
from .wireframe import HwcConfig, WireframeModel, canonical_model, clamp_step, hwc_project, hwc_violations

__version__ = "0.1.0"
