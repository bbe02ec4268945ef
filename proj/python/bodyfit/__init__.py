"""Multi-view body shape fitting: parametric body model, pose and shape fitting."""

from bodyfit._core import (
    BodyModel,
    Camera,
    Error,
    FitResult,
    default_pose_schedule,
    default_shape_schedule,
    geman_mcclure,
    iou,
    joints_rest,
    load_model,
    load_mask,
    make_toy_model,
    project,
    rasterize,
    run_fit,
    sha256_hex,
    skin,
    synth_generate,
)

__all__ = [
    "BodyModel",
    "Camera",
    "Error",
    "FitResult",
    "default_pose_schedule",
    "default_shape_schedule",
    "geman_mcclure",
    "iou",
    "joints_rest",
    "load_model",
    "load_mask",
    "make_toy_model",
    "project",
    "rasterize",
    "run_fit",
    "sha256_hex",
    "skin",
    "synth_generate",
]
