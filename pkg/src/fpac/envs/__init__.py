from fpac.envs.core import (
    ENV_NAMES,
    BallCatcher,
    EnvSpec,
    InvalidStateError,
    PendulumSwingup,
    PixelEnv,
    PointReacher,
    ScrollRunner,
    StepResult,
    make_env,
    reset,
)
from fpac.envs.render import Camera2D, coords_to_pixels, project, render_scene, unproject

__all__ = [
    "ENV_NAMES",
    "BallCatcher",
    "Camera2D",
    "EnvSpec",
    "InvalidStateError",
    "PendulumSwingup",
    "PixelEnv",
    "PointReacher",
    "ScrollRunner",
    "StepResult",
    "coords_to_pixels",
    "make_env",
    "project",
    "render_scene",
    "reset",
    "unproject",
]
