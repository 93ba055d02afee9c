"""Reference-guided residual/noise dual-diffusion super-resolution."""

from .config import ExperimentConfig
from .diffusion import (
    degrade_terminal,
    forward_diffuse,
    make_residual,
    reconstruct_x0,
    reverse_step,
    timestep_plan,
)
from .planes import ImagePlane
from .schedule import CoeffSchedule, build_schedule, sigma_t

__all__ = [
    "CoeffSchedule",
    "ExperimentConfig",
    "ImagePlane",
    "build_schedule",
    "degrade_terminal",
    "forward_diffuse",
    "make_residual",
    "reconstruct_x0",
    "reverse_step",
    "sigma_t",
    "timestep_plan",
]

__version__ = "0.1.0"
