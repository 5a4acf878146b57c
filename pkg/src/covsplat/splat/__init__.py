"""3D Gaussian scene representation and software rasterizer."""

from .gaussians import Gaussian3D, GaussianSet, load_gaussians, quat_to_rotmat, save_gaussians
from .projection import CULLED, Culled, ProjectedGaussian, evaluate_gaussian, project_gaussian, project_gaussians
from .rasterizer import GaussianGradients, RenderedFrame, rasterize, rasterize_backward

__all__ = [
    "CULLED",
    "Culled",
    "Gaussian3D",
    "GaussianGradients",
    "GaussianSet",
    "ProjectedGaussian",
    "RenderedFrame",
    "evaluate_gaussian",
    "load_gaussians",
    "project_gaussian",
    "project_gaussians",
    "quat_to_rotmat",
    "rasterize",
    "rasterize_backward",
    "save_gaussians",
]
