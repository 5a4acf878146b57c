"""Incremental Gaussian map optimisation."""

from .density import DensityStats, densify_and_prune, prune_low_opacity, prune_occluded, scene_extent
from .loss import LossResult, mapping_loss
from .mapper import Mapper, MappingStats, split_budget
from .mask import covariance_mask, normalize_covariance
from .optimizer import Adam, group_learning_rates, lr_schedule
from .pyramid import KeyframePacket, PyramidLevel, build_pyramid, level_shape
from .seeding import Seeds, seed_gaussians

__all__ = [
    "Adam",
    "DensityStats",
    "KeyframePacket",
    "LossResult",
    "Mapper",
    "MappingStats",
    "PyramidLevel",
    "Seeds",
    "build_pyramid",
    "covariance_mask",
    "densify_and_prune",
    "group_learning_rates",
    "level_shape",
    "lr_schedule",
    "mapping_loss",
    "normalize_covariance",
    "prune_low_opacity",
    "prune_occluded",
    "scene_extent",
    "seed_gaussians",
    "split_budget",
]
