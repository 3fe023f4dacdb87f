"""Numerical laboratory for products of random SL2(C) matrices."""

from .measures import ModelMeasure, reference_measure, screen_elementarity
from .mobius import GroupElement, ProjPoint, act, cartan, cocycle, dist, opnorm, sigma_density
from .walk import TrajectoryStats, WalkConfig, run_walk

__all__ = [
    "GroupElement",
    "ModelMeasure",
    "ProjPoint",
    "TrajectoryStats",
    "WalkConfig",
    "act",
    "cartan",
    "cocycle",
    "dist",
    "opnorm",
    "reference_measure",
    "run_walk",
    "screen_elementarity",
    "sigma_density",
]
