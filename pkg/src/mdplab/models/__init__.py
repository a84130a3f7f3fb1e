"""Concrete model plugins."""

from .linear import LinearConfig, build_linear
from .nse2d import Nse2dConfig, Nse2dGalerkin, build_nse2d
from .sabra import SabraConfig, SabraOperator, build_sabra

__all__ = [
    "LinearConfig", "build_linear",
    "Nse2dConfig", "Nse2dGalerkin", "build_nse2d",
    "SabraConfig", "SabraOperator", "build_sabra",
]
