"""Keller-Segel simulation and numerical verification of its gradient-flow structure."""

from .fields import ChemoField, DensityField, Grid
from .laws import DiffusionLaw
from .dynamics import SystemParams, Trajectory, simulate
from .transport import ProductState, metric_D, w2, w2_1d, w2_discrete
from .verify import OsgoodMachinery, contraction_check, evi_check, omega, omega_convexity_check

__all__ = [
    "ChemoField", "DensityField", "Grid", "DiffusionLaw", "SystemParams", "Trajectory", "simulate",
    "ProductState", "metric_D", "w2", "w2_1d", "w2_discrete", "OsgoodMachinery", "contraction_check",
    "evi_check", "omega", "omega_convexity_check",
]
