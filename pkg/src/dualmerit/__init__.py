"""Sector-coupled energy LP with dual-based bid reconstruction and price-setter analytics."""

__version__ = "0.1.0"

from .io import load_model, save_model  # noqa: E402
from .lp import DISPATCH_ONLY, EXPANSION, SolvedState, build_lp, kkt_residuals, solve, solve_model  # noqa: E402
from .model import EnergyModel, validate  # noqa: E402

__all__ = [
    "DISPATCH_ONLY",
    "EXPANSION",
    "EnergyModel",
    "SolvedState",
    "build_lp",
    "kkt_residuals",
    "load_model",
    "save_model",
    "solve",
    "solve_model",
    "validate",
]
