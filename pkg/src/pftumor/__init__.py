"""Diffuse-interface tumour growth (Problems P and H) with sharp-interface diagnostics."""

from .grid import Grid
from .model import (ModelSpec, Problem, Potential, check_assumptions, eval_W,
                    linear_proliferation, quartic_well, smooth_cubic_interpolation, theta)
from .solver import State, StepConfig, initial_state, run, step

__all__ = [
    "Grid", "ModelSpec", "Problem", "Potential", "State", "StepConfig",
    "check_assumptions", "eval_W", "initial_state", "linear_proliferation",
    "quartic_well", "run", "smooth_cubic_interpolation", "step", "theta",
]
__version__ = "0.1.0"
