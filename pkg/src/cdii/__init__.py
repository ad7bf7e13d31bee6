"""Anisotropic conductivity reconstruction from internal current densities on 2-D grids."""

from .config import ExperimentConfig, parse_config
from .fields import Grid2D, Matrix2Field, ScalarField2, SymTensor2Field, VectorField2
from .forward import BoundarySpec, EdgeCondition, SolverOptions, solve_conductivity
from .harness import run_experiment
from .recon import BetaBC, ReconOptions, reconstruct_full
from .regularize import RegSpec, denoise
from .synth import MeasurementSet, NoiseSpec, add_noise, generate_measurements, make_illuminations, make_phantom

__all__ = [
    "BetaBC", "BoundarySpec", "EdgeCondition", "ExperimentConfig", "Grid2D", "Matrix2Field",
    "MeasurementSet", "NoiseSpec", "ReconOptions", "RegSpec", "ScalarField2", "SolverOptions",
    "SymTensor2Field", "VectorField2", "add_noise", "denoise", "generate_measurements",
    "make_illuminations", "make_phantom", "parse_config", "reconstruct_full", "run_experiment",
    "solve_conductivity",
]
