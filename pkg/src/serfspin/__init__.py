"""Density-matrix model of Larmor and birefringent coherences in SERF alkali vapor."""

from .dynamics import SimParams, Trajectory, evolve, liouville_rhs
from .experiment import RunSettings, run_fid, run_sweep
from .fitting import ComplexExpFit, FitResult, fit_complex_exponential, fit_fid, quadratic_threshold_fit
from .hilbert import SpinSystem, build_system, spin_temperature_state
from .superop import build_linear, eigenmodes, perturbative_birefringent

__all__ = [
    "ComplexExpFit", "FitResult", "RunSettings", "SimParams", "SpinSystem", "Trajectory", "build_linear", "build_system",
    "eigenmodes", "evolve", "fit_complex_exponential", "fit_fid", "liouville_rhs", "perturbative_birefringent", "quadratic_threshold_fit",
    "run_fid", "run_sweep", "spin_temperature_state",
]
