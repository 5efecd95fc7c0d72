"""Simulation of the 2D Schrödinger equation with a (non)linear point interaction.

The dynamics reduce to a Volterra equation for the charge q(t); the
wavefunction is rebuilt from q by the Duhamel formula.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .charge_solver import (ChargeTrajectory, CouplingSpec, KernelWeights, SolverOptions,
                            build_weights, contraction_probe, picard_oracle, solve,
                            solve_linear, solve_nonlinear)
from .grids import AccuracyWarning, SpatialGrid
from .observables import (ObservableSeries, bound_state_energy, bound_state_profile,
                          boundary_residual, energy, mass, scattering_length_convert)
from .propagator import ForcingTable, InitialDatum, forcing_f, free_at_point, free_on_grid
from .specfun import AccuracyError, EvalOptions, volterra_I, volterra_nu
from .wavefield import FieldSnapshot, decompose, h1_norm, reconstruct

__all__ = [
    "AccuracyError",
    "AccuracyWarning",
    "ChargeTrajectory",
    "CouplingSpec",
    "EvalOptions",
    "FieldSnapshot",
    "ForcingTable",
    "InitialDatum",
    "KernelWeights",
    "ObservableSeries",
    "SolverOptions",
    "SpatialGrid",
    "bound_state_energy",
    "bound_state_profile",
    "boundary_residual",
    "build_weights",
    "contraction_probe",
    "decompose",
    "energy",
    "forcing_f",
    "free_at_point",
    "free_on_grid",
    "h1_norm",
    "mass",
    "picard_oracle",
    "reconstruct",
    "scattering_length_convert",
    "solve",
    "solve_linear",
    "solve_nonlinear",
    "volterra_I",
    "volterra_nu",
]
