"""wavemix: numerical laboratory for the stochastic damped nonlinear wave equation.

Spectral Galerkin simulation with exact per-mode linear flow, coupling-based
mixing diagnostics, occupation-measure and pressure estimation, and
small-noise rate functions anchored by exact finite-dimensional oracles.
"""

from wavemix.spectral import (
    SpectralBasis,
    Field,
    PhaseState,
    eigenpairs,
    sobolev_norm,
    phase_norm,
    sobolev_phase_norm,
    project_low,
    evaluate_nonlinearity,
    energy,
)
from wavemix.nlw import Nonlinearity, NoiseModel, SimConfig, simulate

__all__ = [
    "SpectralBasis", "Field", "PhaseState", "eigenpairs", "sobolev_norm",
    "phase_norm", "sobolev_phase_norm", "project_low", "evaluate_nonlinearity",
    "energy", "Nonlinearity", "NoiseModel", "SimConfig", "simulate",
]
