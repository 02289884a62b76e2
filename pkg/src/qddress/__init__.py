"""Dynamically dressed states of a driven biexciton-exciton cascade.

Simulation (Lindblad propagation, two-time correlations, spectra, sensor
filtering) and analysis (pulse-area calibration, sideband timing, peak
tracking, lifetime fits) for a four-level quantum-dot emitter under
two-photon excitation.
"""

from .errors import (
    AmbiguousTracking,
    ConfigInvalid,
    CouplingTooStrong,
    DegenerateLifetimes,
    FitDiverged,
    GridTooCoarse,
    IoFailure,
    MalformedGrid,
    NonUniformGrid,
    NoSolution,
    QDDressError,
    StepUnderflow,
)
from .model import HBAR, DriveField, SystemParameters, build_hamiltonian, four_level, two_level

__all__ = [
    "HBAR", "DriveField", "SystemParameters", "build_hamiltonian", "four_level", "two_level",
    "QDDressError", "ConfigInvalid", "IoFailure", "MalformedGrid", "NonUniformGrid",
    "GridTooCoarse", "StepUnderflow", "AmbiguousTracking", "CouplingTooStrong", "NoSolution",
    "DegenerateLifetimes", "FitDiverged",
]
__version__ = "0.1.0"
