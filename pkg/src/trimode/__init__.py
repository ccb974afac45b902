"""Simulation toolkit for a driven three-mode bosonic system.

Classical mean-field dynamics with chaos diagnostics, exact finite-N quantum
mechanics, truncated-Wigner semi-classics, and a time-reversal quadratic
response protocol for squared-commutator measurements.
"""

__version__ = "0.1.0"

from .model import (
    CanonicalCoords,
    ClassicalState,
    EnergyShellSpec,
    ModelParams,
    canonical_to_zeta,
    mf_energy,
    mf_energy_canonical,
    solve_m_for_energy,
    zeta_to_canonical,
)

__all__ = [
    "__version__",
    "CanonicalCoords",
    "ClassicalState",
    "EnergyShellSpec",
    "ModelParams",
    "canonical_to_zeta",
    "mf_energy",
    "mf_energy_canonical",
    "solve_m_for_energy",
    "zeta_to_canonical",
]
