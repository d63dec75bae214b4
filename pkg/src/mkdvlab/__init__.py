"""Numerical laboratory for the integrable structure of periodic mKdV/KdV.

Spectral fields on the unit torus, the Green's function of the associated
first-order Lax system, macroscopic conserved functionals with kappa
quadrature, commuting approximate flows, Gaussian measure sampling with
importance weights, the corrected Miura transform, and a Monte Carlo
invariance harness.
"""

from .spectral import (
    Multiplier,
    SpectralField,
    analyze,
    multiply,
    project,
    resolvent_apply,
    sobolev_norm,
    synthesize,
)
from .lax import (
    DiagonalGreens,
    GreenEval,
    Monodromy,
    diagonal_greens,
    gamma2,
    gamma_ge4,
    green_at,
    monodromy,
)

__version__ = "0.1.0"

__all__ = [
    "Multiplier",
    "SpectralField",
    "analyze",
    "multiply",
    "project",
    "resolvent_apply",
    "sobolev_norm",
    "synthesize",
    "DiagonalGreens",
    "GreenEval",
    "Monodromy",
    "diagonal_greens",
    "gamma2",
    "gamma_ge4",
    "green_at",
    "monodromy",
    "__version__",
]
