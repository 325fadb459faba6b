"""Birkhoff normal form machinery for the 1D disordered discrete NLS.

Subpackages
-----------
lattice_poly
    Sparse monomial Hamiltonians, weighted norms, Poisson bracket.
normal_form
    Homological equations, Lie transforms, the barrier-shrinking iteration.
resonance
    Nonresonance thresholds, screening, Monte Carlo measure estimates.
dynamics
    Symplectic split-step integration and localization observables.
cli
    Config-driven experiment drivers (simulate / normal-form / resonance / verify).
"""

from .lattice_poly import (
    Coefficient,
    HamPoly,
    MultiIndex,
    NormFrame,
    build_initial_hamiltonian,
    lipschitz_norm,
    poisson_bracket,
    restrict_support,
    split_DZR,
    triple_norm,
    weighted_norm,
)

__version__ = "0.1.0"

__all__ = [
    "Coefficient",
    "HamPoly",
    "MultiIndex",
    "NormFrame",
    "build_initial_hamiltonian",
    "lipschitz_norm",
    "poisson_bracket",
    "restrict_support",
    "split_DZR",
    "triple_norm",
    "weighted_norm",
    "__version__",
]
