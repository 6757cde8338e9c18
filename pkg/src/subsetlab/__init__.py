"""Desk-scale simulation lab for subset-reflection oracles.

Exact state-vector and density-matrix substrate, random-subset reflection
oracles, symmetric-subspace reflection emulation, gentle search and shadow
tomography over keyed measurement families, and generic key-recovery and
forgery experiments against pluggable scheme candidates.
"""

from .qcore import POLICY, CapacityError, DensityMatrix, NumericalPolicy, Rng, StateVector

__all__ = [
    "POLICY",
    "CapacityError",
    "DensityMatrix",
    "NumericalPolicy",
    "Rng",
    "StateVector",
]

__version__ = "0.1.0"
