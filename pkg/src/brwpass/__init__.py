"""First-passage times of branching random walks drifting to minus infinity."""
from .models import BranchingModel, DisplacementLaw, gauss_ref, latt_ref
from .spectral import SpectralProfile, solve_alpha0

__all__ = ["BranchingModel", "DisplacementLaw", "gauss_ref", "latt_ref", "SpectralProfile",
           "solve_alpha0"]
