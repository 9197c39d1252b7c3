"""Unitary almost-Mathieu operator: walk, CMV and cocycle machinery, band structures,
gap labels, Lyapunov exponents, rotation numbers and duality checks."""

__version__ = "0.1.0"

from .model import Couplings, Frequency  # noqa: E402
from .cocycle import CocycleSpec, Family  # noqa: E402
from .spectrum import BandStructure, GapRecord, band_arcs, butterfly, gaps  # noqa: E402

__all__ = ["__version__", "Couplings", "Frequency", "CocycleSpec", "Family",
           "BandStructure", "GapRecord", "band_arcs", "butterfly", "gaps"]
