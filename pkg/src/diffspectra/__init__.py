"""Spectrum-conditioned molecular structure elucidation by joint 2D/3D diffusion."""

from .molgraph import MolecularGraph, ContinuousGraph
from .spectra import SpectraSet

__all__ = ["MolecularGraph", "ContinuousGraph", "SpectraSet"]

__version__ = "0.1.0"
