"""Embedded and hybridizable DG methods for Dirichlet boundary control
of convection-diffusion equations on triangulated polygons."""

__version__ = "0.1.0"
