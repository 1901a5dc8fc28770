"""Spectra and reduced dynamics of reaction-diffusion problems on thin shells around spheres."""

__version__ = "0.1.0"
