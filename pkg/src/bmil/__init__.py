"""Monte Carlo laboratory for Brownian intersection local times,
non-intersection exponents, thin-point spectra, and fractal percolation."""

__version__ = "0.1.0"

SCHEMA_VERSION = "1"
