"""Simulation and diagnostics for multiplicative chaos measures on [0,1)^d.

Modules: core (grids, densities, seeding, I/O), kernels (log-kernel
decompositions and their certificates), gaussian (GMC samplers), cascades,
coverings (MRC and PMC), spectral (Fourier coefficients and dimension
estimators), theory (closed-form predictions), experiment and cli.
"""

__version__ = "0.1.0"
