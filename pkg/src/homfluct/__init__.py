"""Lattice Green functions, homogenization correctors, effective fluctuation
tensors, and generalized Gaussian free fields on periodic grids."""

__version__ = "0.1.0"
