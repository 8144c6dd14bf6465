"""Functional-space analysis of local GAN convergence.

Weighted Laplace spectra of a target density, the linearized GAN eigenvalue
map, PDE dynamics under explicit integrators, and sample-based estimators of
the Poincare constant.
"""

__version__ = "0.1.0"
