"""Numerical laboratory for finite-volume spectral shift functions.

Eigenvalue counting on Dirichlet boxes via factorization inertia, convergence
experiments for the relative counting function, and a Brownian-bridge Monte
Carlo estimator for its two-sided Laplace transform.
"""

__version__ = "0.1.0"

from . import eigencount, lattice  # noqa: F401
