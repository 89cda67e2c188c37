"""Gradient descent on deep linear networks for subspace inverse problems.

Submodules: numkit (dense linear-algebra primitives), problem (instance
generators), model (network containers), trainer (GD loop and theory),
oracle (minimum-norm interpolant), metrics (error functionals), expcli
(experiment command line).

Submodules are imported explicitly (``from subspace_gd import trainer``)
rather than re-exported here, so the command-line entry point can
configure BLAS threading before any numerical import happens.
"""

__version__ = "0.1.0"
