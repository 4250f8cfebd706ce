"""Two-layer dual finite volume element schemes of orders 2, 3 and 4.

Modules
-------
refelem       reference nodes, trial and test bases, dual regions
quadrature    triangle, sub-region and segment rules
mesh          triangulations, DOF numbering, dual mesh topology
assembly      Petrov-Galerkin (and Galerkin) assembly, Dirichlet reduction
solver        sparse solves, singular values, condition numbers
stability     minimum-angle bound and trial-to-test parameter search
conservation  local and global conservation residuals
verify        manufactured examples, error norms, convergence studies
cli           the ``fve2l`` command
"""
__version__ = "0.1.0"

from . import assembly, conservation, mesh, quadrature, refelem, solver, stability, verify  # noqa: F401
