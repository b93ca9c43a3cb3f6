"""2D local-to-nonlocal coupled heat equation toolkit.

Subpackages cover the meshfree nonlocal solver (GMLS quadrature with
surface Neumann/Robin volume constraints), a linear-triangle FEM local
solver, the explicit Robin-Dirichlet partitioned coupling driver, and
the amplification-factor machinery used to pick the Robin coefficient.
"""

__version__ = "0.1.0"
