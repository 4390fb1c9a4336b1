"""Exception types shared across the package.

The CLI maps these onto process exit codes, so keep the hierarchy flat
and the meanings disjoint.
"""


class FraclocError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(FraclocError):
    """Invalid or inconsistent user-supplied configuration."""


class MeshError(FraclocError):
    """Mesh generation produced an invalid or non-conforming triangulation."""


class SolverError(FraclocError):
    """Forward solver failure (assembly, factorization, non-convergence)."""


class QuadratureError(FraclocError):
    """A quadrature routine could not reach its accuracy target."""


class ReconstructionError(FraclocError):
    """Inversion failure, e.g. no sign change on a probe segment."""
