"""Exception types shared across the package."""


class StructuralError(ValueError):
    """Mesh or index data violates a structural invariant."""


class DomainError(ValueError):
    """A geometric query left the computational domain."""


class CapabilityError(ValueError):
    """Requested degree/exactness exceeds what is implemented."""


class ConfigurationError(ValueError):
    """Problem data is inconsistent (e.g. stabilization loses positivity)."""


class UsageError(ValueError):
    """Operation called with incompatible inputs (e.g. non-nested meshes)."""


class SolverError(RuntimeError):
    """Factorization or solve failed."""
