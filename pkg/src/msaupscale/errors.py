"""Exception types shared across the package."""


class ModelValidityError(ValueError):
    """Raised when inputs leave the domain where the MSA closure is well posed."""


class ElectroneutralityError(ValueError):
    """Raised when the reservoir composition carries a net charge."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver fails to reach its tolerance."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class SingularSystemError(RuntimeError):
    """Raised when a linear system cannot be factorized or solved accurately."""


class MeshError(ValueError):
    """Raised for invalid geometry or mesh input."""


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration."""
