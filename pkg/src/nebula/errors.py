"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class FitError(RuntimeError):
    """The mixing-distribution fit (or scoring with it) cannot proceed.

    ``index`` carries the offending SNP position when one is known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ResourceError(MemoryError):
    """A requested allocation exceeds the configured cap."""


class ConfigError(ValueError):
    """Inconsistent simulation or run configuration."""
