"""Exception types shared across the package."""


class MetastratError(Exception):
    """Base class for package errors."""


class ValidationError(MetastratError):
    """A domain object violates one of its invariants."""


class ConfigError(MetastratError):
    """A run configuration is malformed or inconsistent."""


class EnvStepError(MetastratError):
    """An environment was stepped with invalid input or from a done state."""
