"""Exception hierarchy shared across the package."""


class CSGDError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(CSGDError, ValueError):
    """An argument is outside its valid domain."""


class DataError(CSGDError, ValueError):
    """A dataset is empty, malformed or has unsupported labels."""


class CapabilityError(CSGDError, RuntimeError):
    """The requested quantity is not available for this problem or run."""


class ScheduleError(CSGDError, ArithmeticError):
    """A schedule value cannot be represented."""


class StateError(CSGDError, RuntimeError):
    """Censoring or server state was used inconsistently."""


class ConfigError(CSGDError, ValueError):
    """A run configuration is missing a key, mistyped or violates a constraint."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key} {message}" if message else key)


class DivergenceError(CSGDError, RuntimeError):
    """A run's loss became non-finite or blew up."""

    def __init__(self, variant: str, seed: int, iteration: int):
        self.variant, self.seed, self.iteration = variant, seed, iteration
        super().__init__(f"{variant} seed={seed} diverged at k={iteration}")
