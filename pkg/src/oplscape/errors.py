"""Exception types raised across the package."""


class OplError(Exception):
    """Base class for package errors."""


class ConfigError(OplError, ValueError):
    """An invalid configuration value or a missing required resource."""


class ContractViolation(OplError, ValueError):
    """An operation was called with inputs that break its preconditions."""


class DataValidationError(OplError, ValueError):
    """Logged data that fails the dataset invariants."""


class TrainingError(OplError, RuntimeError):
    """Training produced a non-finite objective or gradient."""

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step
