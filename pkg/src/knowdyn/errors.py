"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: validation/domain problems
exit 1, I/O and network problems exit 2, numerical failures exit 3.
"""


class KnowdynError(Exception):
    """Base class for all package errors."""


class ValidationError(KnowdynError, ValueError):
    """Invalid value for a named field or argument."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class UnknownPresetError(ValidationError):
    """Requested preset name is not a built-in."""


class InsufficientDataError(ValidationError):
    """Assembled series is too short for calibration."""


class ConfigFileError(ValidationError):
    """Malformed scenario or data configuration file."""


class DomainError(KnowdynError, ValueError):
    """State outside the physical domain where the model is defined."""


class IntegrationError(KnowdynError):
    """Numerical integration failed; `time` is the failure time in months."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class StiffnessError(IntegrationError):
    """Step size underflowed the configured minimum."""


class DomainExitError(IntegrationError):
    """Trajectory left the physical domain beyond the roundoff band."""


class FitError(KnowdynError):
    """All optimizer restarts failed to converge."""

    def __init__(self, message: str, statuses: list | None = None):
        super().__init__(message)
        self.statuses = statuses or []


class TransportError(KnowdynError):
    """Network request failed after retries."""


class SchemaError(KnowdynError):
    """Remote payload did not match the expected shape."""
