"""
RESPRECT Service Custom Exceptions

Defines the exception hierarchy for the numeric core, the environment and
the experiment harness. All runtime errors inherit from ResprectServiceError;
configuration problems use the shared ValidationError / ConfigurationError.
"""

from typing import Optional, Dict, Any, Sequence
from shared.utils.exceptions import ResprectException


class ResprectServiceError(ResprectException):
    """
    Base exception for runtime failures of the service.

    Attributes:
        message: Human-readable error message
        error_code: Machine-readable error code
        details: Additional error details
        exit_code: Process exit code used by the CLI (default: 2)
    """

    def __init__(
        self,
        message: str,
        error_code: str = "RESPRECT_ERROR",
        details: Optional[Dict[str, Any]] = None,
        exit_code: int = 2
    ):
        super().__init__(message, error_code, details)
        self.exit_code = exit_code

    def to_dict(self) -> dict:
        result = super().to_dict()
        result["exit_code"] = self.exit_code
        return result


class DimensionError(ResprectServiceError):
    """Raised when tensor or vector shapes do not line up."""

    def __init__(
        self,
        message: str,
        expected: Optional[Sequence[int]] = None,
        actual: Optional[Sequence[int]] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        details = details or {}
        if expected is not None:
            details["expected"] = list(expected)
        if actual is not None:
            details["actual"] = list(actual)
        super().__init__(message, "DIMENSION_ERROR", details)


class NumericError(ResprectServiceError):
    """Raised when a computation produces NaN or Inf."""

    def __init__(self, message: str, operation: Optional[str] = None, **kwargs):
        details = kwargs.get("details", {})
        if operation:
            details["operation"] = operation
        super().__init__(message, "NUMERIC_ERROR", details)


class StateError(ResprectServiceError):
    """
    Raised when an operation is called in the wrong state.

    Examples: backward before forward, sampling an empty replay buffer,
    stepping an episode that already finished.
    """

    def __init__(self, message: str, component: Optional[str] = None, **kwargs):
        details = kwargs.get("details", {})
        if component:
            details["component"] = component
        super().__init__(message, "STATE_ERROR", details)


class IncompatibleCheckpointError(ResprectServiceError):
    """Raised when a checkpoint's architecture does not match what the caller needs."""

    def __init__(
        self,
        message: str,
        network: Optional[str] = None,
        expected_arch: Optional[str] = None,
        found_arch: Optional[str] = None
    ):
        details: Dict[str, Any] = {}
        if network:
            details["network"] = network
        if expected_arch:
            details["expected_arch"] = expected_arch
        if found_arch:
            details["found_arch"] = found_arch
        super().__init__(message, "INCOMPATIBLE_CHECKPOINT", details)


class CheckpointFormatError(ResprectServiceError):
    """
    Base class for checkpoint files that cannot be decoded.
    """

    def __init__(
        self,
        message: str,
        path: Optional[Any] = None,
        error_code: str = "CHECKPOINT_FORMAT_ERROR",
        details: Optional[Dict[str, Any]] = None
    ):
        details = details or {}
        if path is not None:
            details["path"] = str(path)
        super().__init__(message, error_code, details)


class BadMagicError(CheckpointFormatError):
    """Raised when a file does not start with the checkpoint magic."""

    def __init__(self, path: Optional[Any] = None, found: bytes = b""):
        super().__init__(
            "File is not a RESPRECT checkpoint",
            path,
            "CHECKPOINT_BAD_MAGIC",
            {"found": found.hex()}
        )


class VersionMismatchError(CheckpointFormatError):
    """Raised when the checkpoint format version is not supported."""

    def __init__(self, path: Optional[Any], found: int, supported: int):
        super().__init__(
            f"Unsupported checkpoint version {found} (supported: {supported})",
            path,
            "CHECKPOINT_VERSION_MISMATCH",
            {"found": found, "supported": supported}
        )


class TruncatedCheckpointError(CheckpointFormatError):
    """Raised when a checkpoint ends before all declared content was read."""

    def __init__(self, path: Optional[Any], needed: int, available: int, section: str):
        super().__init__(
            f"Checkpoint truncated while reading {section}",
            path,
            "CHECKPOINT_TRUNCATED",
            {"needed_bytes": needed, "available_bytes": available, "section": section}
        )


class UnknownTaskFamilyError(ResprectServiceError):
    """Raised when an object family name is not known to the sampler."""

    def __init__(self, family: str, known: Sequence[str]):
        super().__init__(
            f"Unknown task family '{family}'",
            "UNKNOWN_TASK_FAMILY",
            {"family": family, "known": list(known)}
        )
