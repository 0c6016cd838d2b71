"""
Shared utilities package.
"""
from .logger import setup_logging, get_logger
from .helpers import (
    generate_hash,
    serialize_json,
    deserialize_json,
)
from .exceptions import (
    ResprectException,
    ValidationError,
    ConfigurationError,
    DataIntegrityError,
)

__all__ = [
    # Logger utilities
    "setup_logging",
    "get_logger",
    # Helper functions
    "generate_hash",
    "serialize_json",
    "deserialize_json",
    # Exceptions
    "ResprectException",
    "ValidationError",
    "ConfigurationError",
    "DataIntegrityError",
]
