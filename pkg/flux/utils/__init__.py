"""
Utilities package for flux.
"""

from .exceptions import (
    FluxError,
    ValidationError,
    ShapeError,
    ConfigurationError,
    NumericalError,
    TrainingError,
    SearchError,
)
from .helpers import (
    setup_logging,
    get_logger,
    ApiResponse,
    run_stamp,
    derive_seed,
    canonical_json,
    config_hash,
    write_json,
    write_csv,
    dataclass_from_dict,
    dataclass_to_dict,
)

__all__ = [
    "FluxError",
    "ValidationError",
    "ShapeError",
    "ConfigurationError",
    "NumericalError",
    "TrainingError",
    "SearchError",
    "setup_logging",
    "get_logger",
    "ApiResponse",
    "run_stamp",
    "derive_seed",
    "canonical_json",
    "config_hash",
    "write_json",
    "write_csv",
    "dataclass_from_dict",
    "dataclass_to_dict",
]
