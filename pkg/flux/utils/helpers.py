import csv
import dataclasses
import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional

import structlog
from flask import jsonify, Response

from .exceptions import ConfigurationError


def setup_logging(log_level: str = "INFO"):
    """Configure structured logging with JSON output."""
    logging.basicConfig(
        level=getattr(logging, (log_level or "INFO").upper()),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer(),
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        logger_factory=structlog.stdlib.LoggerFactory(),
        context_class=dict,
        cache_logger_on_first_use=True,
    )


def get_logger(name: str) -> Any:
    """Get configured structlog logger instance."""
    return structlog.get_logger(name)


class ApiResponse:
    """Standardized API response helper."""

    @staticmethod
    def success(
        data: Any = None, message: str = None, status_code: int = 200
    ) -> tuple[Response, int]:
        """Create success response with optional data and message."""
        response = {
            "success": True,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }

        if data is not None:
            response["data"] = data
        if message:
            response["message"] = message

        return jsonify(response), status_code

    @staticmethod
    def error(
        message: str, details: Dict[str, Any] = None, status_code: int = 400
    ) -> tuple[Response, int]:
        """Create error response with message and optional details."""
        response = {
            "success": False,
            "error": message,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }

        if details:
            response["details"] = details

        return jsonify(response), status_code


def run_stamp(dt: Optional[datetime] = None) -> str:
    dt = dt or datetime.now(timezone.utc)
    return dt.strftime("%Y%m%dT%H%M%S")


def derive_seed(seed: int, purpose: str) -> int:
    """Sub-seed for one purpose, stable across platforms and Python versions."""
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path: Path, fieldnames: List[str], rows: Iterable[Mapping]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row.get(key, "") for key in fieldnames})
    return path


def dataclass_from_dict(cls, data: Optional[Mapping], prefix: str = ""):
    """Build a (flat) dataclass from a mapping, rejecting unknown keys."""
    data = dict(data or {})
    names = {field.name for field in dataclasses.fields(cls)}
    unknown = sorted(key for key in data if key not in names)
    if unknown:
        dotted = [f"{prefix}{key}" for key in unknown]
        raise ConfigurationError(
            f"Unknown configuration keys: {', '.join(dotted)}",
            {"unknown_keys": dotted},
        )
    kwargs = {}
    for field in dataclasses.fields(cls):
        if field.name not in data:
            continue
        value = data[field.name]
        # JSON has no tuples
        if isinstance(value, list) and isinstance(field.default, tuple):
            value = tuple(value)
        kwargs[field.name] = value
    return cls(**kwargs)


def dataclass_to_dict(obj) -> Dict[str, Any]:
    out = {}
    for field in dataclasses.fields(obj):
        value = getattr(obj, field.name)
        if dataclasses.is_dataclass(value):
            value = dataclass_to_dict(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[field.name] = value
    return out
