"""Parameter checkpoints: one raw little-endian float64 file plus a JSON index."""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..tensorcore import parameter
from ..utils import get_logger, write_json
from ..utils.exceptions import ConfigurationError, ValidationError
from .fluxvit import Params

logger = get_logger(__name__)

DTYPE = "<f8"


def checkpoint_paths(directory: Path, name: str = "params") -> Tuple[Path, Path]:
    directory = Path(directory)
    return directory / f"{name}.f64", directory / f"{name}.json"


def save_checkpoint(
    params: Params, directory: Path, name: str = "params", meta: Optional[Dict[str, Any]] = None
) -> Path:
    """Write parameters sorted by name; offsets count float64 elements."""
    data_path, index_path = checkpoint_paths(directory, name)
    data_path.parent.mkdir(parents=True, exist_ok=True)

    index, chunks, offset = {}, [], 0
    for key in sorted(params):
        values = np.ascontiguousarray(params[key].data, dtype=DTYPE)
        index[key] = {"offset": offset, "shape": list(values.shape)}
        chunks.append(values.reshape(-1))
        offset += values.size

    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype=DTYPE)
    flat.astype(DTYPE).tofile(data_path)
    write_json(index_path, {"dtype": DTYPE, "total": offset, "params": index, "meta": meta or {}})
    logger.info("Checkpoint written", path=str(data_path), tensors=len(index), values=offset)
    return data_path


def load_checkpoint(directory: Path, name: str = "params") -> Tuple[Params, Dict[str, Any]]:
    data_path, index_path = checkpoint_paths(directory, name)
    if not data_path.exists() or not index_path.exists():
        raise ConfigurationError(
            "Checkpoint not found", {"data": str(data_path), "index": str(index_path)}
        )
    index = json.loads(index_path.read_text())
    flat = np.fromfile(data_path, dtype=DTYPE)
    if flat.size != index["total"]:
        raise ValidationError(
            "Checkpoint data does not match its index",
            {"values": int(flat.size), "expected": index["total"]},
        )
    params = {}
    for key, entry in index["params"].items():
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        params[key] = parameter(flat[start : start + size].reshape(shape).astype(np.float64))
    logger.info("Checkpoint loaded", path=str(data_path), tensors=len(params))
    return params, index.get("meta", {})
