# utils/helpers.py
import dataclasses
import hashlib
import json
import logging
import struct
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
FLOAT_FORMAT = '%.17g'

# binary field dump: magic, version, config hash, ndim, dims, float64 row-major
FIELD_MAGIC = b'WLAB'
FIELD_VERSION = 1

PathLike = Union[str, Path]


def get_logger(name: str, level: Optional[Union[int, str]] = None) -> logging.Logger:
    """Logger with a single stream handler, configured once per name."""
    logger = logging.getLogger(name)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)
    if level is not None:
        logger.setLevel(level)
    return logger


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays, dataclasses and enums to JSON types."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not np.isfinite(value):
            return str(value)
        return value
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    return obj


def config_hash(payload: Dict[str, Any]) -> str:
    canonical = json.dumps(to_jsonable(payload), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]


def write_csv(frame: pd.DataFrame, path: PathLike, cfg_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as handle:
        handle.write(f'# config_hash={cfg_hash}\n')
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT)
    return path


def read_csv(path: PathLike) -> Tuple[pd.DataFrame, str]:
    with open(path) as handle:
        header = handle.readline().strip()
    cfg_hash = header.split('=', 1)[1] if header.startswith('# config_hash=') else ''
    return pd.read_csv(path, comment=None, skiprows=1), cfg_hash


def write_json(payload: Dict[str, Any], path: PathLike, cfg_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {'config_hash': cfg_hash}
    document.update(to_jsonable(payload))
    with open(path, 'w') as handle:
        json.dump(document, handle, indent=2)
        handle.write('\n')
    return path


def write_field_binary(values: np.ndarray, path: PathLike, cfg_hash: str) -> Path:
    """Compact dump: b'WLAB', uint32 version, 16-byte hash, uint32 ndim, uint64 dims, <f8 data."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(values, dtype='<f8')
    with open(path, 'wb') as handle:
        handle.write(FIELD_MAGIC)
        handle.write(struct.pack('<I', FIELD_VERSION))
        handle.write(cfg_hash.encode('ascii')[:16].ljust(16, b' '))
        handle.write(struct.pack('<I', data.ndim))
        handle.write(struct.pack(f'<{data.ndim}Q', *data.shape))
        handle.write(data.tobytes(order='C'))
    return path


def read_field_binary(path: PathLike) -> Tuple[np.ndarray, str]:
    with open(path, 'rb') as handle:
        magic = handle.read(4)
        if magic != FIELD_MAGIC:
            raise ValueError(f"{path} is not a field dump (magic {magic!r})")
        (version,) = struct.unpack('<I', handle.read(4))
        if version != FIELD_VERSION:
            raise ValueError(f"Unsupported field dump version {version}")
        cfg_hash = handle.read(16).decode('ascii').strip()
        (ndim,) = struct.unpack('<I', handle.read(4))
        shape = struct.unpack(f'<{ndim}Q', handle.read(8 * ndim))
        data = np.frombuffer(handle.read(), dtype='<f8').reshape(shape)
    return data.copy(), cfg_hash
