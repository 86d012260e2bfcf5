"""Model packs: named parameter tensors plus the run configuration.

Layout, all little-endian:

    magic    4 bytes  "MVSP"
    version  u8       1
    count    u32      number of entries
    entry    count x (name_len u16, name UTF-8, tensor body without magic)
    config   u32 length + UTF-8 JSON echo of the resolved run configuration

Tensors are stored in 32 bits; loading therefore rounds parameters once,
after which save/load round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .combiner import CombinerParams, WhcParams
from .errors import (
    BadMagicError,
    ConfigError,
    DuplicateIdError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .tensorfile import parse_tensor_body, tensor_body
from .training import RunConfig

MAGIC = b"MVSP"
VERSION = 1


def pack_bytes(named_arrays, config: RunConfig) -> bytes:
    """Serialize named parameter arrays and the config echo."""
    names = [name for name, _ in named_arrays]
    if len(set(names)) != len(names):
        raise DuplicateIdError("model pack entry names must be unique")
    parts = [MAGIC, struct.pack("<BI", VERSION, len(names))]
    for name, arr in named_arrays:
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ConfigError(f"entry name too long: {name!r}")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        arr = np.asarray(arr, dtype=np.float64)
        parts.append(tensor_body(arr, arr.shape))
    config_blob = json.dumps(config.to_json_dict()).encode("utf-8")
    parts.append(struct.pack("<I", len(config_blob)))
    parts.append(config_blob)
    return b"".join(parts)


def unpack_bytes(data: bytes, where: str = "model pack") -> tuple[dict[str, np.ndarray], RunConfig]:
    """Parse a model pack into (named arrays, config)."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"{where}: bad magic {data[:4]!r}")
    if len(data) < 9:
        raise TruncatedFileError(f"{where}: header truncated")
    version, count = struct.unpack_from("<BI", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"{where}: unsupported version {version}")
    offset = 9
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        if offset + 2 > len(data):
            raise TruncatedFileError(f"{where}: entry name truncated")
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + name_len > len(data):
            raise TruncatedFileError(f"{where}: entry name truncated")
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if name in arrays:
            raise DuplicateIdError(f"{where}: duplicate entry {name!r}")
        values, _, offset = parse_tensor_body(data, offset, f"{where} entry {name!r}")
        arrays[name] = values
    if offset + 4 > len(data):
        raise TruncatedFileError(f"{where}: config length truncated")
    (config_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if offset + config_len > len(data):
        raise TruncatedFileError(f"{where}: config truncated")
    try:
        config_dict = json.loads(data[offset : offset + config_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{where}: config echo is not valid JSON: {exc}") from exc
    offset += config_len
    if offset != len(data):
        raise TruncatedFileError(f"{where}: {len(data) - offset} trailing bytes")
    return arrays, RunConfig.from_json_dict(config_dict)


def save_model_pack(path, params, config: RunConfig) -> None:
    """Write fusion parameters (or none, for sum fusion) plus the config echo."""
    if params is None:
        named = []
    elif isinstance(params, (WhcParams, CombinerParams)):
        named = params.named_arrays()
    else:
        raise ConfigError(f"cannot pack parameters of type {type(params).__name__}")
    Path(path).write_bytes(pack_bytes(named, config))


def load_model_pack(path):
    """Read a model pack; returns (params or None, config).

    The parameter container type follows the packed config's fusion mode.
    """
    arrays, config = unpack_bytes(Path(path).read_bytes(), where=str(path))
    fusion = config.variant.fusion
    if fusion == "sum":
        if arrays:
            raise ConfigError(f"{path}: sum fusion pack must not contain tensors")
        return None, config
    if fusion == "single_combiner":
        return CombinerParams.from_arrays(arrays), config
    return WhcParams.from_arrays(arrays), config
