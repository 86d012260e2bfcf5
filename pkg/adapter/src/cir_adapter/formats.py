"""Writers for the fusion engine's on-disk contracts.

Implemented from the byte-level format description, independently of the
engine's own code: tensor files are magic "MVST", version u8=1, dtype u8=1
(little-endian float32), reserved u16=0, rank u32, dims rank x u32, then the
row-major payload.  Manifests are line-oriented JSON with a companion
gallery file.  The engine's loader is used as a conformance oracle in the
tests only.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import EncoderFailureError

TENSOR_MAGIC = b"MVST"


def tensor_bytes(values) -> bytes:
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float32))
    if not np.all(np.isfinite(arr)):
        raise EncoderFailureError("refusing to serialize non-finite features")
    header = TENSOR_MAGIC + struct.pack("<BBHI", 1, 1, 0, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + dims + arr.tobytes()


def write_tensor(path, values) -> None:
    Path(path).write_bytes(tensor_bytes(values))


def manifest_line(
    sample_id: str,
    split: str,
    paths: dict[str, str | None],
    target_id: str,
) -> str:
    record = {
        "id": sample_id,
        "split": split,
        "patches": paths["patches"],
        "cls": paths["cls"],
        "instances": paths["instances"],
        "text_mod": paths["text_mod"],
        "text_retained": paths["text_retained"],
        "text_deleted": paths["text_deleted"],
        "text_target": paths["text_target"],
        "target_id": target_id,
    }
    return json.dumps(record)


def gallery_line(entry_id: str, embedding_path: str) -> str:
    return json.dumps({"id": entry_id, "embedding": embedding_path})
