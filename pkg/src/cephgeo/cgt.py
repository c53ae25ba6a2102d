"""CGT tensor interchange format.

Layout (all little-endian): 8-byte magic ``CGTENS01``, u32 header length,
UTF-8 JSON header ``{"dtype": "f32", "shape": [C, H, W],
"channel_names": [...]}``, then the row-major float32 payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .errors import ParseError, ValidationError

MAGIC = b"CGTENS01"


def write_cgt(path, tensor: np.ndarray, channel_names: List[str]) -> None:
    arr = np.asarray(tensor)
    if arr.ndim != 3:
        raise ValidationError(f"CGT tensors are (C, H, W), got shape {arr.shape}")
    if len(channel_names) != arr.shape[0]:
        raise ValidationError(
            f"{len(channel_names)} channel names for {arr.shape[0]} channels"
        )
    payload = np.ascontiguousarray(arr, dtype="<f4")
    header = json.dumps(
        {
            "dtype": "f32",
            "shape": [int(s) for s in arr.shape],
            "channel_names": list(channel_names),
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload.tobytes())


def read_cgt(path) -> Tuple[np.ndarray, List[str], dict]:
    p = Path(path)
    try:
        blob = p.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {p}: {exc}") from exc
    if len(blob) < 12 or blob[:8] != MAGIC:
        raise ParseError(f"{p}: not a CGT file (bad magic)")
    (hlen,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + hlen:
        raise ParseError(f"{p}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{p}: malformed CGT header: {exc}") from exc
    if header.get("dtype") != "f32":
        raise ParseError(f"{p}: unsupported dtype {header.get('dtype')!r}")
    shape = tuple(int(s) for s in header["shape"])
    if len(shape) != 3:
        raise ParseError(f"{p}: CGT shape must have rank 3, got {shape}")
    count = shape[0] * shape[1] * shape[2]
    if len(blob) - 12 - hlen < 4 * count:
        raise ParseError(f"{p}: truncated payload")
    data = np.frombuffer(blob, dtype="<f4", offset=12 + hlen, count=count)
    names = [str(n) for n in header.get("channel_names", [])]
    if names and len(names) != shape[0]:
        raise ParseError(f"{p}: {len(names)} channel names for {shape[0]} channels")
    return data.reshape(shape).copy(), names, header
