"""Binary checkpoint format.

Layout::

    b"SKRN" | version (1 byte) | header length (uint32 LE) | JSON header | float32 LE data | CRC-32 (uint32 LE)

The header carries the network spec, free-form metadata, a manifest of
``{name, shape, offset}`` entries (byte offsets into the data block), the
expected data length and a CRC-32 of the data block. The trailing CRC-32
covers every preceding byte, so damage to the header is caught as well.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .errors import ChecksumError
from .resnet import NetworkSpec

MAGIC = b"SKRN"
VERSION = 1


def save_checkpoint(path, spec: NetworkSpec, params: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    manifest, chunks, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    data = b"".join(chunks)
    header = json.dumps({
        "spec": spec.to_dict(),
        "meta": meta or {},
        "tensors": manifest,
        "data_bytes": len(data),
        "crc32": zlib.crc32(data),
    }).encode()
    tmp = Path(str(path) + ".tmp")
    body = MAGIC + bytes([VERSION]) + struct.pack("<I", len(header)) + header + data
    with open(tmp, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[NetworkSpec, dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if len(blob) < 13 or blob[:4] != MAGIC:
        raise ChecksumError(f"{path}: not a skelres checkpoint")
    if blob[4] != VERSION:
        raise ChecksumError(f"{path}: unsupported checkpoint version {blob[4]}")
    blob, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob) != crc:
        raise ChecksumError(f"{path}: file checksum mismatch (truncated or corrupt)")
    (hlen,) = struct.unpack("<I", blob[5:9])
    if len(blob) < 9 + hlen:
        raise ChecksumError(f"{path}: truncated header")
    try:
        header = json.loads(blob[9:9 + hlen])
    except ValueError:
        raise ChecksumError(f"{path}: corrupt header") from None
    data = blob[9 + hlen:]
    if not isinstance(header, dict) or len(data) != header.get("data_bytes"):
        raise ChecksumError(f"{path}: data block length does not match the header")
    if zlib.crc32(data) != header.get("crc32"):
        raise ChecksumError(f"{path}: data checksum mismatch")

    try:
        params = {}
        for entry in header["tensors"]:
            n = int(np.prod(entry["shape"], dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=entry["offset"])
            params[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
        return NetworkSpec.from_dict(header["spec"]), params, header["meta"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ChecksumError(f"{path}: malformed header ({exc})") from None
