"""Binary artifact containers (``PODS``, ``PODB``, ``PODM``).

Layout::

    magic      4 bytes
    version    uint32 little-endian
    hdr_len    uint32 little-endian
    header     hdr_len bytes of UTF-8 JSON (sorted keys, compact)
    payload    little-endian float64 values

The header lists the payload blocks by name and shape so a reader can check
the byte count before touching the data.
"""

from __future__ import annotations

import json
import struct

import numpy as np

FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")


class FormatError(ValueError):
    """Malformed, truncated or wrong-version container."""


class DimensionError(ValueError):
    """Container dimensions disagree with the current configuration."""


def _dumps(header) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def write_container(path, magic: bytes, header: dict, blocks: list[tuple[str, np.ndarray]]) -> None:
    """Write named float64 arrays in column-major order after a JSON header."""
    header = dict(header)
    header["blocks"] = [[name, list(np.shape(arr))] for name, arr in blocks]
    hdr = _dumps(header)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(magic, FORMAT_VERSION, len(hdr)))
        fh.write(hdr)
        for _, arr in blocks:
            a = np.asarray(arr, dtype="<f8")
            fh.write(a.tobytes(order="F"))


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for a container header")
    got_magic, version, hdr_len = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {got_magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
    start = _PREFIX.size + hdr_len
    if len(data) < start:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[_PREFIX.size:start].decode())
        blocks = header.pop("blocks")
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None

    sizes = [int(np.prod(shape, dtype=np.int64)) for _, shape in blocks]
    expected = start + 8 * sum(sizes)
    if len(data) != expected:
        raise FormatError(
            f"{path}: payload is {len(data) - start} bytes, header describes {expected - start}"
        )
    arrays = {}
    offset = start
    for (name, shape), size in zip(blocks, sizes):
        flat = np.frombuffer(data, dtype="<f8", count=size, offset=offset)
        arrays[name] = flat.reshape(shape, order="F").astype(float)
        offset += 8 * size
    return header, arrays
