"""Dataset container: one JSON header line followed by raw float64 payload.

Layout::

    {"magic": "HSUX", "version": 1, "kind": ..., "arrays": [...], ...}\\n
    <little-endian float64 values, arrays concatenated in header order>

Each entry of ``arrays`` is ``{"name": str, "shape": [int, ...]}``; values
are row-major, so an ``H x W x B`` cube is band-interleaved-by-pixel. The
header is compact JSON with sorted keys, so identical content always gives
identical bytes.
"""

import json
from pathlib import Path

import numpy as np

MAGIC = "HSUX"
VERSION = 1
KINDS = ("cube", "abundance", "endmembers", "bundle")
DTYPE = "<f8"


class FormatError(ValueError):
    """File is not a valid dataset container."""


def write_container(path, kind, arrays, magic=MAGIC, **fields):
    """Write named arrays plus extra header ``fields`` to ``path``."""
    entries = []
    payload = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=DTYPE)
        entries.append({"name": name, "shape": list(arr.shape)})
        payload.append(arr.tobytes())
    header = {"magic": magic, "version": VERSION, "kind": kind, "dtype": "f64le",
              "arrays": entries, **fields}
    text = json.dumps(header, sort_keys=True, separators=(",", ":"))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(text.encode("utf-8") + b"\n")
        for chunk in payload:
            fh.write(chunk)
    return path


def read_header(path, magic=MAGIC):
    with open(path, "rb") as fh:
        line = fh.readline()
    return _parse_header(line, magic, path)


def _parse_header(line, magic, path):
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header") from exc
    if header.get("magic") != magic:
        raise FormatError(f"{path}: bad magic {header.get('magic')!r}")
    if header.get("version") != VERSION or header.get("dtype") != "f64le":
        raise FormatError(f"{path}: unsupported version/dtype")
    return header


def read_container(path, magic=MAGIC):
    """Return ``(header, {name: array})``."""
    with open(path, "rb") as fh:
        header = _parse_header(fh.readline(), magic, path)
        body = fh.read()
    sizes = [int(np.prod(e["shape"], dtype=np.int64)) for e in header["arrays"]]
    if len(body) != 8 * sum(sizes):
        raise FormatError(f"{path}: payload has {len(body)} bytes, header declares {8 * sum(sizes)}")
    flat = np.frombuffer(body, dtype=DTYPE)
    arrays, pos = {}, 0
    for entry, size in zip(header["arrays"], sizes):
        arrays[entry["name"]] = flat[pos:pos + size].reshape(entry["shape"]).astype(np.float64)
        pos += size
    return header, arrays


def write_dataset(path, kind, arrays, **fields):
    if kind not in KINDS:
        raise FormatError(f"unknown dataset kind {kind!r}")
    return write_container(path, kind, arrays, **fields)


def read_dataset(path, kind=None):
    header, arrays = read_container(path)
    if kind is not None and header["kind"] != kind:
        raise FormatError(f"{path}: expected kind {kind!r}, found {header['kind']!r}")
    return header, arrays
