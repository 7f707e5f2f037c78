"""Binary checkpoint format.

Layout::

    b"HMEQCKPT"                  8-byte magic
    uint64 little-endian         manifest length in bytes
    manifest                     UTF-8 JSON: format, dtype, config, params
                                 [{name, shape, offset, nbytes}], blob_bytes
    blob                         little-endian raw scalars, params in order
"""

import json
import struct

import numpy as np

from .errors import CheckpointError
from .params import ParameterSet
from .tensor import Tensor

MAGIC = b"HMEQCKPT"
FORMAT_VERSION = 1


def _encode(params, config=None):
    dtype = None
    entries, chunks, offset = [], [], 0
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        dtype = dtype or le.dtype.str
        if le.dtype.str != dtype:
            raise CheckpointError("all parameters must share one element type")
        raw = le.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT_VERSION,
        "dtype": dtype or "<f8",
        "config": config,
        "params": entries,
        "blob_bytes": offset,
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def save_checkpoint(params, path, config=None):
    """Write ``params`` (and an optional config dict) to ``path``."""
    with open(path, "wb") as fh:
        fh.write(_encode(params, config))


def read_checkpoint(path):
    """Return ``(manifest, {name: array})`` after validating structure."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < len(MAGIC) or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: truncated header")
    (n_head,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + n_head:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:16 + n_head].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest: {e}") from e
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {manifest.get('format')!r}")
    blob = raw[16 + n_head:]
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(f"{path}: truncated blob ({len(blob)} of {manifest['blob_bytes']} bytes)")
    dtype = np.dtype(manifest["dtype"])
    arrays = {}
    for e in manifest["params"]:
        shape = tuple(e["shape"])
        if int(np.prod(shape, dtype=np.int64)) * dtype.itemsize != e["nbytes"] or e["offset"] + e["nbytes"] > len(blob):
            raise CheckpointError(f"{path}: inconsistent manifest entry for {e['name']}")
        chunk = blob[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return manifest, arrays


def load_checkpoint(path, expected=None):
    """Load a ParameterSet; ``expected`` is an optional shape manifest to enforce.

    ``expected`` is a list of ``(name, shape)`` pairs as produced by
    ``ParameterSet.manifest()``.
    """
    manifest, arrays = read_checkpoint(path)
    if expected is not None:
        got = [(e["name"], tuple(e["shape"])) for e in manifest["params"]]
        want = [(n, tuple(s)) for n, s in expected]
        if got != want:
            missing = sorted(set(want) - set(got))[:3]
            extra = sorted(set(got) - set(want))[:3]
            raise CheckpointError(f"{path}: shape manifest mismatch (missing {missing}, unexpected {extra})")
    params = ParameterSet()
    for name, arr in arrays.items():
        params.add(name, Tensor(arr, dtype=arr.dtype))
    return params
