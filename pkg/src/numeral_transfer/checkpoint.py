"""``NXFR`` checkpoint files.

Layout (all integers little-endian)::

    b"NXFR" | format_version u32 | header_len u32 | header (UTF-8 JSON, header_len bytes)
    | parameter blobs: float32 LE, layer order, weights then bias

The JSON header holds the layer specs, the architecture fingerprint, per-layer
trainable flags, a SHA-256 of the blob section and free-form provenance. Every
length and the digest are checked before a model is handed back, so a truncated,
padded or bit-flipped file never loads partially.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from . import nn
from .errors import (BadMagicError, CheckpointError, ChecksumMismatchError,
                     FingerprintMismatchError, LengthMismatchError, UnsupportedVersionError)

MAGIC = b"NXFR"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")


def _blob_layout(model: nn.Model):
    for i, p in enumerate(model.params):
        if p is not None:
            yield i, "W", p["W"].shape
            yield i, "b", p["b"].shape


def save(model: nn.Model, provenance: dict, path) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    fp = model.fingerprint()
    expected = nn.param_shapes(model.specs, model.input_shape)
    for i, p in enumerate(model.params):
        if p is not None and (p["W"].shape != expected[i]["W"] or p["b"].shape != expected[i]["b"]):
            raise CheckpointError(f"layer {i}: parameter shapes disagree with the architecture")
    blobs = b"".join(np.ascontiguousarray(model.params[i][k], dtype="<f4").tobytes()
                     for i, k, _ in _blob_layout(model))
    header = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(model.input_shape),
        "layers": [s.to_dict() for s in model.specs],
        "trainable": list(model.trainable),
        "fingerprint": fp["hash"],
        "blobs": [{"layer": i, "name": k, "shape": list(sh)} for i, k, sh in _blob_layout(model)],
        "blob_sha256": hashlib.sha256(blobs).hexdigest(),
        "provenance": provenance,
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hdr)))
            fh.write(hdr)
            fh.write(blobs)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def load(path, expect_fingerprint: str | None = None):
    """Return ``(model, provenance)``. ``expect_fingerprint`` (e.g.
    ``nn.table1_fingerprint()``) rejects checkpoints of any other architecture."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {str(path)!r}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise LengthMismatchError(f"{path}: {len(raw)} bytes is shorter than the fixed prefix")
    magic, version, hdr_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported format version {version}")
    body = _PREFIX.size + hdr_len
    if len(raw) < body:
        raise LengthMismatchError(f"{path}: header claims {hdr_len} bytes, file ends early")
    try:
        header = json.loads(raw[_PREFIX.size:body].decode("utf-8"))
        specs = [nn.LayerSpec(**d) for d in header["layers"]]
        input_shape = tuple(header["input_shape"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc

    fp = nn.architecture_fingerprint(specs, input_shape)["hash"]
    if fp != header.get("fingerprint"):
        raise FingerprintMismatchError(f"{path}: stored fingerprint does not match its layer list")
    if expect_fingerprint is not None and fp != expect_fingerprint:
        raise FingerprintMismatchError(
            f"{path}: architecture fingerprint {fp[:12]} != expected {expect_fingerprint[:12]}")

    shapes = nn.param_shapes(specs, input_shape)
    layout = [(i, k, tuple(sh[k])) for i, sh in enumerate(shapes) if sh is not None for k in ("W", "b")]
    declared = [(b["layer"], b["name"], tuple(b["shape"])) for b in header.get("blobs", [])]
    if declared != layout:
        raise LengthMismatchError(f"{path}: blob table disagrees with the architecture")
    need = sum(4 * int(np.prod(sh)) for _, _, sh in layout)
    if len(raw) - body != need:
        raise LengthMismatchError(f"{path}: parameter section is {len(raw) - body} bytes, expected {need}")
    digest = header.get("blob_sha256")
    if digest is not None and hashlib.sha256(memoryview(raw)[body:]).hexdigest() != digest:
        raise ChecksumMismatchError(f"{path}: parameter blobs fail their SHA-256 check (corrupted file)")

    params = [None if sh is None else {} for sh in shapes]
    off = body
    for i, k, sh in layout:
        count = int(np.prod(sh))
        params[i][k] = np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(np.float32).reshape(sh)
        off += 4 * count
    trainable = header.get("trainable") or [True] * len(specs)
    model = nn.Model(specs, params, [bool(t) for t in trainable], input_shape)
    return model, header.get("provenance", {})


def read_header(path) -> dict:
    raw = Path(path).read_bytes()
    magic, version, hdr_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    return json.loads(raw[_PREFIX.size:_PREFIX.size + hdr_len].decode("utf-8"))
