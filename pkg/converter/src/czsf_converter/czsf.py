"""CZSF v1 container serialization (converter-side implementation).

Byte layout, little-endian throughout:

    magic   4s   "CZSF"
    u32     version (1)
    u32     n samples, u32 feat_dim, u32 n_classes, u32 attr_dim
    u32     len(train), u32 len(test_seen), u32 len(test_unseen)
    f32[]   features, row-major n x feat_dim
    u32[]   labels (n)
    f32[]   attributes, row-major n_classes x attr_dim
    u32[]   train, test_seen, test_unseen index arrays
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MAGIC = b"CZSF"
VERSION = 1
_HEADER_FMT = "<4sIIIIIIII"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


class CzsfError(Exception):
    pass


def write_czsf(path, features, labels, attributes, train_idx, test_seen_idx, test_unseen_idx):
    """Write a container and a sha256 sidecar; returns the hex digest."""
    n, d = features.shape
    n_classes, z = attributes.shape
    header = struct.pack(
        _HEADER_FMT,
        MAGIC,
        VERSION,
        n,
        d,
        n_classes,
        z,
        len(train_idx),
        len(test_seen_idx),
        len(test_unseen_idx),
    )
    payload = b"".join(
        [
            header,
            np.ascontiguousarray(features, dtype="<f4").tobytes(),
            np.ascontiguousarray(labels, dtype="<u4").tobytes(),
            np.ascontiguousarray(attributes, dtype="<f4").tobytes(),
            np.ascontiguousarray(train_idx, dtype="<u4").tobytes(),
            np.ascontiguousarray(test_seen_idx, dtype="<u4").tobytes(),
            np.ascontiguousarray(test_unseen_idx, dtype="<u4").tobytes(),
        ]
    )
    with open(path, "wb") as f:
        f.write(payload)
    digest = hashlib.sha256(payload).hexdigest()
    with open(str(path) + ".sha256", "w") as f:
        f.write(digest + "\n")
    return digest


def read_czsf(path):
    """Parse and validate a container; returns a dict of arrays."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER_SIZE or blob[:4] != MAGIC:
        raise CzsfError("not a CZSF file")
    _, version, n, d, n_classes, z, lt, ls, lu = struct.unpack_from(_HEADER_FMT, blob, 0)
    if version != VERSION:
        raise CzsfError(f"unsupported version {version}")
    expected = _HEADER_SIZE + 4 * (n * d + n + n_classes * z + lt + ls + lu)
    if len(blob) != expected:
        raise CzsfError(f"payload size mismatch: expected {expected} bytes, got {len(blob)}")
    pos = _HEADER_SIZE

    def take(dtype, count):
        nonlocal pos
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
        pos += arr.nbytes
        return arr

    out = {
        "features": take("<f4", n * d).reshape(n, d),
        "labels": take("<u4", n),
        "attributes": take("<f4", n_classes * z).reshape(n_classes, z),
        "train_idx": take("<u4", lt),
        "test_seen_idx": take("<u4", ls),
        "test_unseen_idx": take("<u4", lu),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    if out["labels"].size and out["labels"].max() >= n_classes:
        raise CzsfError("label outside [0, n_classes)")
    for key in ("train_idx", "test_seen_idx", "test_unseen_idx"):
        if out[key].size and out[key].max() >= n:
            raise CzsfError(f"{key} index out of range")
    if not np.all(np.isfinite(out["features"])) or not np.all(np.isfinite(out["attributes"])):
        raise CzsfError("non-finite values in payload")
    return out
