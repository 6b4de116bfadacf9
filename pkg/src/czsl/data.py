"""Dataset containers, the benchmark registry, and a synthetic generator.

Containers hold pre-extracted visual features, labels, per-class
attribute vectors, and three sample-index splits (train, test-seen,
test-unseen). On disk they use the CZSF v1 byte format:

    magic   4s   "CZSF"
    u32     version (1)
    u32     n samples, u32 feat_dim, u32 n_classes, u32 attr_dim
    u32     len(train), u32 len(test_seen), u32 len(test_unseen)
    f32[]   features, row-major n x feat_dim
    u32[]   labels (n)
    f32[]   attributes, row-major n_classes x attr_dim
    u32[]   train, test_seen, test_unseen index arrays

All integers and floats are little-endian; a file is exactly its header
plus payload, nothing else.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import check_finite

CONTAINER_MAGIC = b"CZSF"
CONTAINER_VERSION = 1
_HEADER_FMT = "<4sIIIIIIII"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


class ContainerError(Exception):
    """Base class for container file problems."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class ContainerInvariantError(ContainerError):
    pass


@dataclass(frozen=True)
class DatasetMeta:
    """Registry row: dimensions of a standard benchmark."""

    name: str
    feat_dim: int
    attr_dim: int
    n_classes: int
    n_seen: int
    n_unseen: int


REGISTRY = {
    "awa1": DatasetMeta("awa1", 2048, 85, 50, 40, 10),
    "awa2": DatasetMeta("awa2", 2048, 85, 50, 40, 10),
    "cub": DatasetMeta("cub", 2048, 312, 200, 150, 50),
    "sun": DatasetMeta("sun", 2048, 102, 717, 645, 72),
    "apy": DatasetMeta("apy", 2048, 64, 32, 20, 12),
}


def find_registry_meta(n_classes: int, attr_dim: int) -> Optional[DatasetMeta]:
    """Match a container's dimensions to a registry row (AWA1/AWA2 share
    dimensions and protocol parameters; the first match is returned)."""
    for meta in REGISTRY.values():
        if meta.n_classes == n_classes and meta.attr_dim == attr_dim:
            return meta
    return None


@dataclass
class DatasetContainer:
    features: np.ndarray  # (n, d) float32
    labels: np.ndarray  # (n,) int64
    attributes: np.ndarray  # (C, z) float32
    train_idx: np.ndarray
    test_seen_idx: np.ndarray
    test_unseen_idx: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.attributes.shape[0]

    @property
    def attr_dim(self) -> int:
        return self.attributes.shape[1]

    @property
    def seen_classes(self) -> np.ndarray:
        """Classes with test-seen samples (the GZSL seen set)."""
        return np.unique(self.labels[self.test_seen_idx])

    @property
    def unseen_classes(self) -> np.ndarray:
        return np.unique(self.labels[self.test_unseen_idx])

    def validate(self) -> "DatasetContainer":
        n = self.n_samples
        if self.labels.shape != (n,):
            raise ContainerInvariantError("labels length does not match features")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ContainerInvariantError("label outside [0, n_classes)")
        try:
            check_finite(self.features, "features")
            check_finite(self.attributes, "attributes")
        except ArithmeticError as e:
            raise ContainerInvariantError(str(e)) from e
        splits = [self.train_idx, self.test_seen_idx, self.test_unseen_idx]
        for s in splits:
            if s.size and (s.min() < 0 or s.max() >= n):
                raise ContainerInvariantError("split index out of range")
        all_idx = np.concatenate(splits)
        if np.unique(all_idx).size != all_idx.size:
            raise ContainerInvariantError("split index arrays overlap")
        return self


def write_container(c: DatasetContainer, path) -> None:
    """Serialize to CZSF v1; byte output is a pure function of the arrays."""
    c.validate()
    header = struct.pack(
        _HEADER_FMT,
        CONTAINER_MAGIC,
        CONTAINER_VERSION,
        c.n_samples,
        c.feat_dim,
        c.n_classes,
        c.attr_dim,
        len(c.train_idx),
        len(c.test_seen_idx),
        len(c.test_unseen_idx),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(c.features, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(c.labels, dtype="<u4").tobytes())
        f.write(np.ascontiguousarray(c.attributes, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(c.train_idx, dtype="<u4").tobytes())
        f.write(np.ascontiguousarray(c.test_seen_idx, dtype="<u4").tobytes())
        f.write(np.ascontiguousarray(c.test_unseen_idx, dtype="<u4").tobytes())


def read_container(path) -> DatasetContainer:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4:
        raise TruncatedFileError("file shorter than the magic")
    if blob[:4] != CONTAINER_MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}")
    if len(blob) < _HEADER_SIZE:
        raise TruncatedFileError("incomplete header")
    _, version, n, d, n_classes, z, lt, ls, lu = struct.unpack_from(_HEADER_FMT, blob, 0)
    if version != CONTAINER_VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    expected = _HEADER_SIZE + 4 * (n * d + n + n_classes * z + lt + ls + lu)
    if len(blob) < expected:
        raise TruncatedFileError(f"expected {expected} bytes, file has {len(blob)}")
    if len(blob) > expected:
        raise ContainerInvariantError("trailing bytes after payload")
    pos = _HEADER_SIZE

    def take(dtype, count):
        nonlocal pos
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
        pos += arr.nbytes
        return arr

    features = take("<f4", n * d).reshape(n, d).astype(np.float32)
    labels = take("<u4", n).astype(np.int64)
    attributes = take("<f4", n_classes * z).reshape(n_classes, z).astype(np.float32)
    train_idx = take("<u4", lt).astype(np.int64)
    test_seen_idx = take("<u4", ls).astype(np.int64)
    test_unseen_idx = take("<u4", lu).astype(np.int64)
    return DatasetContainer(
        features, labels, attributes, train_idx, test_seen_idx, test_unseen_idx
    ).validate()


def synth_dataset(
    n_seen: int,
    n_unseen: int,
    feat_dim: int,
    attr_dim: int,
    noise_sigma: float,
    samples_per_class: int,
    rng: np.random.Generator,
    test_fraction: float = 0.25,
) -> DatasetContainer:
    """Attributes on the unit sphere, features = attribute @ W + noise.

    A seed-fixed linear map W (entries N(0, 1/attr_dim)) sends each class
    attribute into feature space; samples add isotropic Gaussian noise of
    the given sigma. Every class is split train/test so the continual
    protocols (where unseen classes later become seen) have training data
    for all of them; classes [0, n_seen) fill the test-seen split and the
    rest fill test-unseen.
    """
    if attr_dim < 1 or feat_dim < attr_dim:
        raise ValueError("need feat_dim >= attr_dim >= 1")
    if n_seen < 1 or n_unseen < 0:
        raise ValueError("need at least one seen class")
    if samples_per_class < 2:
        raise ValueError("need at least 2 samples per class to split train/test")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    n_classes = n_seen + n_unseen
    attrs = rng.standard_normal((n_classes, attr_dim))
    attrs /= np.linalg.norm(attrs, axis=1, keepdims=True)
    w = rng.standard_normal((attr_dim, feat_dim)) / np.sqrt(attr_dim)
    clean = attrs @ w
    m = samples_per_class
    features = np.repeat(clean, m, axis=0)
    features = features + noise_sigma * rng.standard_normal(features.shape)
    labels = np.repeat(np.arange(n_classes), m)
    k_test = min(m - 1, max(1, int(round(test_fraction * m))))
    train_parts, seen_test, unseen_test = [], [], []
    for c in range(n_classes):
        block = np.arange(c * m, (c + 1) * m)
        train_parts.append(block[: m - k_test])
        (seen_test if c < n_seen else unseen_test).append(block[m - k_test :])
    return DatasetContainer(
        features=features.astype(np.float32),
        labels=labels.astype(np.int64),
        attributes=attrs.astype(np.float32),
        train_idx=np.concatenate(train_parts),
        test_seen_idx=np.concatenate(seen_test) if seen_test else np.array([], dtype=np.int64),
        test_unseen_idx=np.concatenate(unseen_test) if unseen_test else np.array([], dtype=np.int64),
    ).validate()
