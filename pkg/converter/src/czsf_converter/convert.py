"""Loading the MAT source bundles and converting them to CZSF."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io

from .czsf import write_czsf
from .registry import REGISTRY


class ConvertError(Exception):
    pass


@dataclass
class SourceBundle:
    """Arrays from res101.mat + att_splits.mat, still in source conventions
    (1-based labels and indices, attribute orientation as found)."""

    features: np.ndarray  # (n, d) after orientation
    labels: np.ndarray  # (n,) 1-based
    attributes: np.ndarray  # (C, z) after orientation
    trainval_loc: np.ndarray  # 1-based
    test_seen_loc: np.ndarray
    test_unseen_loc: np.ndarray


def _load_mat(path: Path) -> dict:
    """scipy for MAT <= v7.2; h5py fallback for v7.3 (HDF5) files."""
    try:
        return scipy.io.loadmat(path)
    except NotImplementedError:
        try:
            import h5py
        except ImportError as e:
            raise ConvertError(f"{path} is a v7.3 MAT file; install h5py to read it") from e
        out = {}
        with h5py.File(path, "r") as f:
            for key in f.keys():
                # MATLAB/HDF5 stores column-major; transpose back
                out[key] = np.array(f[key]).T
        return out


def _require(mat: dict, key: str, path) -> np.ndarray:
    if key not in mat:
        raise ConvertError(f"{path} is missing the '{key}' array")
    return np.asarray(mat[key])


def _orient_features(features: np.ndarray, n: int) -> np.ndarray:
    if features.ndim != 2:
        raise ConvertError("features must be a 2-D array")
    rows, cols = features.shape
    if rows == cols:
        raise ConvertError("square feature matrix: cannot infer orientation")
    if cols == n:
        return features.T
    if rows == n:
        return features
    raise ConvertError(f"feature matrix {features.shape} does not match {n} labels")


def _orient_attributes(att: np.ndarray, n_classes: int) -> np.ndarray:
    if att.ndim != 2:
        raise ConvertError("attribute matrix must be 2-D")
    rows, cols = att.shape
    if rows == cols:
        raise ConvertError("square attribute matrix: cannot infer orientation")
    if rows == n_classes:
        return att
    if cols == n_classes:
        return att.T
    raise ConvertError(f"attribute matrix {att.shape} does not match {n_classes} classes")


def load_source_bundle(src_dir) -> SourceBundle:
    src = Path(src_dir)
    res_path = src / "res101.mat"
    att_path = src / "att_splits.mat"
    for p in (res_path, att_path):
        if not p.exists():
            raise ConvertError(f"missing source file {p}")
    res = _load_mat(res_path)
    att = _load_mat(att_path)

    labels = _require(res, "labels", res_path).ravel().astype(np.int64)
    n = labels.size
    features = _orient_features(_require(res, "features", res_path), n)
    attributes_raw = _require(att, "att", att_path)
    n_classes = int(labels.max())
    attributes = _orient_attributes(attributes_raw, n_classes)

    def loc(key):
        return _require(att, key, att_path).ravel().astype(np.int64)

    bundle = SourceBundle(
        features=features,
        labels=labels,
        attributes=attributes,
        trainval_loc=loc("trainval_loc"),
        test_seen_loc=loc("test_seen_loc"),
        test_unseen_loc=loc("test_unseen_loc"),
    )
    _validate_bundle(bundle)
    return bundle


def _validate_bundle(b: SourceBundle) -> None:
    n = b.labels.size
    if b.features.shape[0] != n:
        raise ConvertError("feature count does not match labels")
    if b.labels.min() < 1:
        raise ConvertError("labels must be 1-based in the source")
    for name in ("trainval_loc", "test_seen_loc", "test_unseen_loc"):
        v = getattr(b, name)
        if v.size and (v.min() < 1 or v.max() > n):
            raise ConvertError(f"{name} contains out-of-range indices")


def convert(src_dir, dataset_name: str, out_path) -> str:
    """Convert a source bundle to CZSF; returns the sha256 hex digest.

    Registry dataset names enforce the expected dimensions and abort on
    mismatch; other names accept whatever consistent shapes the source
    carries. Values pass through bit-exactly when the source is float32;
    float64 sources are rounded to nearest float32.
    """
    bundle = load_source_bundle(src_dir)
    name = dataset_name.lower()
    n_classes, z = bundle.attributes.shape
    d = bundle.features.shape[1]
    if name in REGISTRY:
        want = REGISTRY[name]
        got = (d, z, n_classes)
        expect = (want.feat_dim, want.attr_dim, want.n_classes)
        if got != expect:
            raise ConvertError(
                f"{name}: source dims (d={d}, z={z}, C={n_classes}) do not match "
                f"the registry (d={expect[0]}, z={expect[1]}, C={expect[2]})"
            )
    return write_czsf(
        out_path,
        bundle.features.astype(np.float32, copy=False),
        (bundle.labels - 1).astype(np.uint32),
        bundle.attributes.astype(np.float32, copy=False),
        (bundle.trainval_loc - 1).astype(np.uint32),
        (bundle.test_seen_loc - 1).astype(np.uint32),
        (bundle.test_unseen_loc - 1).astype(np.uint32),
    )
