"""MAT-to-CZSF dataset converter.

Reads the publicly distributed pre-extracted-feature bundles (a
``res101.mat`` with visual features and labels plus an ``att_splits.mat``
with per-class attributes and split index vectors) and emits a CZSF v1
container with 0-based labels and indices, attributes oriented classes x
dims, and a sha256 sidecar for integrity checking.
"""

from .convert import ConvertError, SourceBundle, convert, load_source_bundle
from .czsf import read_czsf, write_czsf
from .registry import REGISTRY

__version__ = "0.1.0"

__all__ = [
    "ConvertError",
    "REGISTRY",
    "SourceBundle",
    "convert",
    "load_source_bundle",
    "read_czsf",
    "write_czsf",
]
