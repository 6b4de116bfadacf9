"""Expected dimensions of the standard benchmark datasets.

Conversions under these names abort unless the source files match; any
other dataset name is converted with dimensions inferred from the files.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class DatasetDims:
    name: str
    feat_dim: int
    attr_dim: int
    n_classes: int


REGISTRY = {
    "awa1": DatasetDims("awa1", 2048, 85, 50),
    "awa2": DatasetDims("awa2", 2048, 85, 50),
    "cub": DatasetDims("cub", 2048, 312, 200),
    "sun": DatasetDims("sun", 2048, 102, 717),
    "apy": DatasetDims("apy", 2048, 64, 32),
}
