"""Motion-sequence inpainting with a three-branch GAN, built on a small numpy autodiff core."""
from .data import (
    MotionDataset, MotionSequence, OcclusionMask, SkeletonTopology, apply_mask, get_topology, read_dataset,
    write_dataset,
)
from .errors import ContractError, DimensionError, DomainError, FormatError, NumericError, StmiError

__version__ = "0.1.0"

__all__ = [
    "MotionDataset", "MotionSequence", "OcclusionMask", "SkeletonTopology", "apply_mask", "get_topology",
    "read_dataset", "write_dataset", "ContractError", "DimensionError", "DomainError", "FormatError",
    "NumericError", "StmiError",
]
