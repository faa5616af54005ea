"""Customizable Recall@N optimization losses for two-tower retrieval models."""

from croloss.kernels import Kernel, KernelKind
from croloss.weighting import Weighting, make_weighting
from croloss.ranking import GapBatch, GapVector, rank_exact, rank_smooth, rank_smooth_grad
from croloss.losses import LossFamily, LossOutput, LossSpec, compute_loss

__all__ = [
    "GapBatch",
    "GapVector",
    "Kernel",
    "KernelKind",
    "LossFamily",
    "LossOutput",
    "LossSpec",
    "Weighting",
    "compute_loss",
    "make_weighting",
    "rank_exact",
    "rank_smooth",
    "rank_smooth_grad",
]

__version__ = "0.1.0"
