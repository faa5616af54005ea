"""Rank statistics of a positive item against its negatives.

Everything here depends on scores only through gaps
``g_i = S(u, v_i) - S(u, v)``.  A positive that ties a negative loses the tie.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from croloss.kernels import Kernel, KernelKind


@dataclass(frozen=True)
class GapVector:
    """Gaps of one positive against its negatives.

    ``sample_scale`` is ``|I| / |I'|`` for a sampled candidate set ``I'`` (the
    positive plus its negatives) and exactly 1 under full-catalog scoring.
    """

    gaps: np.ndarray
    sample_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "gaps", np.asarray(self.gaps, dtype=np.float64).reshape(-1))


@dataclass(frozen=True)
class GapBatch:
    """Padded stack of gap vectors: ``gaps`` and ``mask`` are (P, K), ``scale`` is (P,).

    Entries with ``mask == False`` are padding (or sampled negatives that
    collided with the positive) and never contribute.
    """

    gaps: np.ndarray
    mask: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_vectors(cls, vectors: Sequence[GapVector]) -> "GapBatch":
        width = max((len(v.gaps) for v in vectors), default=0)
        gaps = np.zeros((len(vectors), width))
        mask = np.zeros((len(vectors), width), dtype=bool)
        for row, v in enumerate(vectors):
            gaps[row, : len(v.gaps)] = v.gaps
            mask[row, : len(v.gaps)] = True
        scale = np.array([v.sample_scale for v in vectors], dtype=np.float64)
        return cls(gaps, mask, scale)

    @classmethod
    def from_scores(cls, pos_scores, neg_scores, mask=None, scale=None) -> "GapBatch":
        """Gaps from positive scores (P,) and negative scores (P, K)."""
        neg = np.asarray(neg_scores, dtype=np.float64)
        gaps = neg - np.asarray(pos_scores, dtype=np.float64)[:, None]
        if mask is None:
            mask = np.ones(gaps.shape, dtype=bool)
        if scale is None:
            scale = np.ones(gaps.shape[0])
        return cls(gaps, np.asarray(mask, dtype=bool), np.asarray(scale, dtype=np.float64))

    def __len__(self) -> int:
        return self.gaps.shape[0]

    def vectors(self) -> list[GapVector]:
        return [GapVector(g[m], s) for g, m, s in zip(self.gaps, self.mask, self.scale)]


def as_batch(g) -> GapBatch:
    if isinstance(g, GapBatch):
        return g
    if isinstance(g, GapVector):
        return GapBatch.from_vectors([g])
    return GapBatch.from_vectors(list(g))


def kernel_sums(batch: GapBatch, k: Kernel) -> np.ndarray:
    """Per-positive ``sum_i phi(g_i)`` over unmasked entries (pairwise summation)."""
    vals = np.where(batch.mask, k.value(batch.gaps), 0.0)
    return np.sum(vals, axis=1)


def rank_exact(g: GapVector) -> float:
    """``1 + #{i : g_i >= 0}`` under full-catalog scoring."""
    if g.sample_scale != 1.0:
        raise ValueError("exact rank is undefined for a sampled candidate set")
    return 1.0 + float(np.count_nonzero(g.gaps >= 0))


def rank_smooth(g: GapVector, k: Kernel) -> float:
    """Sampled, kernel-smoothed rank ``scale * (1 + sum_i phi(g_i))``."""
    return float(g.sample_scale * (1.0 + np.sum(k.value(g.gaps))))


def rank_smooth_grad(g: GapVector, k: Kernel) -> np.ndarray:
    """Gradient of :func:`rank_smooth` with respect to each gap."""
    if k.kind is KernelKind.UNIT_STEP:
        raise ValueError("unit_step kernel has no usable derivative")
    return g.sample_scale * k.deriv(g.gaps)


def rank_smooth_batch(batch: GapBatch, k: Kernel) -> np.ndarray:
    """Vectorised :func:`rank_smooth` over a :class:`GapBatch`."""
    return batch.scale * (1.0 + kernel_sums(batch, k))
