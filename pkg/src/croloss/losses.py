"""Loss values and analytic score gradients.

All losses take a :class:`~croloss.ranking.GapBatch` (or a sequence of
:class:`~croloss.ranking.GapVector`) and return a :class:`LossOutput` whose
gradients are with respect to the positive score and each negative score.
Batches are reduced by a plain sum.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from croloss.kernels import Kernel, softplus, sigmoid
from croloss.ranking import GapBatch, as_batch, kernel_sums
from croloss.weighting import Weighting


class LossFamily(str, enum.Enum):
    CROLOSS = "croloss"
    CROLOSS_LAMBDA = "croloss_lambda"
    SOFTMAX_CE = "softmax_ce"
    TRIPLET = "triplet"
    BPR = "bpr"


@dataclass(frozen=True)
class LossSpec:
    family: LossFamily
    kernel: Optional[Kernel] = None
    kernel1: Optional[Kernel] = None
    kernel2: Optional[Kernel] = None
    weighting: Optional[Weighting] = None
    margin: float = 5.0

    def __post_init__(self):
        family = LossFamily(self.family)
        object.__setattr__(self, "family", family)
        if family is LossFamily.CROLOSS:
            if self.kernel is None or self.weighting is None:
                raise ValueError("croloss needs a kernel and a weighting")
            if not self.kernel.differentiable:
                raise ValueError("croloss needs a differentiable kernel")
        elif family is LossFamily.CROLOSS_LAMBDA:
            if self.kernel1 is None or self.kernel2 is None or self.weighting is None:
                raise ValueError("croloss_lambda needs kernel1, kernel2 and a weighting")
            if not self.kernel2.differentiable:
                raise ValueError("croloss_lambda needs a differentiable kernel2")
        elif family is LossFamily.TRIPLET and self.margin < 0:
            raise ValueError("triplet margin must be >= 0")

    @property
    def label(self) -> str:
        """Short human-readable name used in tables and logs."""
        f = self.family
        if f is LossFamily.CROLOSS:
            return f"croloss[{self.kernel.name}]"
        if f is LossFamily.CROLOSS_LAMBDA:
            return f"lambda[{self.kernel1.name}/{self.kernel2.name}]"
        return f.value


@dataclass
class LossOutput:
    """Summed loss and its gradients.

    ``grad_neg`` is (P, K) aligned with the batch's gap matrix, zero on masked
    entries; ``grad_pos`` is (P,) and always equals ``-grad_neg.sum(1)``.
    """

    value: float
    grad_pos: np.ndarray
    grad_neg: np.ndarray
    per_positive: np.ndarray

    def gap_grad(self) -> np.ndarray:
        """Gradient with respect to the gaps (identical to ``grad_neg``)."""
        return self.grad_neg


def _assemble(per_positive: np.ndarray, gap_grad: np.ndarray, batch: GapBatch) -> LossOutput:
    gap_grad = np.where(batch.mask, gap_grad, 0.0)
    return LossOutput(
        value=float(np.sum(per_positive)),
        grad_pos=-np.sum(gap_grad, axis=1),
        grad_neg=gap_grad,
        per_positive=per_positive,
    )


def _density_arg(weighting: Weighting, r_hat: np.ndarray) -> np.ndarray:
    # keep the density on its support so gradients stay finite and non-zero
    return np.clip(r_hat, 1.0, np.nextafter(weighting.upper, 0.0))


def croloss_forward(spec: LossSpec, batch_gaps) -> LossOutput:
    """``sum W(R_hat)`` with ``R_hat = scale * (1 + sum phi(g))``."""
    if spec.family is not LossFamily.CROLOSS:
        raise ValueError(f"croloss_forward called with family {spec.family.value}")
    batch = as_batch(batch_gaps)
    w, k = spec.weighting, spec.kernel
    vals, derivs = k.value_and_deriv(batch.gaps)
    r_hat = batch.scale * (1.0 + np.sum(np.where(batch.mask, vals, 0.0), axis=1))
    dens = w.density(_density_arg(w, r_hat))
    gap_grad = (dens * batch.scale)[:, None] * derivs
    return _assemble(w.cdf(r_hat), gap_grad, batch)


def lambda_weights(spec: LossSpec, batch: GapBatch) -> np.ndarray:
    """Per-positive multiplier ``w(R_hat_phi1)``, treated as a constant."""
    w = spec.weighting
    r_hat = batch.scale * (1.0 + kernel_sums(batch, spec.kernel1))
    return w.density(_density_arg(w, r_hat))


def croloss_lambda_forward(spec: LossSpec, batch_gaps, lam: Optional[np.ndarray] = None) -> LossOutput:
    """Stop-gradient variant: gap gradient ``lambda * scale * phi2'(g)``.

    The reported value is ``sum lambda * R_hat_phi2``.  Passing ``lam`` freezes
    the multipliers, which is how finite-difference checks see this loss.
    """
    if spec.family is not LossFamily.CROLOSS_LAMBDA:
        raise ValueError(f"croloss_lambda_forward called with family {spec.family.value}")
    batch = as_batch(batch_gaps)
    if lam is None:
        lam = lambda_weights(spec, batch)
    vals, derivs = spec.kernel2.value_and_deriv(batch.gaps)
    r_hat2 = batch.scale * (1.0 + np.sum(np.where(batch.mask, vals, 0.0), axis=1))
    gap_grad = (lam * batch.scale)[:, None] * derivs
    return _assemble(lam * r_hat2, gap_grad, batch)


def softmax_ce(batch_gaps) -> LossOutput:
    """``-log softmax`` of the positive among itself and its negatives."""
    batch = as_batch(batch_gaps)
    g = np.where(batch.mask, batch.gaps, -np.inf)
    top = np.maximum(np.max(g, axis=1, initial=0.0), 0.0)
    ex = np.exp(g - top[:, None])
    denom = np.exp(-top) + np.sum(ex, axis=1)
    per_positive = top + np.log(denom)
    return _assemble(per_positive, ex / denom[:, None], batch)


def triplet(batch_gaps, margin: float = 5.0) -> LossOutput:
    """``sum_i (g_i + m)_+`` with subgradient 1 at the kink."""
    if margin < 0:
        raise ValueError("triplet margin must be >= 0")
    batch = as_batch(batch_gaps)
    per_gap = np.where(batch.mask, np.maximum(batch.gaps + margin, 0.0), 0.0)
    grad = (batch.gaps >= -margin).astype(np.float64)
    return _assemble(np.sum(per_gap, axis=1), grad, batch)


def bpr(batch_gaps) -> LossOutput:
    """``-sum_i log sigmoid(-g_i) = sum_i softplus(g_i)``."""
    batch = as_batch(batch_gaps)
    per_gap = np.where(batch.mask, softplus(batch.gaps), 0.0)
    return _assemble(np.sum(per_gap, axis=1), sigmoid(batch.gaps), batch)


def compute_loss(spec: LossSpec, batch_gaps) -> LossOutput:
    """Dispatch on ``spec.family``."""
    family = spec.family
    if family is LossFamily.CROLOSS:
        return croloss_forward(spec, batch_gaps)
    if family is LossFamily.CROLOSS_LAMBDA:
        return croloss_lambda_forward(spec, batch_gaps)
    if family is LossFamily.SOFTMAX_CE:
        return softmax_ce(batch_gaps)
    if family is LossFamily.TRIPLET:
        return triplet(batch_gaps, spec.margin)
    return bpr(batch_gaps)
