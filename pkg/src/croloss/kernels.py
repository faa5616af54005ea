"""Comparison kernels: smooth (or not) surrogates for the unit step.

A kernel maps a score gap ``g = S(u, v_i) - S(u, v)`` to a non-negative
"how much does this negative beat the positive" count.  Summing kernel values
over the negatives of a positive gives a smoothed rank.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

_ASYMPTOTE = 30.0


class KernelKind(str, enum.Enum):
    UNIT_STEP = "unit_step"
    HINGE = "hinge"
    SIGMOID = "sigmoid"
    EXPONENTIAL = "exponential"
    SOFTPLUS = "softplus"


def sigmoid(x):
    """Logistic function that never overflows; exactly 1 past ``x = 30``."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0, e) / (1.0 + e)
    return np.where(x > _ASYMPTOTE, 1.0, out)


def softplus(x):
    """``log(1 + e^x)`` as ``max(x, 0) + log1p(e^-|x|)``, exactly ``x`` past 30.

    The correction term is below double-precision resolution beyond ``|x| = 30``;
    for very negative ``x`` the same expression reduces to ``e^x``.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > _ASYMPTOTE, x, np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))))


@dataclass(frozen=True)
class Kernel:
    """A comparison kernel.

    ``margin`` only matters for the hinge kernel ``max(x + margin, 0)``.
    """

    kind: KernelKind
    margin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.kind is KernelKind.HINGE and self.margin < 0:
            raise ValueError(f"hinge margin must be >= 0, got {self.margin}")

    @classmethod
    def parse(cls, name: str, margin: float = 5.0) -> "Kernel":
        """Build a kernel from its config name (``"hinge"``, ``"softplus"``, ...)."""
        kind = KernelKind(name.strip().lower())
        return cls(kind, margin if kind is KernelKind.HINGE else 0.0)

    @property
    def differentiable(self) -> bool:
        return self.kind is not KernelKind.UNIT_STEP

    @property
    def name(self) -> str:
        if self.kind is KernelKind.HINGE:
            return f"hinge(m={self.margin:g})"
        return self.kind.value

    def value(self, x):
        """Kernel value, elementwise.  Returns a float for scalar input."""
        arr = np.asarray(x, dtype=np.float64)
        kind = self.kind
        if kind is KernelKind.UNIT_STEP:
            out = (arr >= 0).astype(np.float64)
        elif kind is KernelKind.HINGE:
            out = np.maximum(arr + self.margin, 0.0)
        elif kind is KernelKind.SIGMOID:
            out = sigmoid(arr)
        elif kind is KernelKind.EXPONENTIAL:
            out = np.exp(arr)
        else:
            out = softplus(arr)
        return float(out) if np.ndim(x) == 0 else out

    def deriv(self, x):
        """First derivative, elementwise.

        The hinge uses the right subgradient (1) at its kink ``x = -margin``.
        """
        kind = self.kind
        if kind is KernelKind.UNIT_STEP:
            raise ValueError("unit_step kernel has no usable derivative")
        arr = np.asarray(x, dtype=np.float64)
        if kind is KernelKind.HINGE:
            out = (arr >= -self.margin).astype(np.float64)
        elif kind is KernelKind.SIGMOID:
            e = np.exp(-np.abs(arr))
            out = e / (1.0 + e) ** 2
        elif kind is KernelKind.EXPONENTIAL:
            out = np.exp(arr)
        else:
            out = sigmoid(arr)
        return float(out) if np.ndim(x) == 0 else out


    def value_and_deriv(self, x):
        """``(value(x), deriv(x))`` sharing the exponential where the kinds allow it."""
        arr = np.asarray(x, dtype=np.float64)
        if self.kind is KernelKind.EXPONENTIAL:
            ex = np.exp(arr)
            return ex, ex
        if self.kind is KernelKind.SIGMOID:
            e = np.exp(-np.abs(arr))
            inv = 1.0 / (1.0 + e)
            val = np.where(arr > _ASYMPTOTE, 1.0, np.where(arr >= 0, inv, e * inv))
            return val, e * inv * inv
        return self.value(arr), self.deriv(arr)


UNIT_STEP = Kernel(KernelKind.UNIT_STEP)


@dataclass
class AdmissibilityReport:
    differentiable: bool
    monotone: bool
    vanishes_left: bool
    value_at_zero: bool
    limit_right: bool
    phi_zero: float

    @property
    def conditions(self) -> dict[str, bool]:
        return {
            "i": self.differentiable,
            "ii": self.monotone,
            "iii": self.vanishes_left,
            "iv": self.value_at_zero,
            "v": self.limit_right,
        }

    @property
    def ok(self) -> bool:
        return all(self.conditions.values())


def is_admissible(k: Kernel, lo: float = -50.0, hi: float = 50.0) -> AdmissibilityReport:
    """Numerically check the five comparison-kernel conditions on a grid.

    i   finite one-sided difference quotients everywhere on the grid
        (kinks are allowed, jumps of the value are measure-zero)
    ii  non-decreasing on ``[lo, hi]``
    iii ``phi(lo) < 1e-6 * max(1, phi(0))``
    iv  ``0.5 <= phi(0) <= 1``
    v   ``phi(hi) >= 1`` (up to 1e-9, so the sigmoid's limit of exactly 1 passes)
    """
    grid = np.linspace(lo, hi, 20001)
    vals = k.value(grid)
    h = 1e-6
    # the unit step's jump at 0 is a single point; drop grid points within h of it
    probe = grid[np.abs(grid) > 2 * h] if k.kind is KernelKind.UNIT_STEP else grid
    quotients = (k.value(probe + h) - k.value(probe)) / h
    phi0 = k.value(0.0)
    return AdmissibilityReport(
        differentiable=bool(np.all(np.isfinite(quotients))),
        monotone=bool(np.all(np.diff(vals) >= 0)),
        vanishes_left=bool(k.value(lo) < 1e-6 * max(1.0, phi0)),
        value_at_zero=bool(0.5 <= phi0 <= 1.0),
        limit_right=bool(k.value(hi) >= 1.0 - 1e-9),
        phi_zero=phi0,
    )
