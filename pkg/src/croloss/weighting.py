"""Power-law rank weighting ``w(x) = x**-alpha / Z`` on ``[1, |I| + 1)`` and its CDF."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# switch to the logarithmic branch this close to alpha = 1
_LOG_BRANCH = 1e-9


@dataclass(frozen=True)
class Weighting:
    alpha: float
    catalog_size: int
    z: float

    @property
    def upper(self) -> float:
        """Right end of the support, ``|I| + 1``."""
        return float(self.catalog_size + 1)

    @property
    def _log_branch(self) -> bool:
        return abs(self.alpha - 1.0) < _LOG_BRANCH

    def density(self, x):
        """``x**-alpha / Z``; clamped to ``density(1)`` below 1 and 0 past the support."""
        arr = np.asarray(x, dtype=np.float64)
        xc = np.maximum(arr, 1.0)
        out = np.where(arr >= self.upper, 0.0, np.power(xc, -self.alpha) / self.z)
        return float(out) if np.ndim(x) == 0 else out

    def cdf(self, n):
        """Closed-form ``W(n) = integral of density over [1, n]``, clamped to [0, 1]."""
        arr = np.asarray(n, dtype=np.float64)
        xc = np.clip(arr, 1.0, self.upper)
        log_x = np.log(xc)
        log_top = math.log(self.upper)
        if self._log_branch:
            out = log_x / log_top
        else:
            # expm1 keeps precision when alpha is near 1 or n is near 1
            a = 1.0 - self.alpha
            out = np.expm1(a * log_x) / math.expm1(a * log_top)
        out = np.where(arr <= 1.0, 0.0, np.where(arr >= self.upper, 1.0, out))
        return float(out) if np.ndim(n) == 0 else out


def make_weighting(alpha: float, catalog_size: int) -> Weighting:
    """Assemble the weighting for a catalog of ``catalog_size`` items.

    ``alpha = 0`` is uniform over ranks, ``alpha = 1`` gives the log-CDF, larger
    values concentrate mass on the top ranks.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if catalog_size < 1:
        raise ValueError(f"catalog_size must be >= 1, got {catalog_size}")
    top = catalog_size + 1
    if alpha == 0:
        z = float(catalog_size)
    elif abs(alpha - 1.0) < _LOG_BRANCH:
        z = math.log(top)
    else:
        a = 1.0 - alpha
        z = math.expm1(a * math.log(top)) / a
    return Weighting(float(alpha), int(catalog_size), z)
