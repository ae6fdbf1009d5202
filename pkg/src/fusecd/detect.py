"""From change image to binary change map.

Canonical change-vector analysis: per-pixel spectral energy, an optional
median smoothing pass that knocks out isolated false alarms (the spatial
regularization), then thresholding, either at a user-supplied value or at
the 256-bin Otsu optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .core import BinaryMap, HyperImage
from .errors import NumericError

OTSU_BINS = 256


@dataclass(frozen=True)
class EnergyMap:
    """Nonnegative per-pixel change energy, shape (rows, cols)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("energy map must be 2-d")
        if v.min() < 0 or not np.isfinite(v).all():
            raise ValueError("energies must be finite and nonnegative")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def cva_energy(ci: HyperImage) -> EnergyMap:
    """l2 norm of each pixel's spectral column."""
    e = np.sqrt(np.sum(ci.data * ci.data, axis=0))
    return EnergyMap(e)


def smooth(e: EnergyMap, radius: int) -> EnergyMap:
    """Median filter with a (2r+1)^2 window and symmetric boundary;
    radius 0 is the identity."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return e
    return EnergyMap(median_filter(e.values, size=2 * radius + 1, mode="reflect"))


def otsu_threshold(e: EnergyMap) -> float:
    """Threshold maximizing the between-class variance of the 256-bin
    histogram over [min, max]; ties break toward the smaller threshold."""
    v = e.flat()
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        raise NumericError("degenerate histogram: energy map is constant")
    width = (hi - lo) / OTSU_BINS
    bins = np.minimum(((v - lo) / width).astype(int), OTSU_BINS - 1)
    counts = np.bincount(bins, minlength=OTSU_BINS).astype(np.float64)
    sums = np.bincount(bins, weights=v, minlength=OTSU_BINS)
    n = v.size
    total = sums.sum()
    best_var, best_t = -1.0, 0
    w0 = 0.0
    s0 = 0.0
    for t in range(OTSU_BINS):
        w0 += counts[t]
        s0 += sums[t]
        w1 = n - w0
        if w0 == 0.0 or w1 == 0.0:
            continue
        mu0 = s0 / w0
        mu1 = (total - s0) / w1
        var = w0 * w1 * (mu0 - mu1) ** 2
        if var > best_var:
            best_var, best_t = var, t
    return lo + (best_t + 1) * width


def threshold_map(e: EnergyMap, tau: float) -> BinaryMap:
    """Changed iff energy strictly exceeds the threshold."""
    return BinaryMap((e.values > tau).astype(np.uint8))
