"""Linear degradation operators and their exact adjoints.

The spatial operator blurs each band with a truncated, normalized
Gaussian (symmetric boundary extension) and keeps every d-th pixel in
both directions starting at offset 0.  It is realized through explicit
1-D convolution matrices so the adjoint is the literal transpose and the
forward/adjoint pair satisfies the dot-product identity to machine
precision, which the model-based fusion solver relies on.

The spectral operator multiplies every pixel's spectral column by a
response matrix; the default response averages ``width`` contiguous
bands per output band (leftover bands are dropped).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import HyperImage

__all__ = [
    "gaussian_kernel",
    "SpatialOp",
    "SpectralOp",
    "DegradationPair",
    "apply_spatial",
    "adjoint_spatial",
    "apply_spectral",
    "adjoint_spectral",
    "corrupt_operators",
]


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    """Truncated normalized 1-D Gaussian; default radius ceil(4*sigma)."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    if radius is None:
        radius = int(math.ceil(4.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def _reflect(j: int, n: int) -> int:
    # symmetric (half-sample) reflection: ... c b a | a b c ... | c b a
    while j < 0 or j >= n:
        if j < 0:
            j = -j - 1
        else:
            j = 2 * n - 1 - j
    return j


@lru_cache(maxsize=64)
def _blur_decimate_matrix(n: int, sigma: float, radius: int | None, factor: int) -> np.ndarray:
    """Dense (n//factor, n) matrix: symmetric-boundary 1-D Gaussian blur
    followed by keep-every-factor-th decimation at offset 0."""
    g = gaussian_kernel(sigma, radius)
    r = (len(g) - 1) // 2
    k = np.zeros((n, n))
    for i in range(n):
        for t in range(-r, r + 1):
            k[i, _reflect(i + t, n)] += g[t + r]
    out = k[::factor, :].copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SpatialOp:
    """Gaussian blur + regular subsampling, applied band by band."""

    blur_sigma: float
    subsample_factor: int
    kernel_radius: int | None = None

    def __post_init__(self):
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")
        if self.subsample_factor < 1:
            raise ValueError("subsample_factor must be >= 1")

    @property
    def radius(self) -> int:
        if self.kernel_radius is not None:
            return self.kernel_radius
        return int(math.ceil(4.0 * self.blur_sigma))

    def _matrices(self, rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
        d = self.subsample_factor
        if rows % d != 0:
            raise ValueError(f"rows={rows} not divisible by subsample factor {d}")
        if cols % d != 0:
            raise ValueError(f"cols={cols} not divisible by subsample factor {d}")
        rm = _blur_decimate_matrix(rows, self.blur_sigma, self.kernel_radius, d)
        cm = _blur_decimate_matrix(cols, self.blur_sigma, self.kernel_radius, d)
        return rm, cm

    def out_shape(self, rows: int, cols: int) -> tuple[int, int]:
        d = self.subsample_factor
        return rows // d, cols // d

    def apply(self, cube: np.ndarray) -> np.ndarray:
        rm, cm = self._matrices(cube.shape[1], cube.shape[2])
        tmp = np.einsum("ij,bjk->bik", rm, cube)
        return np.einsum("bik,lk->bil", tmp, cm)

    def adjoint(self, cube: np.ndarray) -> np.ndarray:
        d = self.subsample_factor
        rows, cols = cube.shape[1] * d, cube.shape[2] * d
        rm, cm = self._matrices(rows, cols)
        tmp = np.einsum("ji,bjk->bik", rm, cube)
        return np.einsum("bik,kl->bil", tmp, cm)

    def frob2(self, rows: int, cols: int, bands: int) -> float:
        """Squared Frobenius norm of the full operator on a cube of the
        given shape (used to scale the fusion regularizer)."""
        rm, cm = self._matrices(rows, cols)
        return float(bands * np.sum(rm * rm) * np.sum(cm * cm))


@dataclass(frozen=True)
class SpectralOp:
    """Per-pixel band mixing by a response matrix (m_out, m_in).

    Rows of the default averaging response are nonnegative and sum to 1;
    a noise-corrupted response may violate that but stays finite.
    """

    response: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.response, dtype=np.float64)
        if r.ndim != 2:
            raise ValueError("response must be a 2-d matrix")
        if not np.isfinite(r).all():
            raise ValueError("response contains non-finite entries")
        r = np.ascontiguousarray(r)
        r.flags.writeable = False
        object.__setattr__(self, "response", r)

    @classmethod
    def averaging(cls, bands_in: int, width: int) -> "SpectralOp":
        """Average ``width`` contiguous bands per output band; the
        bands_in % width leftover bands are dropped."""
        if width < 1:
            raise ValueError("width must be >= 1")
        m_out = bands_in // width
        if m_out < 1:
            raise ValueError(f"width {width} larger than band count {bands_in}")
        r = np.zeros((m_out, bands_in))
        for j in range(m_out):
            r[j, width * j : width * (j + 1)] = 1.0 / width
        return cls(r)

    @property
    def bands_in(self) -> int:
        return self.response.shape[1]

    @property
    def bands_out(self) -> int:
        return self.response.shape[0]

    def apply(self, cube: np.ndarray) -> np.ndarray:
        if cube.shape[0] != self.bands_in:
            raise ValueError(f"band mismatch: cube has {cube.shape[0]}, response expects {self.bands_in}")
        return np.tensordot(self.response, cube, axes=([1], [0]))

    def adjoint(self, cube: np.ndarray) -> np.ndarray:
        if cube.shape[0] != self.bands_out:
            raise ValueError(f"band mismatch: cube has {cube.shape[0]}, adjoint expects {self.bands_out}")
        return np.tensordot(self.response.T, cube, axes=([1], [0]))

    def frob2(self, n_pixels: int) -> float:
        return float(n_pixels * np.sum(self.response * self.response))


@dataclass(frozen=True)
class DegradationPair:
    """The spatial/spectral operator pair (H1, H2) of one sensor setup."""

    spatial: SpatialOp
    spectral: SpectralOp

    @classmethod
    def default(cls, bands: int, blur_sigma: float = 2.35, subsample_factor: int = 4,
                spectral_width: int = 4, kernel_radius: int | None = None) -> "DegradationPair":
        return cls(
            spatial=SpatialOp(blur_sigma=blur_sigma, subsample_factor=subsample_factor,
                              kernel_radius=kernel_radius),
            spectral=SpectralOp.averaging(bands, spectral_width),
        )


def apply_spatial(op: SpatialOp, x: HyperImage) -> HyperImage:
    return HyperImage(op.apply(x.data))


def adjoint_spatial(op: SpatialOp, y: HyperImage) -> HyperImage:
    return HyperImage(op.adjoint(y.data))


def apply_spectral(op: SpectralOp, x: HyperImage) -> HyperImage:
    return HyperImage(op.apply(x.data))


def adjoint_spectral(op: SpectralOp, y: HyperImage) -> HyperImage:
    return HyperImage(op.adjoint(y.data))


def corrupt_operators(ops: DegradationPair, blur_sigma: float, snr_db: float,
                      rng: np.random.Generator) -> DegradationPair:
    """Mismatched-operator variant: replace the blur width and perturb the
    spectral response with zero-mean Gaussian noise scaled so that
    10*log10(||L||_F^2 / ||noise||_F^2) equals ``snr_db``.

    ``snr_db = inf`` leaves the spectral response unchanged.
    """
    if math.isnan(snr_db):
        raise ValueError("snr_db must not be NaN")
    spatial = SpatialOp(blur_sigma=blur_sigma, subsample_factor=ops.spatial.subsample_factor,
                        kernel_radius=ops.spatial.kernel_radius)
    resp = ops.spectral.response
    if math.isinf(snr_db):
        return DegradationPair(spatial=spatial, spectral=ops.spectral)
    noise_var = np.sum(resp * resp) / (resp.size * 10.0 ** (snr_db / 10.0))
    noise = rng.normal(0.0, np.sqrt(noise_var), size=resp.shape)
    return DegradationPair(spatial=spatial, spectral=SpectralOp(resp + noise))
