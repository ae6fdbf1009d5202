"""Core image types, norms and deterministic random-number provisioning.

Images are stored band-major: a cube with ``bands`` 2-D planes of
``rows x cols`` pixels, so band-wise filtering touches contiguous memory
while the per-pixel spectral column is reached through a strided view
(:meth:`HyperImage.columns`).  All arrays are float64 and frozen after
construction, which makes the values safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "HyperImage",
    "BinaryMap",
    "image_sub",
    "frobenius_norm",
    "group21_norm",
    "make_rng",
    "derive_seed",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class HyperImage:
    """Band-major raster of finite reals, shape (bands, rows, cols).

    Observed and latent radiance cubes are nonnegative by convention;
    change images may carry negative entries, so sign is not enforced
    here.  Use :meth:`require_nonneg` where the convention matters.
    """

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 3:
            raise ValueError(f"expected 3-d (bands, rows, cols) array, got ndim={a.ndim}")
        if not np.isfinite(a).all():
            raise ValueError("image contains non-finite entries")
        object.__setattr__(self, "data", _freeze(a))

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def columns(self) -> np.ndarray:
        """Pixel-major view of shape (bands, rows*cols); column i is the
        spectral vector of pixel i (row-major pixel order)."""
        return self.data.reshape(self.bands, -1)

    def pixel(self, i: int) -> np.ndarray:
        return self.columns()[:, i]

    def require_nonneg(self, what: str = "image") -> "HyperImage":
        if self.data.min() < 0.0:
            raise ValueError(f"{what} has negative entries (min={self.data.min():g})")
        return self

    @classmethod
    def zeros(cls, bands: int, rows: int, cols: int) -> "HyperImage":
        return cls(np.zeros((bands, rows, cols)))


@dataclass(frozen=True)
class BinaryMap:
    """Per-pixel 0/1 labeling, shape (rows, cols); 1 marks a changed pixel."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2:
            raise ValueError(f"expected 2-d (rows, cols) array, got ndim={a.ndim}")
        if not np.isin(a, (0, 1)).all():
            raise ValueError("binary map entries must be 0 or 1")
        object.__setattr__(self, "data", _freeze(a.astype(np.uint8)))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def changed_count(self) -> int:
        return int(self.data.sum())

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)


def image_sub(a: HyperImage, b: HyperImage) -> HyperImage:
    """Pixel-by-pixel difference a - b (same shape required)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return HyperImage(a.data - b.data)


def frobenius_norm(a: HyperImage | np.ndarray) -> float:
    arr = a.data if isinstance(a, HyperImage) else np.asarray(a)
    return float(np.sqrt(np.sum(arr * arr)))


def group21_norm(a: HyperImage | np.ndarray) -> float:
    """Sum over pixels of the l2 norm of the per-pixel spectral column.

    Groups are pixels, i.e. the columns of the band-major cube; this is
    the spatial-sparsity-promoting norm used on change images.
    """
    arr = a.data if isinstance(a, HyperImage) else np.asarray(a)
    cols = arr.reshape(arr.shape[0], -1)
    return float(np.sum(np.sqrt(np.sum(cols * cols, axis=0))))


# ---------------------------------------------------------------------------
# Random numbers.
#
# All randomness flows through numpy's Philox engine, a counter-based
# generator with a platform-independent stream: identical seeds produce
# identical draws everywhere.  Generators are never shared; child streams
# are derived from (seed, path) pairs via SeedSequence spawn keys.
# ---------------------------------------------------------------------------


def derive_seed(seed: int, *path: int) -> np.random.SeedSequence:
    """Stable child-seed derivation: same (seed, path) -> same stream."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))


def make_rng(seed, *path: int) -> np.random.Generator:
    """Philox generator from a 64-bit seed or a SeedSequence.

    Extra integer path components derive independent child streams,
    e.g. ``make_rng(seed, pair_index)`` for per-pair generation.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
        if path:
            ss = np.random.SeedSequence(entropy=ss.entropy, spawn_key=ss.spawn_key + tuple(path))
    else:
        ss = derive_seed(seed, *path)
    return np.random.Generator(np.random.Philox(ss))
