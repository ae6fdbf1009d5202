"""fusecd: fusion-based unsupervised change detection for heterogeneous
optical image pairs (one low-spatial/high-spectral and one
high-spatial/low-spectral acquisition)."""

from .core import BinaryMap, HyperImage, frobenius_norm, group21_norm, image_sub, make_rng

__version__ = "0.1.0"

__all__ = [
    "HyperImage", "BinaryMap", "image_sub", "frobenius_norm", "group21_norm", "make_rng",
    "__version__",
]
