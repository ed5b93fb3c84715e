"""Separable 3D Gaussian smoothing with reflecting boundaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .volume import ScalarVolume


@dataclass(frozen=True)
class GaussianParams:
    """Standard deviation and truncation radius, both in voxels."""

    sigma: float = 1.0
    radius: int | None = None  # defaults to ceil(3*sigma)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.radius is not None and self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")

    @property
    def effective_radius(self) -> int:
        return self.radius if self.radius is not None else max(1, math.ceil(3.0 * self.sigma))

    def kernel(self) -> np.ndarray:
        """Normalized 1D weights over offsets [-r, r]; sums to 1."""
        r = self.effective_radius
        x = np.arange(-r, r + 1, dtype=np.float64)
        w = np.exp(-(x * x) / (2.0 * self.sigma * self.sigma))
        return w / w.sum()


def gaussian_smooth(v: ScalarVolume, p: GaussianParams | None = None) -> ScalarVolume:
    """Convolve each axis with the normalized truncated Gaussian.

    Accumulation happens in float64; the result is rounded back to the
    volume's float32 storage, which keeps constant volumes exact fixed
    points.
    """
    p = p or GaussianParams()
    out = kernels.gaussian_blur(v.data.astype(np.float64), p.kernel())
    return ScalarVolume(v.geometry, out.astype(np.float32))
