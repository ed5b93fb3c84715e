"""Distance transforms over the voxel grid.

* geodesic: shortest paths on the 6/26-connected voxel graph with edge
  cost |g(a) - g(b)| + spatial_weight * step_mm, from a seed set.
* euclidean: exact distance from every voxel center to the nearest seed
  voxel center, honoring anisotropic spacing in millimeter mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .volume import DataError, ScalarVolume, SkeletonAnnotation, VolumeGeometry

GEODESIC = "geodesic"
EUCLIDEAN = "euclidean"
INVERSE_GEODESIC = "inverse-geodesic"
_KINDS = (GEODESIC, EUCLIDEAN, INVERSE_GEODESIC)


@dataclass
class DistanceMap:
    geometry: VolumeGeometry
    data: np.ndarray  # float64, shape (nx, ny, nz)
    kind: str

    def __post_init__(self):
        self.data = np.asfortranarray(np.asarray(self.data, dtype=np.float64))
        if self.data.shape != self.geometry.shape:
            raise ValueError(f"data shape {self.data.shape} != geometry {self.geometry.shape}")
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if not np.isfinite(self.data).all() or (self.data < 0).any():
            raise DataError("distance map must be finite and nonnegative everywhere")
        self.data.flags.writeable = False

    @property
    def flat(self) -> np.ndarray:
        return self.data.ravel(order="F")

    def max(self) -> float:
        return float(self.data.max())


@dataclass(frozen=True)
class GeodesicParams:
    connectivity: int = 26
    spatial_weight: float = 0.0

    def __post_init__(self):
        if self.connectivity not in (6, 26):
            raise ValueError(f"connectivity must be 6 or 26, got {self.connectivity}")
        if self.spatial_weight < 0:
            raise ValueError(f"spatial_weight must be >= 0, got {self.spatial_weight}")


def _check_seeds(seeds: SkeletonAnnotation, geometry: VolumeGeometry):
    if len(seeds) == 0:
        raise DataError("seed set is empty")
    if seeds.geometry.dims != geometry.dims:
        raise DataError(f"seed geometry {seeds.geometry.dims} != volume geometry {geometry.dims}")


def geodesic_distance(
    smoothed: ScalarVolume,
    seeds: SkeletonAnnotation,
    p: GeodesicParams | None = None,
) -> DistanceMap:
    """Minimum accumulated cost over voxel-graph paths to the seed set.

    Seeds get exactly 0. With spatial_weight = 0 the cost of a path is its
    total intensity variation, so the map is invariant to adding a constant
    to the intensities and scales linearly with them.
    """
    p = p or GeodesicParams()
    _check_seeds(seeds, smoothed.geometry)
    dist = kernels.geodesic(
        smoothed.data.astype(np.float64),
        seeds.linear,
        smoothed.geometry.spacing,
        p.connectivity,
        p.spatial_weight,
    )
    return DistanceMap(smoothed.geometry, dist, GEODESIC)


def euclidean_distance(
    geometry: VolumeGeometry,
    seeds: SkeletonAnnotation,
    units: str = "mm",
) -> DistanceMap:
    """Exact Euclidean distance to the nearest seed voxel center."""
    if units not in ("mm", "voxels"):
        raise ValueError(f"units must be 'mm' or 'voxels', got {units!r}")
    _check_seeds(seeds, geometry)
    spacing = geometry.spacing if units == "mm" else (1.0, 1.0, 1.0)
    d2 = kernels.edt_squared(seeds.to_mask().data, spacing)
    return DistanceMap(geometry, np.sqrt(d2), EUCLIDEAN)
