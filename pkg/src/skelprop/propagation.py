"""Dual-stream buffer inference: expand a skeleton annotation into a
tri-state mask proposal.

Two buffers are built from distance maps and fused:

* bilateral geodesic buffer: foreground where the geodesic distance is
  below delta1 * max, background above delta2 * max;
* unilateral Euclidean buffer: background where the Euclidean distance
  exceeds gamma * max (never any foreground).

Voxel states use the file encoding 0 = background, 1 = foreground,
2 = unknown.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .distance import (
    EUCLIDEAN,
    GEODESIC,
    DistanceMap,
    GeodesicParams,
    euclidean_distance,
    geodesic_distance,
)
from .smoothing import GaussianParams, gaussian_smooth
from .volume import DataError, ScalarVolume, SkeletonAnnotation, VolumeGeometry

BACKGROUND = 0
FOREGROUND = 1
UNKNOWN = 2


@dataclass
class MaskProposal:
    """Tri-state volume; foreground and background are disjoint by construction."""

    geometry: VolumeGeometry
    data: np.ndarray  # uint8 codes, shape (nx, ny, nz)
    conflicts: int = 0

    def __post_init__(self):
        self.data = np.asfortranarray(np.asarray(self.data, dtype=np.uint8))
        if self.data.shape != self.geometry.shape:
            raise ValueError(f"data shape {self.data.shape} != geometry {self.geometry.shape}")
        if self.data.max(initial=0) > UNKNOWN:
            raise DataError("proposal codes must be 0 (bg), 1 (fg) or 2 (unknown)")
        self.data.flags.writeable = False

    @classmethod
    def from_sets(
        cls,
        geometry: VolumeGeometry,
        foreground: np.ndarray,
        background: np.ndarray,
        conflicts: int = 0,
    ) -> "MaskProposal":
        codes = np.full(geometry.shape, UNKNOWN, dtype=np.uint8, order="F")
        codes[background] = BACKGROUND
        codes[foreground] = FOREGROUND
        return cls(geometry, codes, conflicts)

    @classmethod
    def all_unknown(cls, geometry: VolumeGeometry) -> "MaskProposal":
        return cls(geometry, np.full(geometry.shape, UNKNOWN, dtype=np.uint8, order="F"))

    @property
    def foreground(self) -> np.ndarray:
        return self.data == FOREGROUND

    @property
    def background(self) -> np.ndarray:
        return self.data == BACKGROUND

    @property
    def unknown(self) -> np.ndarray:
        return self.data == UNKNOWN

    @property
    def labeled(self) -> np.ndarray:
        return self.data != UNKNOWN

    @property
    def n_labeled(self) -> int:
        return int(self.labeled.sum())


@dataclass(frozen=True)
class PropagationParams:
    delta1: float = 0.01
    delta2: float = 0.07
    gamma: float = 0.05
    gaussian: GaussianParams = field(default_factory=GaussianParams)
    geodesic: GeodesicParams = field(default_factory=GeodesicParams)
    units: str = "mm"  # units for the Euclidean buffer

    def __post_init__(self):
        if not (0.0 <= self.delta1 < self.delta2 <= 1.0):
            raise ValueError(
                f"need 0 <= delta1 < delta2 <= 1, got delta1={self.delta1} delta2={self.delta2}"
            )
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.units not in ("mm", "voxels"):
            raise ValueError(f"units must be 'mm' or 'voxels', got {self.units!r}")


def _check_geometry(a: VolumeGeometry, b: VolumeGeometry):
    if a.dims != b.dims:
        raise DataError(f"geometry mismatch: {a.dims} vs {b.dims}")


def g2bi(d_ggd: DistanceMap, seeds: SkeletonAnnotation, delta1: float, delta2: float) -> MaskProposal:
    """Bilateral thresholding of the geodesic map (strict comparisons)."""
    if d_ggd.kind != GEODESIC:
        raise ValueError(f"expected a geodesic map, got kind {d_ggd.kind!r}")
    _check_geometry(d_ggd.geometry, seeds.geometry)
    if not delta1 < delta2:
        raise ValueError(f"need delta1 < delta2, got {delta1} >= {delta2}")
    m = d_ggd.max()
    if m == 0.0:
        warnings.warn(
            "degenerate propagation: max geodesic distance is 0, proposal is all-unknown",
            RuntimeWarning,
            stacklevel=2,
        )
        return MaskProposal.all_unknown(d_ggd.geometry)
    fg = d_ggd.data < delta1 * m
    bg = d_ggd.data > delta2 * m
    return MaskProposal.from_sets(d_ggd.geometry, fg, bg)


def ebi(d_eud: DistanceMap, seeds: SkeletonAnnotation, gamma: float) -> MaskProposal:
    """Unilateral background expansion from the Euclidean map; produces no
    foreground, and seed voxels are never background."""
    if d_eud.kind != EUCLIDEAN:
        raise ValueError(f"expected a euclidean map, got kind {d_eud.kind!r}")
    _check_geometry(d_eud.geometry, seeds.geometry)
    bg = d_eud.data > gamma * d_eud.max()
    bg_flat = bg.ravel(order="F")
    bg_flat[seeds.linear] = False
    fg = np.zeros(d_eud.geometry.shape, dtype=bool)
    return MaskProposal.from_sets(d_eud.geometry, fg, bg_flat.reshape(bg.shape, order="F"))


def dbi_fuse(mp_g: MaskProposal, mp_e: MaskProposal) -> MaskProposal:
    """Fuse: foreground from the geodesic buffer, background from the union
    of both buffers. A voxel claimed by both sides is demoted to unknown
    and counted in ``conflicts``."""
    _check_geometry(mp_g.geometry, mp_e.geometry)
    fg = mp_g.foreground
    bg = mp_g.background | mp_e.background
    conflict = fg & bg
    n_conflicts = int(conflict.sum())
    if n_conflicts:
        warnings.warn(
            f"{n_conflicts} voxels claimed as both foreground and background "
            "were demoted to unknown",
            RuntimeWarning,
            stacklevel=2,
        )
        fg = fg & ~conflict
        bg = bg & ~conflict
    return MaskProposal.from_sets(mp_g.geometry, fg, bg, conflicts=n_conflicts)


def propagate(
    x: ScalarVolume,
    seeds: SkeletonAnnotation,
    p: PropagationParams | None = None,
) -> tuple[MaskProposal, DistanceMap]:
    """Full pipeline: smooth, geodesic buffer, Euclidean buffer, fuse.

    Returns the fused proposal and the geodesic map (the input of the
    inverse-distance transform). Deterministic for fixed inputs and params.
    """
    p = p or PropagationParams()
    _check_geometry(x.geometry, seeds.geometry)
    if len(seeds) == 0:
        raise DataError("propagation requires a non-empty annotation")
    smoothed = gaussian_smooth(x, p.gaussian)
    d_ggd = geodesic_distance(smoothed, seeds, p.geodesic)
    mp_g = g2bi(d_ggd, seeds, p.delta1, p.delta2)
    d_eud = euclidean_distance(x.geometry, seeds, p.units)
    mp_e = ebi(d_eud, seeds, p.gamma)
    return dbi_fuse(mp_g, mp_e), d_ggd
