"""Inverse geodesic distance maps: the soft regression target 1 / (d + c)."""

from __future__ import annotations

from dataclasses import dataclass

from .distance import GEODESIC, INVERSE_GEODESIC, DistanceMap


@dataclass(frozen=True)
class InverseParams:
    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"offset c must be > 0, got {self.c}")


def inverse_geodesic(d_ggd: DistanceMap, p: InverseParams | None = None) -> DistanceMap:
    """Per-voxel 1 / (d + c); strictly order-reversing in d.

    With c = 1 the output lies in (0, 1] and equals 1 exactly on seed
    voxels (where d = 0).
    """
    p = p or InverseParams()
    if d_ggd.kind != GEODESIC:
        raise ValueError(f"expected a geodesic map, got kind {d_ggd.kind!r}")
    return DistanceMap(d_ggd.geometry, 1.0 / (d_ggd.data + p.c), INVERSE_GEODESIC)
