"""Synthetic branching-tube phantoms with exact ground truth.

A phantom is a recursive binary tree of straight capsule segments. The
generator records, per segment, its ordered centerline voxels and
physical polyline length; these are the ground-truth branch list and
skeleton. The intensity volume is the two-level mask image, optionally
Gaussian-blurred and corrupted with additive Gaussian noise.

Randomness comes from numpy's PCG64 generator seeded with ``spec.seed``;
identical spec and seed reproduce the outputs bit for bit. Trees whose
voxelized skeleton would not decompose into exactly one graph branch per
segment (siblings hugging each other, chance contacts between distant
tubes) are rejected and resampled deterministically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .skeleton import build_graph
from .smoothing import GaussianParams, gaussian_smooth
from .volume import BinaryMask, DataError, ScalarVolume, SkeletonAnnotation, VolumeGeometry

_MAX_TREE_ATTEMPTS = 64


@dataclass(frozen=True)
class PhantomSpec:
    geometry: VolumeGeometry
    depth: int = 3
    root_radius: float = 3.0
    radius_decay: float = 0.8
    branch_length: tuple[float, float] = (12.0, 18.0)  # voxels
    branch_angle: tuple[float, float] = (25.0, 50.0)   # degrees off the parent
    intensity_fg: float = 1.0
    intensity_bg: float = 0.0
    blur_sigma: float = 1.0    # voxels; 0 disables
    noise_sigma: float = 0.05  # intensity units; 0 disables
    seed: int = 0

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.root_radius < 0.5:
            raise ValueError("root radius must be >= 0.5 voxel")
        if not (0.0 < self.radius_decay <= 1.0):
            raise ValueError("radius decay must be in (0, 1]")
        lo, hi = self.branch_length
        if not (0 < lo <= hi):
            raise ValueError("branch length range must satisfy 0 < lo <= hi")
        alo, ahi = self.branch_angle
        if not (0 < alo <= ahi < 90):
            raise ValueError("branch angle range must lie in (0, 90) degrees")
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("blur and noise sigmas must be >= 0")

    def radius_at(self, level: int) -> float:
        return max(0.5, self.root_radius * self.radius_decay ** level)


@dataclass
class PhantomBranch:
    index: int
    level: int
    voxels: np.ndarray      # ordered (k, 3) integer coordinates
    length_mm: float


@dataclass
class PhantomResult:
    volume: ScalarVolume
    mask: BinaryMask
    skeleton: SkeletonAnnotation
    branches: list[PhantomBranch]

    @property
    def tree_length_mm(self) -> float:
        return float(sum(b.length_mm for b in self.branches))


def _orthonormal_frame(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(d, u)


def _fit_length(start, direction, length, margin, dims, min_length):
    """Longest usable length <= length keeping the capsule inside the grid."""
    lo = np.full(3, margin)
    hi = np.asarray(dims, dtype=np.float64) - 1.0 - margin
    t = length
    for a in range(3):
        if direction[a] > 1e-12:
            t = min(t, (hi[a] - start[a]) / direction[a])
        elif direction[a] < -1e-12:
            t = min(t, (lo[a] - start[a]) / direction[a])
    return t if t >= min_length else None


def _voxelize_segment(p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """Ordered voxel chain along a segment (integer DDA).

    One step per voxel of the dominant axis with half-up rounding, so
    consecutive voxels are 26-adjacent and non-consecutive voxels of the
    same segment never touch."""
    a = np.floor(p0 + 0.5).astype(np.int64)
    b = np.floor(p1 + 0.5).astype(np.int64)
    n = int(np.abs(b - a).max())
    if n == 0:
        return a[None, :]
    ts = np.arange(n + 1, dtype=np.float64)[:, None] / n
    return np.floor(a + ts * (b - a) + 0.5).astype(np.int64)


def _polyline_length_mm(coords: np.ndarray, spacing) -> float:
    if coords.shape[0] < 2:
        return 0.0
    steps = np.diff(coords.astype(np.float64), axis=0) * np.asarray(spacing)
    return float(np.sqrt((steps * steps).sum(axis=1)).sum())


def _sample_tree(spec: PhantomSpec, rng: np.random.Generator):
    """One attempt at a segment list [(p0, p1, level), ...] in voxel space."""
    dims = spec.geometry.dims
    margin = spec.root_radius + 1.5
    start = np.array([dims[0] / 2.0, dims[1] / 2.0, margin])
    tilt = math.radians(rng.uniform(0.0, 8.0))
    azim = rng.uniform(0.0, 2.0 * math.pi)
    direction = np.array(
        [math.sin(tilt) * math.cos(azim), math.sin(tilt) * math.sin(azim), math.cos(tilt)]
    )
    lo, hi = spec.branch_length
    min_len = max(4.0, lo / 2.0)
    root_len = _fit_length(start, direction, rng.uniform(lo, hi), margin, dims, min_len)
    if root_len is None:
        raise DataError("phantom root segment does not fit in the volume")
    segments = [(start, start + root_len * direction, 0)]
    frontier = [(start + root_len * direction, direction, 0)]
    while frontier:
        end, d, level = frontier.pop(0)
        if level >= spec.depth:
            continue
        u, v = _orthonormal_frame(d)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        for side in range(2):
            theta = math.radians(rng.uniform(*spec.branch_angle))
            az = phi + side * (math.pi + rng.uniform(-0.3, 0.3))
            nd = math.cos(theta) * d + math.sin(theta) * (math.cos(az) * u + math.sin(az) * v)
            nd /= np.linalg.norm(nd)
            child_margin = spec.radius_at(level + 1) + 1.5
            t = _fit_length(end, nd, rng.uniform(lo, hi), child_margin, dims, min_len)
            if t is None:
                continue  # cannot fit this child; the branch list stays truthful
            segments.append((end, end + t * nd, level + 1))
            frontier.append((end + t * nd, nd, level + 1))
    return segments


def _tree_is_clean(spec: PhantomSpec, polylines: list[np.ndarray]) -> bool:
    """The voxelized skeleton must decompose into exactly one branch per segment."""
    coords = np.concatenate(polylines, axis=0)
    ann = SkeletonAnnotation.from_coords(spec.geometry, coords)
    try:
        graph = build_graph(ann, spec.geometry)
    except DataError:
        return False
    return graph.n_branches == len(polylines)


def _rasterize(spec: PhantomSpec, segments) -> np.ndarray:
    mask = np.zeros(spec.geometry.shape, dtype=bool, order="F")
    dims = spec.geometry.dims
    for p0, p1, level in segments:
        r = spec.radius_at(level)
        lo = np.maximum(np.floor(np.minimum(p0, p1) - r).astype(int), 0)
        hi = np.minimum(np.ceil(np.maximum(p0, p1) + r).astype(int), np.asarray(dims) - 1)
        xs = np.arange(lo[0], hi[0] + 1)
        ys = np.arange(lo[1], hi[1] + 1)
        zs = np.arange(lo[2], hi[2] + 1)
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1).astype(np.float64)
        axis = p1 - p0
        denom = float(axis @ axis)
        rel = pts - p0
        t = np.clip((rel @ axis) / denom if denom > 0 else np.zeros(pts.shape[:-1]), 0.0, 1.0)
        nearest = p0 + t[..., None] * axis
        d2 = ((pts - nearest) ** 2).sum(axis=-1)
        sub = mask[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
        sub |= d2 <= r * r
    return mask


def generate(spec: PhantomSpec) -> PhantomResult:
    """Generate (intensity volume, mask, skeleton annotation, branch list)."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    segments = None
    polylines = None
    for _ in range(_MAX_TREE_ATTEMPTS):
        candidate = _sample_tree(spec, rng)
        lines = [_voxelize_segment(p0, p1) for p0, p1, _ in candidate]
        if _tree_is_clean(spec, lines):
            segments, polylines = candidate, lines
            break
    if segments is None:
        raise DataError(
            f"could not generate a clean phantom tree in {_MAX_TREE_ATTEMPTS} attempts; "
            "enlarge the volume or reduce depth"
        )

    mask_arr = _rasterize(spec, segments)
    branches = []
    skeleton_flat = np.zeros(spec.geometry.n_voxels, dtype=bool)
    for i, ((_, _, level), line) in enumerate(zip(segments, polylines)):
        lin = spec.geometry.to_linear(line)
        skeleton_flat[lin] = True
        branches.append(
            PhantomBranch(i, level, line, _polyline_length_mm(line, spec.geometry.spacing))
        )
    # centerline voxels always belong to the mask, whatever the radius
    mask_arr |= skeleton_flat.reshape(spec.geometry.shape, order="F")
    mask = BinaryMask(spec.geometry, mask_arr)
    skeleton = SkeletonAnnotation(spec.geometry, np.flatnonzero(skeleton_flat))

    levels = np.where(mask.data, spec.intensity_fg, spec.intensity_bg).astype(np.float32)
    vol = ScalarVolume(spec.geometry, levels)
    if spec.blur_sigma > 0:
        vol = gaussian_smooth(vol, GaussianParams(sigma=spec.blur_sigma))
    if spec.noise_sigma > 0:
        noisy = vol.data.astype(np.float64) + rng.normal(
            0.0, spec.noise_sigma, size=spec.geometry.shape
        )
        vol = ScalarVolume(spec.geometry, noisy.astype(np.float32))
    return PhantomResult(vol, mask, skeleton, branches)
