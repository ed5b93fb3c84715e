"""Evaluation suite for tubular segmentations.

Volumetric metrics (DSC, TPR, FPR) count over the full grid; negatives
are every non-reference-foreground voxel. Topology metrics run per
reference-skeleton branch: BD needs >= 80% of a branch's voxels inside
the prediction, BD* needs a single voxel, TD is the fraction of the
skeleton's physical length whose edges lie entirely inside the
prediction. Ties for the largest component go to the component holding
the smallest linear voxel index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .skeleton import SkeletonGraph
from .volume import BinaryMask, DataError, VolumeGeometry

BD_FRACTION = 0.8  # inclusive threshold


@dataclass(frozen=True)
class VoxelCounts:
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass(frozen=True)
class MetricsReport:
    dsc: float
    tpr: float
    fpr: float
    bd: float
    bd_star: float
    td: float
    counts: VoxelCounts
    n_branches: int = 0
    bd_detected: int = 0
    bd_star_detected: int = 0
    tree_length_mm: float = 0.0
    detected_length_mm: float = 0.0

    def as_dict(self) -> dict:
        return {
            "dsc": self.dsc,
            "tpr": self.tpr,
            "fpr": self.fpr,
            "bd": self.bd,
            "bd_star": self.bd_star,
            "td": self.td,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "tn": self.counts.tn,
            "fn": self.counts.fn,
            "n_branches": self.n_branches,
            "bd_detected": self.bd_detected,
            "bd_star_detected": self.bd_star_detected,
            "tree_length_mm": self.tree_length_mm,
            "detected_length_mm": self.detected_length_mm,
        }


def _check_geometry(a: VolumeGeometry, b: VolumeGeometry):
    if a.dims != b.dims:
        raise DataError(f"geometry mismatch: {a.dims} vs {b.dims}")


def largest_component(mask: BinaryMask) -> BinaryMask:
    """Keep only the largest 26-connected foreground component."""
    labels, n = ndimage.label(mask.data, structure=np.ones((3, 3, 3), dtype=bool))
    if n == 0:
        return BinaryMask(mask.geometry, np.zeros(mask.geometry.shape, dtype=bool))
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    if candidates.size == 1:
        keep = candidates[0]
    else:
        lin = mask.geometry.linear_index_volume()
        mins = ndimage.minimum(lin, labels, index=candidates)
        keep = candidates[int(np.argmin(mins))]
    return BinaryMask(mask.geometry, labels == keep)


def volumetric_metrics(pred: BinaryMask, ref: BinaryMask):
    """Returns (dsc, tpr, fpr, counts) over the full grid."""
    _check_geometry(pred.geometry, ref.geometry)
    p = pred.data
    r = ref.data
    tp = int((p & r).sum())
    fp = int((p & ~r).sum())
    fn = int((~p & r).sum())
    tn = pred.geometry.n_voxels - tp - fp - fn
    dsc = 2.0 * tp / (2.0 * tp + fp + fn) if (2 * tp + fp + fn) else 1.0
    tpr = tp / (tp + fn) if (tp + fn) else 0.0
    fpr = fp / (fp + tn) if (fp + tn) else 0.0
    return dsc, tpr, fpr, VoxelCounts(tp, fp, tn, fn)


def _topology_detail(pred: BinaryMask, ref_skeleton: SkeletonGraph):
    _check_geometry(pred.geometry, ref_skeleton.geometry)
    if ref_skeleton.n_branches == 0:
        raise DataError("reference skeleton has no branches")
    inside_flat = pred.data.ravel(order="F")
    spacing = np.asarray(pred.geometry.spacing)
    n_bd = 0
    n_bd_star = 0
    total_len = 0.0
    detected_len = 0.0
    for branch in ref_skeleton.branches:
        inside = inside_flat[branch.voxels]
        frac = float(inside.mean()) if inside.size else 0.0
        if frac >= BD_FRACTION:
            n_bd += 1
        if inside.any():
            n_bd_star += 1
        if branch.voxels.size >= 2:
            coords = pred.geometry.from_linear(branch.voxels).astype(np.float64)
            steps = np.sqrt(((np.diff(coords, axis=0) * spacing) ** 2).sum(axis=1))
            covered = inside[:-1] & inside[1:]
            total_len += float(steps.sum())
            detected_len += float(steps[covered].sum())
    return n_bd, n_bd_star, total_len, detected_len


def topology_metrics(pred: BinaryMask, ref_skeleton: SkeletonGraph):
    """Returns (bd, bd_star, td) of a prediction against a reference
    skeleton graph. The prediction should already be reduced to its
    largest component."""
    n_bd, n_bd_star, total_len, detected_len = _topology_detail(pred, ref_skeleton)
    nb = ref_skeleton.n_branches
    td = detected_len / total_len if total_len > 0 else 0.0
    return n_bd / nb, n_bd_star / nb, td


def compute_metrics(pred: BinaryMask, ref: BinaryMask, ref_skeleton: SkeletonGraph) -> MetricsReport:
    """Volumetric and topology metrics in one report."""
    dsc, tpr, fpr, counts = volumetric_metrics(pred, ref)
    n_bd, n_bd_star, total_len, detected_len = _topology_detail(pred, ref_skeleton)
    nb = ref_skeleton.n_branches
    td = detected_len / total_len if total_len > 0 else 0.0
    return MetricsReport(
        dsc=dsc, tpr=tpr, fpr=fpr, bd=n_bd / nb, bd_star=n_bd_star / nb, td=td, counts=counts,
        n_branches=nb, bd_detected=n_bd, bd_star_detected=n_bd_star,
        tree_length_mm=total_len, detected_length_mm=detected_len,
    )
