"""Loss evaluators over a prediction volume, a mask proposal, and an
inverse-geodesic target pair.

These are pure evaluators (no training loop): partial cross-entropy on
the labeled set, entropy minimization on the unknown set, mean squared
error against the inverse-geodesic map, and their weighted total. Each
loss also ships its per-voxel analytic derivative so the values can be
cross-checked against finite differences.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .distance import INVERSE_GEODESIC, DistanceMap
from .propagation import FOREGROUND, MaskProposal
from .volume import DataError, VolumeGeometry

CLAMP_EPS = 1e-7


@dataclass
class PredictionVolume:
    """Per-voxel probability in [0, 1]."""

    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asfortranarray(np.asarray(self.data, dtype=np.float64))
        if self.data.shape != self.geometry.shape:
            raise ValueError(f"data shape {self.data.shape} != geometry {self.geometry.shape}")
        if not np.isfinite(self.data).all() or self.data.min() < 0 or self.data.max() > 1:
            raise DataError("prediction values must be finite and in [0, 1]")
        self.data.flags.writeable = False


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.5
    lambda2: float = 20.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True)
class LossReport:
    pce: float
    em: float
    iggd_mse: float
    total: float
    n_labeled: int = 0
    n_unknown: int = 0
    n_voxels: int = 0

    def as_dict(self) -> dict:
        return {
            "pce": self.pce,
            "em": self.em,
            "iggd_mse": self.iggd_mse,
            "total": self.total,
            "n_labeled": self.n_labeled,
            "n_unknown": self.n_unknown,
            "n_voxels": self.n_voxels,
        }


def _check_geometry(a: VolumeGeometry, b: VolumeGeometry):
    if a.dims != b.dims:
        raise DataError(f"geometry mismatch: {a.dims} vs {b.dims}")


def _clamped(p: np.ndarray) -> np.ndarray:
    return np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS)


def partial_cross_entropy(pred: PredictionVolume, proposal: MaskProposal) -> float:
    """Binary cross-entropy averaged over the labeled voxels only; the
    proposal label is the target. Returns 0 (with a warning) when nothing
    is labeled."""
    _check_geometry(pred.geometry, proposal.geometry)
    labeled = proposal.labeled
    n = int(labeled.sum())
    if n == 0:
        warnings.warn("no labeled voxels; partial cross-entropy is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    p = _clamped(pred.data[labeled])
    t = (proposal.data[labeled] == FOREGROUND).astype(np.float64)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


def partial_cross_entropy_grad(pred: PredictionVolume, proposal: MaskProposal) -> np.ndarray:
    """d(pce)/d(pred) per voxel; zero outside the labeled set."""
    _check_geometry(pred.geometry, proposal.geometry)
    grad = np.zeros(pred.geometry.shape, order="F")
    labeled = proposal.labeled
    n = int(labeled.sum())
    if n == 0:
        return grad
    p = _clamped(pred.data[labeled])
    t = (proposal.data[labeled] == FOREGROUND).astype(np.float64)
    grad[labeled] = -(t / p - (1.0 - t) / (1.0 - p)) / n
    return grad


def entropy_minimization(pred: PredictionVolume, proposal: MaskProposal, mode: str = "binary") -> float:
    """Prediction entropy averaged over the unknown voxels.

    binary mode: -mean[p log p + (1-p) log(1-p)]; literal mode keeps only
    the -mean[p log p] term. Both vanish at confident predictions.
    """
    _check_geometry(pred.geometry, proposal.geometry)
    if mode not in ("binary", "literal"):
        raise ValueError(f"mode must be 'binary' or 'literal', got {mode!r}")
    unknown = proposal.unknown
    n = int(unknown.sum())
    if n == 0:
        warnings.warn("no unknown voxels; entropy term is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    p = _clamped(pred.data[unknown])
    if mode == "binary":
        return float(-np.mean(p * np.log(p) + (1.0 - p) * np.log1p(-p)))
    return float(-np.mean(p * np.log(p)))


def entropy_minimization_grad(
    pred: PredictionVolume, proposal: MaskProposal, mode: str = "binary"
) -> np.ndarray:
    """d(em)/d(pred) per voxel; zero outside the unknown set."""
    _check_geometry(pred.geometry, proposal.geometry)
    if mode not in ("binary", "literal"):
        raise ValueError(f"mode must be 'binary' or 'literal', got {mode!r}")
    grad = np.zeros(pred.geometry.shape, order="F")
    unknown = proposal.unknown
    n = int(unknown.sum())
    if n == 0:
        return grad
    p = _clamped(pred.data[unknown])
    if mode == "binary":
        grad[unknown] = -(np.log(p) - np.log1p(-p)) / n
    else:
        grad[unknown] = -(np.log(p) + 1.0) / n
    return grad


def iggd_mse(pred_map: PredictionVolume, target: DistanceMap) -> float:
    """Mean squared error against the inverse-geodesic target, over all voxels."""
    _check_geometry(pred_map.geometry, target.geometry)
    if target.kind != INVERSE_GEODESIC:
        raise ValueError(f"expected an inverse-geodesic target, got kind {target.kind!r}")
    diff = pred_map.data - target.data
    return float(np.mean(diff * diff))


def iggd_mse_grad(pred_map: PredictionVolume, target: DistanceMap) -> np.ndarray:
    _check_geometry(pred_map.geometry, target.geometry)
    if target.kind != INVERSE_GEODESIC:
        raise ValueError(f"expected an inverse-geodesic target, got kind {target.kind!r}")
    return np.asfortranarray(2.0 * (pred_map.data - target.data) / pred_map.data.size)


def total_loss(
    pce: float,
    em: float,
    mse: float,
    w: LossWeights | None = None,
    n_labeled: int = 0,
    n_unknown: int = 0,
    n_voxels: int = 0,
) -> LossReport:
    """Weighted total: pce + lambda1 * em + lambda2 * mse."""
    w = w or LossWeights()
    for name, value in (("pce", pce), ("em", em), ("mse", mse)):
        if not np.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value}")
    total = pce + w.lambda1 * em + w.lambda2 * mse
    return LossReport(float(pce), float(em), float(mse), float(total),
                      n_labeled, n_unknown, n_voxels)


def evaluate_losses(
    pred: PredictionVolume,
    proposal: MaskProposal,
    iggd_pred: PredictionVolume | None = None,
    iggd_target: DistanceMap | None = None,
    w: LossWeights | None = None,
    em_mode: str = "binary",
) -> LossReport:
    """Evaluate all loss terms in one call (the CLI entry point)."""
    pce = partial_cross_entropy(pred, proposal)
    em = entropy_minimization(pred, proposal, em_mode)
    if (iggd_pred is None) != (iggd_target is None):
        raise ValueError("iggd_pred and iggd_target must be given together")
    mse = iggd_mse(iggd_pred, iggd_target) if iggd_pred is not None else 0.0
    return total_loss(
        pce, em, mse, w,
        n_labeled=proposal.n_labeled,
        n_unknown=int(proposal.unknown.sum()),
        n_voxels=proposal.geometry.n_voxels,
    )
