"""skelprop: skeleton-seeded label propagation and evaluation for 3D
tubular structures.

The pipeline expands a sparse centerline annotation into a tri-state
mask proposal via geodesic and Euclidean distance buffers, derives
inverse-geodesic guidance maps, evaluates the associated losses, and
scores segmentations with volumetric and branch-topology metrics.
"""

__version__ = "0.1.0"

from .distance import (
    DistanceMap,
    GeodesicParams,
    euclidean_distance,
    geodesic_distance,
)
from .iggd import InverseParams, inverse_geodesic
from .losses import (
    LossReport,
    LossWeights,
    PredictionVolume,
    entropy_minimization,
    evaluate_losses,
    iggd_mse,
    partial_cross_entropy,
    total_loss,
)
from .metrics import (
    MetricsReport,
    compute_metrics,
    largest_component,
    topology_metrics,
    volumetric_metrics,
)
from .phantom import PhantomSpec, generate
from .propagation import (
    BACKGROUND,
    FOREGROUND,
    UNKNOWN,
    MaskProposal,
    PropagationParams,
    dbi_fuse,
    ebi,
    g2bi,
    propagate,
)
from .skeleton import SkeletonGraph, build_graph, graph_from_polylines, skeletonize
from .smoothing import GaussianParams, gaussian_smooth
from .volume import (
    BinaryMask,
    DataError,
    ScalarVolume,
    SkeletonAnnotation,
    VolumeGeometry,
    load_mask,
    load_volume,
    save_volume,
    skeleton_from_mask_file,
)

__all__ = [
    "__version__",
    "BACKGROUND",
    "FOREGROUND",
    "UNKNOWN",
    "BinaryMask",
    "DataError",
    "DistanceMap",
    "GaussianParams",
    "GeodesicParams",
    "InverseParams",
    "LossReport",
    "LossWeights",
    "MaskProposal",
    "MetricsReport",
    "PhantomSpec",
    "PredictionVolume",
    "PropagationParams",
    "ScalarVolume",
    "SkeletonAnnotation",
    "SkeletonGraph",
    "VolumeGeometry",
    "build_graph",
    "compute_metrics",
    "dbi_fuse",
    "ebi",
    "entropy_minimization",
    "euclidean_distance",
    "evaluate_losses",
    "g2bi",
    "gaussian_smooth",
    "generate",
    "geodesic_distance",
    "graph_from_polylines",
    "iggd_mse",
    "inverse_geodesic",
    "largest_component",
    "load_mask",
    "load_volume",
    "partial_cross_entropy",
    "propagate",
    "save_volume",
    "skeleton_from_mask_file",
    "skeletonize",
    "topology_metrics",
    "total_loss",
    "volumetric_metrics",
]
