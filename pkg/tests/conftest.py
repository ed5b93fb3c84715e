import numpy as np
import pytest

from skelprop.volume import ScalarVolume, SkeletonAnnotation, VolumeGeometry


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_volume(rng, dims, spacing=(1.0, 1.0, 1.0), scale=1.0):
    geom = VolumeGeometry(dims, spacing)
    return ScalarVolume(geom, scale * rng.random(dims).astype(np.float32))


def random_seeds(rng, geom, k):
    lin = rng.choice(geom.n_voxels, size=min(k, geom.n_voxels), replace=False)
    return SkeletonAnnotation(geom, lin)
