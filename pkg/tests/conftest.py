import numpy as np
import pytest

from bubblekit.geometry import LabelMap


def disk_mask(shape, center, radius):
    rr, cc = np.mgrid[0:shape[0], 0:shape[1]]
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius ** 2


def disk_labelmap(shape, center, radius, instance_id=1):
    ids = np.zeros(shape, dtype=np.int32)
    ids[disk_mask(shape, center, radius)] = instance_id
    return LabelMap(ids)


def random_labelmap(rng, max_side=32, n_instances=None):
    """Random blobby raster: a few disks stamped front-to-back."""
    h = int(rng.integers(4, max_side + 1))
    w = int(rng.integers(4, max_side + 1))
    ids = np.zeros((h, w), dtype=np.int32)
    n = int(n_instances if n_instances is not None else rng.integers(1, 5))
    for inst in range(1, n + 1):
        r0 = rng.uniform(0, h - 1)
        c0 = rng.uniform(0, w - 1)
        rad = rng.uniform(1, max(h, w) / 3)
        ids[disk_mask((h, w), (r0, c0), rad)] = inst
    return LabelMap(ids)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
