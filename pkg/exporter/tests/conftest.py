import numpy as np
import pytest

from clip_export import make_encoder


@pytest.fixture(scope="session")
def enc():
    return make_encoder("fake:24")


@pytest.fixture
def npy_images(tmp_path):
    """Write n deterministic uint8 test images as .npy; returns their paths."""
    def make(n, size=12, seed=9):
        rng = np.random.Generator(np.random.PCG64(seed))
        paths = []
        for i in range(n):
            p = tmp_path / f"img_{i:03d}.npy"
            np.save(p, rng.integers(0, 256, (size, size, 3)).astype(np.uint8))
            paths.append(p)
        return paths
    return make
