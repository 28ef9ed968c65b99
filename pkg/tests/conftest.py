import numpy as np
import pytest

from projfusion import kernels


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    """Run a test under each kernel backend, restoring auto afterwards."""
    try:
        mod = kernels.use_backend(request.param)
    except RuntimeError:
        pytest.skip("numba unavailable")
    yield mod
    kernels.use_backend("auto")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
