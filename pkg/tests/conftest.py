import numpy as np
import pytest

from measim.config import SimParams


@pytest.fixture
def tiny_params():
    """Small but structurally valid culture parameters for fast tests."""
    return SimParams(n_neurons=300, k_exc=60, k_inh=15, seed=42)


def make_raster(rng: np.random.Generator, n_neurons: int, duration: float,
                min_isi: float) -> dict[int, np.ndarray]:
    """Random spike rasters with a guaranteed minimum inter-spike interval."""
    raster = {}
    for j in range(n_neurons):
        times = []
        t = float(rng.integers(0, 12))
        while t < duration:
            times.append(t)
            t += min_isi + float(rng.integers(0, 25))
        raster[j] = np.array(times)
    return raster
