import numpy as np
import pytest

from edgemal import cnn
from edgemal.cli import data_path
from edgemal.rng import SplitMix64


@pytest.fixture(scope="session")
def default_spec() -> cnn.ModelSpec:
    return cnn.load_spec(data_path("default_model.json"))


@pytest.fixture(scope="session")
def tiny_spec() -> cnn.ModelSpec:
    return cnn.ModelSpec((6, 6, 1), (
        cnn.LayerSpec("Input"),
        cnn.LayerSpec("Conv", kernel_w=3, kernel_h=3, filters=2, activation="relu"),
        cnn.LayerSpec("Pool", pool_window=2),
        cnn.LayerSpec("Flatten"),
        cnn.LayerSpec("Dense", units=5, activation="relu"),
        cnn.LayerSpec("Softmax", units=3),
    ))


def rand_tensor(shape, seed, lo=0.0, hi=1.0) -> cnn.Tensor:
    """Deterministic test input drawn element by element from SplitMix64."""
    rng = SplitMix64(seed)
    arr = np.empty(shape, dtype=np.float32)
    flat = arr.ravel()
    for i in range(flat.size):
        flat[i] = np.float32(rng.uniform(lo, hi))
    return cnn.Tensor(arr)
