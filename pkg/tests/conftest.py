import numpy as np
import pytest

from clusterdistill.datasets import generate_synthetic_dataset
from clusterdistill.encoder import EncoderConfig


def tiny_encoder_config(class_count: int = 4, prototype_count: int = 4,
                        proj_out: int = 16) -> EncoderConfig:
    """A very small but structurally faithful config for fast unit tests."""
    return EncoderConfig(block_channels=(8, 16, 32, 64), proj_out=proj_out,
                         prototype_count=prototype_count,
                         class_count=class_count, scale_profile="desk")


@pytest.fixture(scope="session")
def tiny_dataset():
    """4 classes x 8 train + 4 test items; small enough for quick loops."""
    return generate_synthetic_dataset(4, 8, 123, test_per_class=4)


@pytest.fixture(scope="session")
def two_class_dataset():
    return generate_synthetic_dataset(2, 8, 55, test_per_class=4)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
