import numpy as np
import pytest
import torch

import pkdgan as p

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def digits():
    """(train, test) RawDatasets of the bundled handwritten-digit corpus."""
    return p.load_digits_corpus()


@pytest.fixture(scope="session")
def digits_split(digits):
    train, test = digits
    return p.make_one_class_split(train, test, 1)


@pytest.fixture(scope="session")
def tiny_spec():
    return p.ArchSpec(input_channels=1, channels=(1, 1, 1), latent_dim=2)


@pytest.fixture(scope="session")
def small_spec():
    return p.ArchSpec(input_channels=1, channels=(2, 4, 8), latent_dim=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_split(digits_split):
    """Very small split for fast training-loop tests."""
    split = p.OneClassSplit(
        normal_class=digits_split.normal_class,
        train_images=digits_split.train_images[:32],
        test_images=digits_split.test_images[:80],
        test_labels=digits_split.test_labels[:80],
    )
    assert split.test_labels.min() == 0 and split.test_labels.max() == 1
    return split
