import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _single_thread_torch():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=32, w=32, channels=3):
    if channels == 1:
        return rng.random((h, w))
    return rng.random((h, w, channels))
