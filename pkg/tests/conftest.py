import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from dcrl.config import TrainConfig  # noqa: E402
from dcrl.dataio import gen_blobs, zscore  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_blobs():
    return zscore(gen_blobs(30, 3, 5, 1.0, seed=1))


@pytest.fixture
def tiny_config():
    return TrainConfig(
        n_clusters=3,
        epochs=6,
        ramp_end_epoch=4,
        hidden=(8, 8),
        latent_dim=3,
        pretrain_epochs=3,
        batch=16,
        pretrain_batch=16,
    )
