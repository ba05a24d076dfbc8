import numpy as np
import pytest

from ncp import datasets as ds
from ncp.trainer import TrainConfig, train


def tiny_config(**kw):
    base = dict(epochs=8, batch_size=64, patience=8, d=4, hidden_widths=(8, 8), seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def lg_data():
    data = ds.generate(ds.GeneratorSpec("LinearGaussian", n=1024, seed=0))
    val = ds.generate(ds.GeneratorSpec("LinearGaussian", n=256, seed=1))
    return data, val


@pytest.fixture(scope="session")
def tiny_fit(lg_data):
    data, val = lg_data
    return train(data, val, tiny_config())


@pytest.fixture
def rng():
    return np.random.default_rng(0)
