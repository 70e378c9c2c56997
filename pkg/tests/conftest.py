import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from teachnet.dataset import generate_dataset  # noqa: E402
from teachnet.kinematics import load_model  # noqa: E402

import oracles  # noqa: E402


@pytest.fixture(scope="session")
def model():
    return load_model()


@pytest.fixture(scope="session")
def raw_cfg():
    return oracles.load_raw_config()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Eight paired samples, shared by the dataset, train and cli tests."""
    out = tmp_path_factory.mktemp("tiny")
    manifest = generate_dataset(8, 3, out)
    return out, manifest
