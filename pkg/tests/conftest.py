import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dgen import nn


@pytest.fixture
def float64():
    """Verification mode: run the block under 64-bit scalars."""
    with nn.use_dtype("float64"):
        yield


@pytest.fixture
def check_finite():
    nn.set_check_finite(True)
    yield
    nn.set_check_finite(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
