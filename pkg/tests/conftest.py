import numpy as np
import pytest

from spanvos import autodiff as ad


@pytest.fixture(autouse=True)
def double_precision():
    """Tests run at float64 unless they opt out locally."""
    prev = ad.default_dtype()
    ad.set_default_dtype(np.float64)
    yield
    ad.set_default_dtype(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
