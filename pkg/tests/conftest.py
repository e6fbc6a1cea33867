import numpy as np
import pytest

from binattn import _backend


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(_backend.BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    monkeypatch.setattr(_backend, "kernels", _backend.BACKENDS[request.param])
    monkeypatch.setattr(_backend, "BACKEND", request.param)
    return request.param


def pm1(x):
    """Scalar-rule +1/-1 signs with sign(0) = +1, as int64."""
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int64)


@pytest.fixture(autouse=True)
def _restore_threads():
    before = _backend.get_threads()
    yield
    _backend.set_threads(before)
