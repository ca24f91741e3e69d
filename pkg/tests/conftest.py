import numpy as np
import pytest

from shapgate import model as net
from shapgate.synthgen import GenConfig, generate

# Stride-4 needs input_length >= 4**4, so the 64-sample toy network uses stride 2.
TOY = net.ModelConfig(input_length=64, channel_widths=(4, 6, 8, 10, 12), stage_stride=2, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy64():
    return net.assemble(TOY, np.float64)


@pytest.fixture
def toy32():
    return net.assemble(TOY, np.float32)


@pytest.fixture(scope="session")
def small_windows():
    return generate(GenConfig(), 3, 3, seed=11)


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-30))


def central_diff(f, x, h):
    """Full central-difference gradient of scalar ``f`` at array ``x`` (modified in place)."""
    g = np.zeros(x.shape, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g
