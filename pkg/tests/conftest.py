import numpy as np
import pytest

from cogcbt.dataio import write_idx
from cogcbt.graphdata import generate_synthetic_population

_ACCEPTANCE_LINES = []


def blob_digits(n, size=28, seed=0):
    """Digit-like uint8 images: a few filled discs of random intensity."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    out = np.zeros((n, size, size), np.uint8)
    for i in range(n):
        for _ in range(3):
            cx, cy = rng.uniform(0.2 * size, 0.8 * size, 2)
            r = rng.uniform(0.07 * size, 0.2 * size)
            out[i][(xx - cx) ** 2 + (yy - cy) ** 2 < r * r] = rng.integers(128, 256)
    return out


@pytest.fixture
def idx_file(tmp_path):
    path = tmp_path / "images.idx"
    write_idx(path, blob_digits(40))
    return path


@pytest.fixture
def small_pop():
    return generate_synthetic_population(8, 6, 2, classes=2, noise_sigma=0.05, seed=3)


@pytest.fixture
def acceptance_report():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
