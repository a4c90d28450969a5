import numpy as np
import pytest

from usnn.data import Dataset

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def xor_dataset(n=200, seed=0):
    rng = np.random.default_rng(seed)
    quadrants = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=float)
    s = quadrants[rng.permutation(np.arange(n) % 4)]
    x = s * rng.uniform(0.15, 1.0, size=(n, 2))
    y = (s[:, 0] * s[:, 1] > 0).astype(int)
    return Dataset(x, y)


@pytest.fixture
def xor():
    return xor_dataset()


@pytest.fixture
def tmp_csv(tmp_path):
    def write(text, name="d.csv"):
        p = tmp_path / name
        p.write_text(text)
        return p
    return write
