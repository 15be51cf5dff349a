import numpy as np
import pytest

from evobagging.data import Dataset, gen_nbit_parity, gen_two_spiral


@pytest.fixture
def parity3() -> Dataset:
    return gen_nbit_parity(3)


@pytest.fixture
def parity4() -> Dataset:
    return gen_nbit_parity(4)


@pytest.fixture
def small_spiral() -> Dataset:
    return gen_two_spiral(n_points=40)


@pytest.fixture
def line_data() -> Dataset:
    """Four points on a line, split between 1 and 2."""
    return Dataset(features=np.array([[0.0], [1.0], [2.0], [3.0]]), labels=np.array([0, 0, 1, 1]), n_classes=2)


@pytest.fixture
def csv_file(tmp_path):
    """Writes `text` to a CSV file in tmp_path and returns its path."""

    def write(text: str, name: str = "data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
