import io
import os

import numpy as np
import pytest

from synthgen import data

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA_DIR = os.path.join(ROOT, "data")
PIMA = os.path.join(DATA_DIR, "pima_diabetes.csv")
WISC = os.path.join(DATA_DIR, "breast_wisc.csv")


def table_from_text(text: str, **kwargs) -> data.RawTable:
    return data.read_table(io.StringIO(text), **kwargs)


def two_gaussians(n: int = 800, seed: int = 0, separation: float = 3.0) -> data.RawTable:
    """Two classes, four numeric attributes; class ``c`` is N(separation * c, I)."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, 4)) + separation * y[:, None]
    lines = ["a1,a2,a3,a4,class"]
    lines += [",".join([repr(float(v)) for v in x] + [f"c{c}"]) for x, c in zip(X, y)]
    return table_from_text("\n".join(lines) + "\n")


def load_real(path: str) -> data.EncodedDataset:
    return data.fit_encode(data.impute_missing(data.read_table(path)))


@pytest.fixture(scope="session")
def gaussians_encoded():
    return data.fit_encode(two_gaussians())


@pytest.fixture(scope="session")
def pima_encoded():
    return load_real(PIMA)
