import os

import numpy as np
import pytest

from fairfed import generate_synthetic
from fairfed.data import write_idx

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


@pytest.fixture
def small_dataset():
    return generate_synthetic(7, num_groups=2, num_classes=2, per_group=100, feature_dim=4, separation=3.0)


def write_mnist_subset(directory, n=2000):
    """Class-interleaved MNIST subset as an IDX image/label pair.

    The mlxtend copy is sorted by class; interleaving makes any prefix
    (the loader's ``limit``) balanced.
    """
    mnist = pytest.importorskip("mlxtend.data")
    x, y = mnist.mnist_data()
    rank = np.empty(y.size, dtype=np.int64)
    for c in np.unique(y):
        rank[y == c] = np.arange(np.sum(y == c))
    order = np.lexsort((y, rank))[:n]
    images = os.path.join(directory, "images.idx")
    labels = os.path.join(directory, "labels.idx")
    write_idx(images, x[order].astype(np.uint8).reshape(-1, 28, 28))
    write_idx(labels, y[order].astype(np.uint8))
    return images, labels


@pytest.fixture(scope="session")
def mnist_subset(tmp_path_factory):
    return write_mnist_subset(str(tmp_path_factory.mktemp("mnist")))


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE[number] = (bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
