"""Shared fixtures.

Real-data tests need the canonical MNIST IDX files.  They are looked up in
NDCB_MNIST_DIR, then ~/.cache/ndcb/mnist; if absent we try to fetch them
once via tools/fetch_mnist.py (npm mirror) and otherwise skip.
"""

import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

TOOLS = Path(__file__).resolve().parent.parent / "tools"
MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def _mnist_candidates():
    if "NDCB_MNIST_DIR" in os.environ:
        yield Path(os.environ["NDCB_MNIST_DIR"])
    yield Path.home() / ".cache/ndcb/mnist"


@pytest.fixture(scope="session")
def mnist_dir() -> Path:
    for cand in _mnist_candidates():
        if all((cand / f).exists() for f in MNIST_FILES):
            return cand
    dest = Path.home() / ".cache/ndcb/mnist"
    try:
        subprocess.run(
            [sys.executable, str(TOOLS / "fetch_mnist.py"), str(dest)],
            check=True,
            capture_output=True,
            timeout=600,
        )
    except Exception:
        pytest.skip("MNIST IDX files unavailable (run tools/fetch_mnist.py)")
    return dest


@pytest.fixture()
def tiny_dataset():
    """4 classes x 6 images of structured 28x28 content, deterministic."""
    from ndcb.dataio import LabeledDataset

    rng = np.random.default_rng(99)
    images, labels = [], []
    for c in range(4):
        for _ in range(6):
            img = np.zeros((28, 28), dtype=np.float32)
            img[c * 6 : c * 6 + 5, 4:24] = 1.0
            img += rng.uniform(0, 0.25, size=(28, 28)).astype(np.float32)
            images.append(np.clip(img, 0, 1))
            labels.append(c)
    return LabeledDataset(np.stack(images), np.array(labels), "tiny")
