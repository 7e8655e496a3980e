#!/usr/bin/env python3
"""Fetch the canonical MNIST IDX files into a local directory.

The four uncompressed IDX files are shipped inside the npm package
``mnist-data`` (the original yann.lecun.com host is long gone); this pulls
them via ``npm pack`` so no Python-side download code is needed.

Usage:
    python tools/fetch_mnist.py [DEST]

Default DEST: ~/.cache/ndcb/mnist (where the test suite looks, see
tests/conftest.py; override with the NDCB_MNIST_DIR environment variable).
"""

import shutil
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def fetch(dest: Path) -> None:
    dest.mkdir(parents=True, exist_ok=True)
    if all((dest / f).exists() for f in FILES):
        print(f"already present: {dest}")
        return
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            ["npm", "pack", "mnist-data", "--pack-destination", tmp],
            check=True,
            capture_output=True,
            text=True,
        )
        tgz = next(Path(tmp).glob("mnist-data-*.tgz"))
        with tarfile.open(tgz) as tar:
            tar.extractall(tmp)
        for name in FILES:
            shutil.copy(Path(tmp) / "package" / "data" / name, dest / name)
    print(f"MNIST ready under {dest}")


if __name__ == "__main__":
    fetch(Path(sys.argv[1]) if len(sys.argv) > 1 else Path.home() / ".cache/ndcb/mnist")
