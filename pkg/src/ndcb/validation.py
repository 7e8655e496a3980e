"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from ndcb.errors import ConfigurationError


def check_images(X, name: str = "X") -> np.ndarray:
    """Coerce to a (n, H, W) float32 stack with intensities in [0, 1]."""
    X = np.asarray(X)
    if X.ndim == 4 and X.shape[-1] == 1:
        X = X[..., 0]
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ConfigurationError(f"{name}: expected (n, H, W) images, got shape {X.shape}")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ConfigurationError(f"{name}: images contain NaN or Inf")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ConfigurationError(f"{name}: pixel values must lie in [0, 1]")
    return X


def check_labels(y, n: int, name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ConfigurationError(f"{name}: expected {n} labels, got shape {y.shape}")
    return y.astype(np.int64, copy=False)


def as_nhwc(images: np.ndarray) -> np.ndarray:
    """Add the trailing channel axis the networks expect."""
    return images[..., None] if images.ndim == 3 else images


def check_unit_rows(E: np.ndarray, tol: float = 1e-3, name: str = "embeddings") -> np.ndarray:
    E = np.asarray(E)
    norms = np.linalg.norm(E, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ConfigurationError(f"{name}: rows must be unit vectors (tol {tol:g})")
    return E
