"""Image-space and embedding-space dissimilarity measures.

Each image distance comes in two flavours: a scalar evaluator and a
``*_grad`` companion returning d(distance)/d(first argument), so the same
definitions serve both as evaluation metrics and as differentiable loss
components.

Conventions:

* Images are arrays with pixel intensities in [0, 1]; batched variants
  accept a leading batch axis and reduce per image.
* "Hamming distance" here is the mean absolute pixelwise difference of
  real-valued images, not a bit-string distance.
* ``sobel_distance`` and ``combined_distance`` are deliberately asymmetric:
  the mask is always built from the designated true image, never from the
  prediction.
"""

from __future__ import annotations

import numpy as np

from ndcb.errors import ConfigurationError

# SSIM stabilizers for dynamic range 1.0 (the usual (K*L)^2 with K1=0.01,
# K2=0.03, L=1).
SSIM_EPS1 = 0.01 ** 2
SSIM_EPS2 = 0.03 ** 2

# Combined-distance mixing weight between Hamming and Sobel terms.
DEFAULT_GAMMA_C = 0.5

IMAGE_DISTANCES = ("mse", "hamming", "dssim", "sobel", "combined")

_SOBEL_GX = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_GY = _SOBEL_GX.T


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ConfigurationError(f"image shapes differ: {a.shape} vs {b.shape}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared pixelwise difference."""
    _check_same_shape(a, b)
    return float(np.mean(np.square(a - b)))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    _check_same_shape(pred, target)
    return 2.0 * (pred - target) / pred.size


def hamming(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute pixelwise difference."""
    _check_same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def hamming_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    _check_same_shape(pred, target)
    return np.sign(pred - target) / pred.size


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Global (whole-image) structural similarity.

    Single-formula SSIM over the full set of pixels: means, variances and
    covariance are population statistics of the whole image, not windowed.
    """
    _check_same_shape(a, b)
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(), b.var()
    cov = np.mean((a - mu_a) * (b - mu_b))
    return float(
        ((2 * mu_a * mu_b + SSIM_EPS1) * (2 * cov + SSIM_EPS2))
        / ((mu_a ** 2 + mu_b ** 2 + SSIM_EPS1) * (var_a + var_b + SSIM_EPS2))
    )


def dssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural dissimilarity (1 - SSIM) / 2, in [0, 1] for inputs in [0, 1]."""
    return (1.0 - ssim(a, b)) / 2.0


def dssim_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d dssim / d pred, from the quotient rule on the global-SSIM formula."""
    _check_same_shape(pred, target)
    n = pred.size
    mu_x, mu_y = pred.mean(), target.mean()
    var_x, var_y = pred.var(), target.var()
    cov = np.mean((pred - mu_x) * (target - mu_y))
    a1 = 2 * mu_x * mu_y + SSIM_EPS1
    a2 = 2 * cov + SSIM_EPS2
    b1 = mu_x ** 2 + mu_y ** 2 + SSIM_EPS1
    b2 = var_x + var_y + SSIM_EPS2
    s = (a1 * a2) / (b1 * b2)
    ds = (2.0 / (n * b1 * b2)) * (
        mu_y * a2 + a1 * (target - mu_y) - s * (mu_x * b2 + b1 * (pred - mu_x))
    )
    return -0.5 * ds


def sobel_mask(p: np.ndarray) -> np.ndarray:
    """Edge mask: Sobel gradient magnitude of ``p``, rescaled to [0, 1].

    Multi-channel images are reduced to luminance (channel mean) first.
    The mask depends only on the true image, so it can be precomputed once
    per dataset and reused across a whole training run.
    """
    img = p
    if img.ndim == 3:
        img = img.mean(axis=-1)
    # Edge-replicate padding: a constant image must yield an all-zeros mask,
    # which zero padding would break by manufacturing border gradients.
    padded = np.pad(img, 1, mode="edge")
    h, w = img.shape
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    for di in range(3):
        for dj in range(3):
            window = padded[di : di + h, dj : dj + w]
            gx += _SOBEL_GX[di, dj] * window
            gy += _SOBEL_GY[di, dj] * window
    mag = np.sqrt(gx ** 2 + gy ** 2)
    peak = mag.max()
    if peak > 0:
        mag /= peak
    return mag if p.ndim == 2 else mag[..., None]


def sobel_distance(pred: np.ndarray, p: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Hamming distance between mask*pred and mask*p (mask from the true image)."""
    _check_same_shape(pred, p)
    if mask is None:
        mask = sobel_mask(p)
    return hamming(mask * pred, mask * p)


def sobel_distance_grad(pred: np.ndarray, p: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    _check_same_shape(pred, p)
    if mask is None:
        mask = sobel_mask(p)
    return mask * np.sign(mask * pred - mask * p) / pred.size


def combined_distance(
    pred: np.ndarray, p: np.ndarray, mask: np.ndarray | None = None, gamma_c: float = DEFAULT_GAMMA_C
) -> float:
    """gamma_c * hamming + (1 - gamma_c) * sobel_distance."""
    if not 0.0 <= gamma_c <= 1.0:
        raise ConfigurationError("gamma_c must lie in [0, 1]")
    return gamma_c * hamming(pred, p) + (1.0 - gamma_c) * sobel_distance(pred, p, mask)


def combined_distance_grad(
    pred: np.ndarray, p: np.ndarray, mask: np.ndarray | None = None, gamma_c: float = DEFAULT_GAMMA_C
) -> np.ndarray:
    if not 0.0 <= gamma_c <= 1.0:
        raise ConfigurationError("gamma_c must lie in [0, 1]")
    return gamma_c * hamming_grad(pred, p) + (1.0 - gamma_c) * sobel_distance_grad(pred, p, mask)


def image_distance(kind: str, pred, p, mask=None, gamma_c: float = DEFAULT_GAMMA_C) -> float:
    """Dispatch on the distance menu; ``mask`` only matters for sobel/combined."""
    if kind == "mse":
        return mse(pred, p)
    if kind == "hamming":
        return hamming(pred, p)
    if kind == "dssim":
        return dssim(pred, p)
    if kind == "sobel":
        return sobel_distance(pred, p, mask)
    if kind == "combined":
        return combined_distance(pred, p, mask, gamma_c)
    raise ConfigurationError(f"unknown image distance '{kind}'")


def image_distance_grad(kind: str, pred, p, mask=None, gamma_c: float = DEFAULT_GAMMA_C) -> np.ndarray:
    if kind == "mse":
        return mse_grad(pred, p)
    if kind == "hamming":
        return hamming_grad(pred, p)
    if kind == "dssim":
        return dssim_grad(pred, p)
    if kind == "sobel":
        return sobel_distance_grad(pred, p, mask)
    if kind == "combined":
        return combined_distance_grad(pred, p, mask, gamma_c)
    raise ConfigurationError(f"unknown image distance '{kind}'")


def embedding_distance(e1: np.ndarray, e2: np.ndarray) -> float:
    """Squared Euclidean distance between unit vectors; range [0, 4]."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    for e in (e1, e2):
        if abs(np.linalg.norm(e) - 1.0) > 1e-3:
            raise ConfigurationError("embedding_distance expects unit vectors")
    return float(np.sum(np.square(e1 - e2)))


def embedding_distances_batch(e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    """Row-wise squared distances for (B, N) against (B, N); no norm check."""
    return np.sum(np.square(e1 - e2), axis=-1)
