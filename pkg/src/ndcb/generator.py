"""Image distortion generator: U-Net trained against a frozen embedder.

The generator G is rewarded for making G(p) visually far from p (image
distance, sign-flipped) while keeping the embeddings E(G(p)) and E(p)
within a margin ``alpha`` of each other:

    loss = (1 - beta) * L_img + beta * L_emb
    L_img = -mean_b d_img(G(p), p)                    (always <= 0)
    L_emb = mean_b ReLU(d_emb(E(G(p)), E(p)) - alpha)

The hinge means embedding drift below ``alpha`` is free; only the excess is
penalized.  E stays frozen throughout: its parameters are read, never
updated, and the training loop asserts this with a checksum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ndcb import distances
from ndcb.dataio import LabeledDataset
from ndcb.errors import ConfigurationError
from ndcb.nn.adam import AdamState, adam_step
from ndcb.nn.layers import (
    CenterCrop2d,
    ConcatSkip,
    Conv2d,
    LeakyReLU,
    ReflectPad2d,
    SaveSkip,
    Sigmoid,
    Upsample2x,
)
from ndcb.nn.network import Network, ParamSet
from ndcb.validation import as_nhwc, check_images

LEAKY_SLOPE = 0.01
BASE_CHANNELS = 32


@dataclass
class GenTrainConfig:
    alpha: float = 0.3
    beta: float = 0.9
    dist: str = "mse"
    gamma_c: float = distances.DEFAULT_GAMMA_C
    batch_size: int = 64
    learning_rate: float = 1e-4
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError("beta must lie in [0, 1]")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")
        if self.dist not in distances.IMAGE_DISTANCES:
            raise ConfigurationError(
                f"dist must be one of {distances.IMAGE_DISTANCES}, got '{self.dist}'"
            )
        if not 0.0 <= self.gamma_c <= 1.0:
            raise ConfigurationError("gamma_c must lie in [0, 1]")


def _pad_margin(size: int) -> int:
    """Smallest symmetric reflect pad making the size a multiple of 8."""
    for m in range(4):
        if (size + 2 * m) % 8 == 0:
            return m
    raise ConfigurationError(f"no valid pad for size {size}")  # unreachable for even sizes


def build_unet(input_shape=(28, 28, 1), base_channels: int = BASE_CHANNELS) -> Network:
    """Two-level U-Net with skip concatenation and a sigmoid output.

    The input is reflect-padded up to a multiple of 8 (28 -> 32) so two
    stride-2 stages land on integer sizes, then cropped back at the end.
    Downsampling is a stride-2 convolution; upsampling is nearest-neighbour
    followed by a convolution.
    """
    h, w, c = input_shape
    if h < 16 or w < 16:
        raise ConfigurationError("unet needs at least 16x16 input")
    if h % 2 or w % 2:
        raise ConfigurationError("unet supports even image sizes only")
    if _pad_margin(h) != _pad_margin(w) and h != w:
        # Non-square support would need separate H/W pads; out of scope.
        raise ConfigurationError("unet supports square images only")
    m = _pad_margin(h)
    c1, c2, c3 = base_channels, 2 * base_channels, 4 * base_channels
    layers = []
    if m:
        layers.append(ReflectPad2d(m))
    layers += [
        Conv2d(c, c1), LeakyReLU(LEAKY_SLOPE),
        SaveSkip("s1"),
        Conv2d(c1, c1, stride=2), LeakyReLU(LEAKY_SLOPE),
        Conv2d(c1, c2), LeakyReLU(LEAKY_SLOPE),
        SaveSkip("s2"),
        Conv2d(c2, c2, stride=2), LeakyReLU(LEAKY_SLOPE),
        Conv2d(c2, c3), LeakyReLU(LEAKY_SLOPE),
        Upsample2x(),
        ConcatSkip("s2"),
        Conv2d(c3 + c2, c2), LeakyReLU(LEAKY_SLOPE),
        Upsample2x(),
        ConcatSkip("s1"),
        Conv2d(c2 + c1, c1), LeakyReLU(LEAKY_SLOPE),
        Conv2d(c1, c, k=1, pad=0),
        Sigmoid(),
    ]
    if m:
        layers.append(CenterCrop2d(m))
    return Network(layers, input_shape)


def distort(network: Network, params: ParamSet, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """Apply the generator to a stack of images; returns the same layout."""
    squeeze = np.asarray(images).ndim == 3
    x = as_nhwc(np.asarray(images, dtype=np.float32))
    out = [network.forward(params, x[i : i + batch]) for i in range(0, len(x), batch)]
    y = np.concatenate(out, axis=0)
    return y[..., 0] if squeeze else y


def precompute_sobel_masks(images: np.ndarray) -> np.ndarray:
    """One edge mask per image, a pure function of the true images."""
    return np.stack([distances.sobel_mask(img) for img in images])


def _batch_image_loss(kind, pred, target, masks, gamma_c):
    """Per-image distances and d(distance)/d(pred) for an NHWC batch."""
    vals = np.empty(len(pred))
    grads = np.empty_like(pred)
    for i in range(len(pred)):
        mask = masks[i] if masks is not None else None
        vals[i] = distances.image_distance(kind, pred[i], target[i], mask, gamma_c)
        grads[i] = distances.image_distance_grad(kind, pred[i], target[i], mask, gamma_c)
    return vals, grads


def generator_loss(
    p: np.ndarray,
    gp: np.ndarray,
    emb_network: Network,
    emb_params: ParamSet,
    alpha: float,
    beta: float,
    dist: str = "mse",
    masks: np.ndarray | None = None,
    gamma_c: float = distances.DEFAULT_GAMMA_C,
):
    """Total trainer loss and its two components for a batch.

    Returns ``(total, l_img, l_emb)`` with
    ``total == (1 - beta) * l_img + beta * l_emb`` exactly.
    """
    p = as_nhwc(np.asarray(p))
    gp = as_nhwc(np.asarray(gp))
    if p.shape != gp.shape or p.ndim != 4:
        raise ConfigurationError("generator_loss expects matching image batches")
    vals, _ = _batch_image_loss(dist, gp, p, masks, gamma_c)
    l_img = -float(np.mean(vals))
    e_p = emb_network.forward(emb_params, p)
    e_g = emb_network.forward(emb_params, gp)
    d_emb = distances.embedding_distances_batch(e_g, e_p)
    l_emb = float(np.mean(np.maximum(d_emb - alpha, 0.0)))
    total = (1.0 - beta) * l_img + beta * l_emb
    return total, l_img, l_emb


def _loss_and_input_grad(p_b, gp_b, e_p_b, emb_network, emb_params, cfg, masks_b):
    """Training-path loss: values plus d(loss)/d(G output).

    ``e_p_b`` holds precomputed target embeddings; the embedding branch
    backpropagates through the frozen embedder down to its image input.
    """
    b = len(p_b)
    vals, img_grads = _batch_image_loss(cfg.dist, gp_b, p_b, masks_b, cfg.gamma_c)
    l_img = -float(np.mean(vals))
    d_gp = (-(1.0 - cfg.beta) / b) * img_grads

    e_g, tape = emb_network.forward(emb_params, gp_b, record_tape=True)
    diff = e_g - e_p_b
    d_emb = np.sum(np.square(diff), axis=-1)
    active = d_emb > cfg.alpha
    l_emb = float(np.mean(np.where(active, d_emb - cfg.alpha, 0.0)))
    d_eg = (2.0 * cfg.beta / b) * diff * active[:, None]
    _, demb_dgp = emb_network.backward(tape, d_eg.astype(e_g.dtype))
    d_gp = d_gp + demb_dgp

    total = (1.0 - cfg.beta) * l_img + cfg.beta * l_emb
    stats = {
        "d_img": float(np.mean(vals)),
        "d_emb": float(np.mean(d_emb)),
        "d_hamming": float(np.mean(np.abs(gp_b - p_b), axis=(1, 2, 3)).mean()),
    }
    return total, l_img, l_emb, d_gp, stats


def train_generator(
    dataset: LabeledDataset,
    emb_network: Network,
    emb_params: ParamSet,
    cfg: GenTrainConfig,
):
    """Train the U-Net with the embedder frozen.

    Returns ``(network, params, log)`` where ``log`` has one record per
    epoch: loss, l_img, l_emb, mean d_img, mean d_hamming, mean d_emb.
    """
    frozen = emb_params.checksum()
    network = build_unet(emb_network.input_shape)
    params = network.init_params(cfg.seed)
    state = AdamState.for_params(params, cfg.learning_rate)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])

    images = as_nhwc(dataset.images)
    masks = None
    if cfg.dist in ("sobel", "combined"):
        masks = as_nhwc(precompute_sobel_masks(dataset.images))
    targets = _embed_images(emb_network, emb_params, images)

    log: list[dict] = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(images))
        sums = {"loss": 0.0, "l_img": 0.0, "l_emb": 0.0, "d_img": 0.0, "d_hamming": 0.0, "d_emb": 0.0}
        seen = 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            p_b = images[idx]
            masks_b = masks[idx] if masks is not None else None
            gp_b, tape = network.forward(params, p_b, record_tape=True)
            total, l_img, l_emb, d_gp, stats = _loss_and_input_grad(
                p_b, gp_b, targets[idx], emb_network, emb_params, cfg, masks_b
            )
            grads, _ = network.backward(tape, d_gp)
            adam_step(params, grads, state)
            b = len(idx)
            for key, val in (("loss", total), ("l_img", l_img), ("l_emb", l_emb)):
                sums[key] += val * b
            for key in ("d_img", "d_hamming", "d_emb"):
                sums[key] += stats[key] * b
            seen += b
        log.append({"epoch": epoch, **{k: v / seen for k, v in sums.items()}})

    if emb_params.checksum() != frozen:
        raise RuntimeError("embedder parameters changed during generator training")
    return network, params, log


def _embed_images(emb_network, emb_params, images_nhwc, batch: int = 512):
    out = [
        emb_network.forward(emb_params, images_nhwc[i : i + batch])
        for i in range(0, len(images_nhwc), batch)
    ]
    return np.concatenate(out, axis=0)


class DistortionGenerator(BaseEstimator, TransformerMixin):
    """Sklearn-style wrapper around the U-Net distorter.

    ``embedder`` must be a fitted :class:`ndcb.embedder.SphereEmbedder`; it
    is used read-only.
    """

    def __init__(
        self,
        embedder=None,
        alpha: float = 0.3,
        beta: float = 0.9,
        dist: str = "mse",
        gamma_c: float = distances.DEFAULT_GAMMA_C,
        batch_size: int = 64,
        learning_rate: float = 1e-4,
        epochs: int = 20,
        random_state: int = 0,
    ):
        self.embedder = embedder
        self.alpha = alpha
        self.beta = beta
        self.dist = dist
        self.gamma_c = gamma_c
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.random_state = random_state

    def _config(self) -> GenTrainConfig:
        return GenTrainConfig(
            alpha=self.alpha,
            beta=self.beta,
            dist=self.dist,
            gamma_c=self.gamma_c,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        if self.embedder is None or not hasattr(self.embedder, "params_"):
            raise NotFittedError("DistortionGenerator needs a fitted SphereEmbedder")
        X = check_images(X)
        dataset = LabeledDataset(X, np.zeros(len(X), dtype=np.int64))
        self.network_, self.params_, self.log_ = train_generator(
            dataset, self.embedder.network_, self.embedder.params_, self._config()
        )
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise NotFittedError("DistortionGenerator is not fitted")
        return distort(self.network_, self.params_, check_images(X))


def generator_from_weights(params: ParamSet, input_shape=(28, 28, 1)) -> Network:
    """Rebuild the U-Net for a loaded ParamSet and validate the fit."""
    from ndcb.nn.network import validate_params

    network = build_unet(input_shape)
    validate_params(network, params)
    return network
