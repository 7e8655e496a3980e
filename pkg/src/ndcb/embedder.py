"""Unit-sphere embedding model trained with a triplet loss.

The model maps a 28x28 grayscale image to a unit vector in R^N through a
single wide hidden layer:

    flatten(784) -> dense(2048) + LeakyReLU(0.01) -> dense(N) -> l2_normalize

Training minimizes the mean hinge over sampled (anchor, positive, negative)
triplets: ReLU(d(a, p) - d(a, n) + margin), where d is the squared Euclidean
distance between embeddings.  Triplets are re-sampled uniformly at random
each epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ndcb.dataio import LabeledDataset
from ndcb.errors import ConfigurationError, DatasetError
from ndcb.nn.adam import AdamState, adam_step
from ndcb.nn.layers import Dense, Flatten, L2Normalize, LeakyReLU
from ndcb.nn.network import Network, ParamSet
from ndcb.validation import as_nhwc, check_images, check_labels

IMAGE_SHAPE = (28, 28, 1)
HIDDEN_UNITS = 2048
LEAKY_SLOPE = 0.01
DEFAULT_DIM = 10
DEFAULT_MARGIN = 0.2


@dataclass
class EmbedTrainConfig:
    n_dim: int = DEFAULT_DIM
    margin: float = DEFAULT_MARGIN
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 20
    triplets_per_epoch: int = 50_000
    seed: int = 0

    def __post_init__(self):
        if self.n_dim < 2:
            raise ConfigurationError("embedding dimension must be >= 2")
        if self.margin < 0:
            raise ConfigurationError("margin must be >= 0")


@dataclass
class Triplet:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    anchor_class: int
    negative_class: int


def build_embedder(n_dim: int = DEFAULT_DIM, input_shape=IMAGE_SHAPE) -> Network:
    """The hypersphere embedding architecture."""
    flat = int(np.prod(input_shape))
    return Network(
        [
            Flatten(),
            Dense(flat, HIDDEN_UNITS),
            LeakyReLU(LEAKY_SLOPE),
            Dense(HIDDEN_UNITS, n_dim),
            L2Normalize(),
        ],
        input_shape,
    )


def embed(network: Network, params: ParamSet, images: np.ndarray, batch: int = 512) -> np.ndarray:
    """Embed a stack of images; output rows are unit vectors."""
    x = as_nhwc(np.asarray(images, dtype=np.float32))
    if x.ndim == 3:  # single image
        x = x[None]
    out = [network.forward(params, x[i : i + batch]) for i in range(0, len(x), batch)]
    return np.concatenate(out, axis=0)


class _TripletIndexer:
    """Class-sorted view of a dataset for O(1) vectorized triplet draws."""

    def __init__(self, dataset: LabeledDataset):
        classes = dataset.classes
        if len(classes) < 2:
            raise DatasetError("triplet mining needs at least 2 classes")
        eligible = [c for c in classes if len(dataset.class_index[c]) >= 2]
        if not eligible:
            raise DatasetError("triplet mining needs a class with at least 2 images")
        self.flat = np.concatenate([dataset.class_index[c] for c in classes])
        sizes = np.array([len(dataset.class_index[c]) for c in classes])
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.n = len(dataset)
        remap = {c: i for i, c in enumerate(classes)}
        self.cls_of = np.array([remap[int(l)] for l in dataset.labels])
        self.sizes = sizes
        self.offsets = offsets
        # position of each dataset index inside its class list
        self.pos_in_class = np.empty(self.n, dtype=np.int64)
        for c in classes:
            self.pos_in_class[dataset.class_index[c]] = np.arange(
                len(dataset.class_index[c])
            )
        self.anchor_pool = np.concatenate(
            [dataset.class_index[c] for c in eligible]
        )

    def draw(self, count: int, rng: np.random.Generator):
        a = self.anchor_pool[rng.integers(0, len(self.anchor_pool), size=count)]
        ac = self.cls_of[a]
        # positive: uniform over the anchor's class minus the anchor itself
        r = rng.integers(0, self.sizes[ac] - 1, size=count)
        r += r >= self.pos_in_class[a]
        p = self.flat[self.offsets[ac] + r]
        # negative: uniform over everything outside the anchor's class
        r2 = rng.integers(0, self.n - self.sizes[ac], size=count)
        r2 += (r2 >= self.offsets[ac]) * self.sizes[ac]
        n = self.flat[r2]
        return a, p, n


def mine_triplet_indices(dataset: LabeledDataset, count: int, seed: int):
    """(anchor, positive, negative) index arrays, reproducible by seed."""
    rng = np.random.default_rng(seed)
    return _TripletIndexer(dataset).draw(count, rng)


def mine_triplets(dataset: LabeledDataset, count: int, seed: int) -> list[Triplet]:
    a, p, n = mine_triplet_indices(dataset, count, seed)
    return [
        Triplet(
            dataset.images[ai],
            dataset.images[pi],
            dataset.images[ni],
            int(dataset.labels[ai]),
            int(dataset.labels[ni]),
        )
        for ai, pi, ni in zip(a, p, n)
    ]


def triplet_loss_from_embeddings(
    e_a: np.ndarray, e_p: np.ndarray, e_n: np.ndarray, margin: float
):
    """Mean hinge loss over a batch plus gradients w.r.t. all three embeddings.

    The hinge is flat at its kink: a triplet sitting exactly on the margin
    boundary contributes zero gradient.
    """
    if margin < 0:
        raise ConfigurationError("margin must be >= 0")
    d_pos = np.sum(np.square(e_a - e_p), axis=-1)
    d_neg = np.sum(np.square(e_a - e_n), axis=-1)
    viol = d_pos - d_neg + margin
    active = viol > 0
    loss = float(np.mean(np.where(active, viol, 0.0)))
    scale = (active / len(viol)).astype(e_a.dtype)[:, None]
    d_ea = 2.0 * (e_n - e_p) * scale
    d_ep = 2.0 * (e_p - e_a) * scale
    d_en = 2.0 * (e_a - e_n) * scale
    return loss, (d_ea, d_ep, d_en)


def triplet_loss(
    triplets: list[Triplet], network: Network, params: ParamSet, margin: float
) -> float:
    """Mean triplet hinge for explicit Triplet batches (evaluation path)."""
    stack = np.stack(
        [t.anchor for t in triplets] + [t.positive for t in triplets] + [t.negative for t in triplets]
    )
    emb = embed(network, params, stack)
    b = len(triplets)
    loss, _ = triplet_loss_from_embeddings(emb[:b], emb[b : 2 * b], emb[2 * b :], margin)
    return loss


def train_embedder(dataset: LabeledDataset, cfg: EmbedTrainConfig):
    """Train from He init; returns (network, params, per-epoch mean loss)."""
    network = build_embedder(cfg.n_dim)
    params = network.init_params(cfg.seed)
    state = AdamState.for_params(params, cfg.learning_rate)
    mine_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    indexer = _TripletIndexer(dataset)
    images = as_nhwc(dataset.images)

    losses: list[float] = []
    for _ in range(cfg.epochs):
        a_idx, p_idx, n_idx = indexer.draw(cfg.triplets_per_epoch, mine_rng)
        total, seen = 0.0, 0
        for lo in range(0, cfg.triplets_per_epoch, cfg.batch_size):
            hi = min(lo + cfg.batch_size, cfg.triplets_per_epoch)
            b = hi - lo
            batch = np.concatenate(
                [images[a_idx[lo:hi]], images[p_idx[lo:hi]], images[n_idx[lo:hi]]]
            )
            emb, tape = network.forward(params, batch, record_tape=True)
            loss, (d_ea, d_ep, d_en) = triplet_loss_from_embeddings(
                emb[:b], emb[b : 2 * b], emb[2 * b :], cfg.margin
            )
            grads, _ = network.backward(tape, np.concatenate([d_ea, d_ep, d_en]))
            adam_step(params, grads, state)
            total += loss * b
            seen += b
        losses.append(total / seen)
    return network, params, losses


class SphereEmbedder(BaseEstimator, TransformerMixin):
    """Sklearn-style wrapper: fit on labeled images, transform to embeddings."""

    def __init__(
        self,
        n_dim: int = DEFAULT_DIM,
        margin: float = DEFAULT_MARGIN,
        learning_rate: float = 1e-4,
        batch_size: int = 64,
        epochs: int = 20,
        triplets_per_epoch: int = 50_000,
        random_state: int = 0,
    ):
        self.n_dim = n_dim
        self.margin = margin
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.triplets_per_epoch = triplets_per_epoch
        self.random_state = random_state

    def _config(self) -> EmbedTrainConfig:
        return EmbedTrainConfig(
            n_dim=self.n_dim,
            margin=self.margin,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            triplets_per_epoch=self.triplets_per_epoch,
            seed=self.random_state,
        )

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, len(X))
        dataset = LabeledDataset(X, y)
        self.network_, self.params_, self.loss_curve_ = train_embedder(
            dataset, self._config()
        )
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise NotFittedError("SphereEmbedder is not fitted")
        return embed(self.network_, self.params_, check_images(X))


def embedder_from_weights(params: ParamSet) -> Network:
    """Rebuild the embedding architecture implied by a loaded ParamSet."""
    from ndcb.nn.network import validate_params

    bias = params.tensors.get("03_dense.bias")
    if bias is None:
        raise ConfigurationError("weights file does not contain an embedder")
    network = build_embedder(n_dim=bias.shape[0])
    validate_params(network, params)
    return network
