"""Authentication flows, enrollment/validation simulation, and metrics.

Three authentication modes over a template database:

* ``no_distortion``  — templates are raw photos, probes are raw photos.
* ``with_distortion`` — templates are distorted (G applied at enrollment),
  probes stay raw: the embedding metric compares them directly.
* ``cancelable``     — both sides pass through G, the classic flow.

A probe is accepted iff its embedding lies strictly within ``theta`` of any
cached template embedding; distances live in [0, 4] on the unit sphere, so
threshold sweeps run over that interval.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ndcb.dataio import LabeledDataset
from ndcb.embedder import embed
from ndcb.errors import ConfigurationError, DatasetError, UndefinedMetricError
from ndcb.generator import distort
from ndcb.validation import check_images, check_labels

MODES = ("no_distortion", "with_distortion", "cancelable")
SCENARIOS = ("real_real", "real_gen", "gen_gen")

THETA_MIN, THETA_MAX = 0.0, 4.0


@dataclass
class SimConfig:
    mode: str = "no_distortion"
    registered: int = 5
    probes: int = 1000
    theta_min: float = THETA_MIN
    theta_max: float = THETA_MAX
    theta_steps: int = 401
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.registered < 1:
            raise ConfigurationError("at least one registered class is required")
        if self.probes < 1:
            raise ConfigurationError("probes must be >= 1")
        if not (THETA_MIN <= self.theta_min <= self.theta_max <= THETA_MAX):
            raise ConfigurationError(
                f"theta grid must lie within [{THETA_MIN}, {THETA_MAX}]"
            )
        if self.theta_steps < 1:
            raise ConfigurationError("theta grid needs at least one point")

    def theta_grid(self) -> np.ndarray:
        if self.theta_steps == 1:
            return np.array([self.theta_min])
        return np.linspace(self.theta_min, self.theta_max, self.theta_steps)


@dataclass
class TemplateRecord:
    class_id: int
    template: np.ndarray  # stored image (raw or distorted)
    embedding: np.ndarray  # cached E(template)
    source_index: int  # dataset index of the enrolled photo


@dataclass
class TemplateDB:
    mode: str
    records: list[TemplateRecord]
    registered_classes: list[int]
    enrolled_indices: np.ndarray

    def embedding_matrix(self) -> np.ndarray:
        return np.stack([r.embedding for r in self.records])


@dataclass
class ConfusionCounts:
    tp: int
    fn: int
    tn: int
    fp: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.tn, self.fp) < 0:
            raise ConfigurationError("confusion counts must be non-negative")


@dataclass
class MetricsReport:
    accuracy: float
    specificity: float
    npv: float
    fpr: float
    fnr: float
    aer: float
    counts: ConfusionCounts
    theta_star: float | None = None
    mode: str = ""
    seed: int | None = None


def compute_metrics(counts: ConfusionCounts) -> MetricsReport:
    """The six confusion-matrix metrics; zero denominators raise by name."""
    tp, fn, tn, fp = counts.tp, counts.fn, counts.tn, counts.fp
    denominators = {
        "accuracy": tp + tn + fp + fn,
        "specificity": tn + fp,
        "npv": tn + fn,
        "fpr": fp + tn,
        "fnr": tp + fn,
    }
    for metric, den in denominators.items():
        if den == 0:
            raise UndefinedMetricError(f"{metric} undefined: zero denominator")
    fpr = fp / (fp + tn)
    fnr = fn / (tp + fn)
    return MetricsReport(
        accuracy=(tp + tn) / (tp + tn + fp + fn),
        specificity=tn / (tn + fp),
        npv=tn / (tn + fn),
        fpr=fpr,
        fnr=fnr,
        aer=(fpr + fnr) / 2.0,
        counts=counts,
    )


def _pairwise_sq_dists(probes: np.ndarray, templates: np.ndarray) -> np.ndarray:
    """Exact squared distances (n_probes, n_templates) in float64."""
    diff = probes[:, None, :].astype(np.float64) - templates[None, :, :].astype(np.float64)
    return np.sum(np.square(diff), axis=-1)


def enroll(
    dataset: LabeledDataset,
    cfg: SimConfig,
    emb_network,
    emb_params,
    gen_network=None,
    gen_params=None,
) -> TemplateDB:
    """Build the template database: one random photo per registered class."""
    classes = dataset.classes
    if cfg.registered >= len(classes):
        raise ConfigurationError(
            f"registered classes ({cfg.registered}) must be fewer than all classes ({len(classes)})"
        )
    if cfg.mode in ("with_distortion", "cancelable") and gen_params is None:
        raise ConfigurationError(f"mode '{cfg.mode}' needs generator weights")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    chosen = sorted(rng.choice(classes, size=cfg.registered, replace=False).tolist())
    picks = []
    for c in chosen:
        pool = dataset.class_index[c]
        if len(pool) == 0:
            raise DatasetError(f"class {c} has no images")
        picks.append(int(pool[rng.integers(0, len(pool))]))
    photos = dataset.images[picks]
    if cfg.mode == "no_distortion":
        templates = photos
    else:
        templates = distort(gen_network, gen_params, photos)
    embeddings = embed(emb_network, emb_params, templates)
    records = [
        TemplateRecord(int(dataset.labels[i]), templates[k], embeddings[k], i)
        for k, i in enumerate(picks)
    ]
    return TemplateDB(cfg.mode, records, chosen, np.array(picks))


def _probe_side(images: np.ndarray, mode: str, gen_network, gen_params) -> np.ndarray:
    if mode == "cancelable":
        if gen_params is None:
            raise ConfigurationError("cancelable mode needs generator weights")
        return distort(gen_network, gen_params, images)
    return images


def authenticate(
    p: np.ndarray,
    db: TemplateDB,
    theta: float,
    emb_network,
    emb_params,
    gen_network=None,
    gen_params=None,
) -> bool:
    """Accept iff some template embedding lies strictly within theta."""
    if not THETA_MIN <= theta <= THETA_MAX:
        raise ConfigurationError(f"theta must lie in [{THETA_MIN}, {THETA_MAX}]")
    if not db.records:
        warnings.warn("authenticate: empty template database, rejecting")
        return False
    probe = _probe_side(np.asarray(p)[None], db.mode, gen_network, gen_params)
    e = embed(emb_network, emb_params, probe)
    dists = _pairwise_sq_dists(e, db.embedding_matrix())
    return bool(dists.min() < theta)


def _sample_probes(dataset: LabeledDataset, db: TemplateDB, cfg: SimConfig):
    """Fixed valid/invalid probe index sets, disjoint from enrolled photos."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    registered = set(db.registered_classes)
    enrolled = set(int(i) for i in db.enrolled_indices)
    valid_pool = np.array(
        [
            i
            for c in db.registered_classes
            for i in dataset.class_index.get(c, [])
            if int(i) not in enrolled
        ]
    )
    invalid_pool = np.concatenate(
        [dataset.class_index[c] for c in dataset.classes if c not in registered]
    )
    for name, pool in (("valid", valid_pool), ("invalid", invalid_pool)):
        if len(pool) < cfg.probes:
            raise DatasetError(
                f"{name} probe pool has {len(pool)} images, {cfg.probes} needed "
                f"(short by {cfg.probes - len(pool)})"
            )
    valid = rng.choice(valid_pool, size=cfg.probes, replace=False)
    invalid = rng.choice(invalid_pool, size=cfg.probes, replace=False)
    return valid, invalid


def _min_distances(
    dataset, db, indices, emb_network, emb_params, gen_network, gen_params
) -> np.ndarray:
    images = _probe_side(dataset.images[indices], db.mode, gen_network, gen_params)
    emb = embed(emb_network, emb_params, images)
    return _pairwise_sq_dists(emb, db.embedding_matrix()).min(axis=1)


def run_simulation(
    dataset: LabeledDataset,
    db: TemplateDB,
    theta: float,
    cfg: SimConfig,
    emb_network,
    emb_params,
    gen_network=None,
    gen_params=None,
) -> ConfusionCounts:
    """Estimate the confusion counts at one threshold on the seeded probe sample."""
    if not THETA_MIN <= theta <= THETA_MAX:
        raise ConfigurationError(f"theta must lie in [{THETA_MIN}, {THETA_MAX}]")
    valid, invalid = _sample_probes(dataset, db, cfg)
    d_valid = _min_distances(dataset, db, valid, emb_network, emb_params, gen_network, gen_params)
    d_invalid = _min_distances(dataset, db, invalid, emb_network, emb_params, gen_network, gen_params)
    tp = int(np.count_nonzero(d_valid < theta))
    tn = int(np.count_nonzero(~(d_invalid < theta)))
    return ConfusionCounts(tp=tp, fn=cfg.probes - tp, tn=tn, fp=cfg.probes - tn)


def sweep_threshold(
    dataset: LabeledDataset,
    db: TemplateDB,
    cfg: SimConfig,
    emb_network,
    emb_params,
    gen_network=None,
    gen_params=None,
):
    """Pick theta* minimizing AER over the grid (ties -> smaller theta).

    One probe sample is drawn and reused for every grid point so AER(theta)
    values are comparable.  Returns ``(report_at_theta_star, sweep_rows)``;
    each row carries theta, the four counts, accuracy and AER.
    """
    valid, invalid = _sample_probes(dataset, db, cfg)
    d_valid = _min_distances(dataset, db, valid, emb_network, emb_params, gen_network, gen_params)
    d_invalid = _min_distances(dataset, db, invalid, emb_network, emb_params, gen_network, gen_params)

    rows = []
    n = cfg.probes
    for theta in cfg.theta_grid():
        tp = int(np.count_nonzero(d_valid < theta))
        tn = int(np.count_nonzero(~(d_invalid < theta)))
        fn, fp = n - tp, n - tn
        fpr, fnr = fp / (fp + tn), fn / (tp + fn)
        rows.append(
            {
                "theta": float(theta),
                "tp": tp,
                "fn": fn,
                "tn": tn,
                "fp": fp,
                "acc": (tp + tn) / (2 * n),
                "aer": (fpr + fnr) / 2.0,
            }
        )
    best = min(range(len(rows)), key=lambda i: (rows[i]["aer"], rows[i]["theta"]))
    star = rows[best]
    report = compute_metrics(
        ConfusionCounts(tp=star["tp"], fn=star["fn"], tn=star["tn"], fp=star["fp"])
    )
    report.theta_star = star["theta"]
    report.mode = cfg.mode
    report.seed = cfg.seed
    return report, rows


class _ClassPairSampler:
    """Vectorized same-class / cross-class index pair draws."""

    def __init__(self, dataset: LabeledDataset):
        classes = dataset.classes
        if len(classes) < 2:
            raise DatasetError("pair sampling needs at least 2 classes")
        self.flat = np.concatenate([dataset.class_index[c] for c in classes])
        self.sizes = np.array([len(dataset.class_index[c]) for c in classes])
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
        remap = {c: i for i, c in enumerate(classes)}
        self.cls_of = np.array([remap[int(l)] for l in dataset.labels])
        self.n = len(dataset)

    def cross_class(self, count: int, rng):
        a = rng.integers(0, self.n, size=count)
        ac = self.cls_of[a]
        r = rng.integers(0, self.n - self.sizes[ac], size=count)
        r += (r >= self.offsets[ac]) * self.sizes[ac]
        return a, self.flat[r]

    def same_class(self, count: int, rng):
        a = rng.integers(0, self.n, size=count)
        ac = self.cls_of[a]
        r = rng.integers(0, self.sizes[ac], size=count)
        return a, self.flat[self.offsets[ac] + r]


@dataclass
class Histogram:
    scenario: str
    edges: np.ndarray
    counts: np.ndarray
    left: np.ndarray  # dataset indices, first pair element
    right: np.ndarray  # dataset indices, second pair element (G side where applicable)


def hamming_histogram(
    dataset: LabeledDataset,
    gen_network,
    gen_params,
    scenario: str,
    pairs: int = 10_000,
    bins: int = 20,
    seed: int = 0,
) -> Histogram:
    """Equal-width histogram over [0, 1] of pairwise Hamming distances.

    ``real_real`` and ``gen_gen`` pairs cross classes; ``real_gen`` pairs a
    real image with a distorted same-class image.
    """
    if scenario not in SCENARIOS:
        raise ConfigurationError(f"scenario must be one of {SCENARIOS}")
    if pairs < 1:
        raise ConfigurationError("pairs must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, SCENARIOS.index(scenario)]))
    sampler = _ClassPairSampler(dataset)
    if scenario == "real_gen":
        left, right = sampler.same_class(pairs, rng)
    else:
        left, right = sampler.cross_class(pairs, rng)

    a = dataset.images[left]
    b = dataset.images[right]
    if scenario in ("real_gen", "gen_gen"):
        b = distort(gen_network, gen_params, b)
    if scenario == "gen_gen":
        a = distort(gen_network, gen_params, a)
    values = np.mean(np.abs(a - b), axis=(1, 2))
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return Histogram(scenario, edges, counts.astype(np.int64), left, right)


class TemplateAuthenticator(BaseEstimator):
    """Sklearn-style verifier: fit enrolls templates, predict accepts/rejects.

    ``embedder`` must be a fitted SphereEmbedder; distortion modes also need
    a fitted DistortionGenerator.
    """

    def __init__(self, embedder=None, generator=None, mode: str = "no_distortion", theta: float = 0.5):
        self.embedder = embedder
        self.generator = generator
        self.mode = mode
        self.theta = theta

    def _models(self):
        if self.embedder is None or not hasattr(self.embedder, "params_"):
            raise NotFittedError("TemplateAuthenticator needs a fitted SphereEmbedder")
        gen_net = gen_par = None
        if self.mode in ("with_distortion", "cancelable"):
            if self.generator is None or not hasattr(self.generator, "params_"):
                raise NotFittedError(f"mode '{self.mode}' needs a fitted DistortionGenerator")
            gen_net, gen_par = self.generator.network_, self.generator.params_
        return self.embedder.network_, self.embedder.params_, gen_net, gen_par

    def fit(self, X, y):
        """Enroll every given photo as a template under the configured mode."""
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        X = check_images(X)
        y = check_labels(y, len(X))
        emb_net, emb_par, gen_net, gen_par = self._models()
        templates = X if self.mode == "no_distortion" else distort(gen_net, gen_par, X)
        embeddings = embed(emb_net, emb_par, templates)
        self.records_ = [
            TemplateRecord(int(y[i]), templates[i], embeddings[i], i) for i in range(len(X))
        ]
        self._template_embeddings_ = embeddings
        return self

    def min_distances(self, X) -> np.ndarray:
        if not hasattr(self, "records_"):
            raise NotFittedError("TemplateAuthenticator is not fitted")
        X = check_images(X)
        emb_net, emb_par, gen_net, gen_par = self._models()
        probes = _probe_side(X, self.mode, gen_net, gen_par)
        emb = embed(emb_net, emb_par, probes)
        return _pairwise_sq_dists(emb, self._template_embeddings_).min(axis=1)

    def decision_function(self, X) -> np.ndarray:
        return self.theta - self.min_distances(X)

    def predict(self, X) -> np.ndarray:
        return self.min_distances(X) < self.theta
