"""Finite-difference verification of every backward pass.

Analytic gradients from :meth:`Network.backward` are compared against
central differences computed in float64.  The numeric side re-runs the
full forward pass per perturbed element, so it shares no code path with
the hand-derived derivatives it is checking.

Piecewise-linear ops (LeakyReLU, the hinge losses, Hamming-style
distances) are only differentiable away from their kinks; every check
therefore resamples its random instance until all kink margins exceed
``KINK_MARGIN``, keeping the +/-h probes on one linear piece.

``run_suite`` covers each layer kind and both training losses on small
random instances; the CLI ``gradcheck`` command wraps it.  ``perturb``
deliberately corrupts the analytic gradient of matching ops so the suite
can prove it would catch a regression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ndcb.errors import ConfigurationError
from ndcb.nn.layers import (
    CenterCrop2d,
    ConcatSkip,
    Conv2d,
    Dense,
    Flatten,
    L2Normalize,
    LeakyReLU,
    ReflectPad2d,
    SaveSkip,
    Sigmoid,
    Upsample2x,
)
from ndcb.nn.network import Network

TOLERANCE = 1e-4
STEP = 1e-5
# Minimum distance of any pre-activation / hinge argument from its kink.
KINK_MARGIN = 1e-3
# Gradient entries below this magnitude are compared on an absolute scale;
# well above the ~1e-10 noise floor of float64 central differences.
REL_FLOOR = 1e-3
_MAX_REDRAWS = 200


@dataclass
class OpReport:
    op: str
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def finite_difference(f, arr: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. ``arr`` (in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def leaky_kink_margin(network: Network, params, x: np.ndarray) -> float:
    """Smallest |pre-activation| over all LeakyReLU units (inf if none)."""
    _, tape = network.forward(params, x, record_tape=True)
    margins = [
        float(np.min(np.abs(cache)))
        for layer, cache in zip(network.layers, tape.caches)
        if isinstance(layer, LeakyReLU)
    ]
    return min(margins) if margins else float("inf")


def _draw_instance(network: Network, rng, batch, low=None, high=None):
    """Params plus an input whose LeakyReLU units all clear the kink margin."""
    for _ in range(_MAX_REDRAWS):
        params = network.init_params(int(rng.integers(1 << 31)), dtype=np.float64)
        if low is None:
            x = rng.normal(size=(batch, *network.input_shape))
        else:
            x = rng.uniform(low, high, size=(batch, *network.input_shape))
        if leaky_kink_margin(network, params, x) > KINK_MARGIN:
            return params, x
    raise ConfigurationError("could not sample an instance clear of LeakyReLU kinks")


def check_network(
    op: str,
    network: Network,
    params,
    x: np.ndarray,
    loss_head,
    check_input: bool = True,
    perturb: str | None = None,
) -> OpReport:
    """Compare backward() against finite differences of forward()+loss.

    ``loss_head(y) -> (value, dvalue/dy)`` closes the graph with a scalar.
    """
    y, tape = network.forward(params, x, record_tape=True)
    _, dy = loss_head(y)
    grads, dx = network.backward(tape, dy)
    if perturb and op.startswith(perturb):
        first = next(iter(grads))
        grads[first] = grads[first] + 1e-2

    def value():
        out = network.forward(params, x)
        return loss_head(out)[0]

    worst = 0.0
    for name, tensor in params.tensors.items():
        numeric = finite_difference(value, tensor)
        worst = max(worst, max_relative_error(grads[name], numeric))
    if check_input:
        numeric = finite_difference(value, x)
        worst = max(worst, max_relative_error(dx, numeric))
    return OpReport(op, worst)


def _projection_head(rng, shape):
    r = rng.normal(size=shape)
    return lambda y: (float(np.sum(y * r)), r)


def _layer_cases():
    """(name, layers, input_shape, batch) for every layer kind."""
    return [
        ("dense", [Dense(5, 4)], (5,), 3),
        ("dense", [Dense(7, 3)], (7,), 2),
        ("leaky_relu", [Dense(6, 6), LeakyReLU(0.01)], (6,), 3),
        ("leaky_relu", [LeakyReLU(0.2)], (8,), 2),
        ("sigmoid", [Conv2d(2, 2), Sigmoid()], (5, 5, 2), 2),
        ("sigmoid", [Sigmoid()], (9,), 3),
        ("l2_normalize", [Dense(6, 4), L2Normalize()], (6,), 3),
        ("l2_normalize", [L2Normalize()], (5,), 4),
        ("conv_s1", [Conv2d(2, 3)], (6, 6, 2), 2),
        ("conv_s1", [Conv2d(1, 2), LeakyReLU(0.01), Conv2d(2, 1)], (6, 6, 1), 2),
        ("conv_s2", [Conv2d(2, 3, stride=2)], (6, 6, 2), 2),
        ("conv_s2", [Conv2d(1, 2, stride=2)], (8, 8, 1), 2),
        ("conv_1x1", [Conv2d(3, 2, k=1, pad=0)], (4, 4, 3), 2),
        ("transposed_conv", [Upsample2x(), Conv2d(2, 1)], (3, 3, 2), 2),
        ("transposed_conv", [Conv2d(1, 2, stride=2), Upsample2x(), Conv2d(2, 1)], (6, 6, 1), 2),
        ("flatten", [Flatten(), Dense(12, 3)], (2, 2, 3), 2),
        ("reflect_pad", [ReflectPad2d(2), Conv2d(1, 2)], (6, 6, 1), 2),
        ("crop", [Conv2d(1, 2), CenterCrop2d(1)], (6, 6, 1), 2),
        (
            "skip_concat",
            [
                Conv2d(1, 2),
                SaveSkip("s"),
                Conv2d(2, 3, stride=2),
                LeakyReLU(0.01),
                Upsample2x(),
                ConcatSkip("s"),
                Conv2d(5, 1),
            ],
            (6, 6, 1),
            2,
        ),
    ]


def _check_layers(seed: int, perturb) -> list[OpReport]:
    reports = []
    rng = np.random.default_rng(seed)
    for name, layers, in_shape, batch in _layer_cases():
        net = Network(layers, in_shape)
        params, x = _draw_instance(net, rng, batch)
        head = _projection_head(rng, (batch, *net.output_shape))
        reports.append(check_network(name, net, params, x, head, perturb=perturb))
    return reports


def _small_embedder(n_dim: int, side: int) -> Network:
    return Network(
        [Flatten(), Dense(side * side, 3 * n_dim), LeakyReLU(0.01), Dense(3 * n_dim, n_dim), L2Normalize()],
        (side, side, 1),
    )


def _small_unet(side: int = 8) -> Network:
    """Miniature of the real generator: same layer kinds, few kink units."""
    return Network(
        [
            ReflectPad2d(1),
            Conv2d(1, 3), LeakyReLU(0.01),
            SaveSkip("s"),
            Conv2d(3, 4, stride=2), LeakyReLU(0.01),
            Upsample2x(),
            ConcatSkip("s"),
            Conv2d(7, 1, k=1, pad=0),
            Sigmoid(),
            CenterCrop2d(1),
        ],
        (side, side, 1),
    )


def _check_triplet_loss(seed: int, perturb) -> list[OpReport]:
    from ndcb.embedder import triplet_loss_from_embeddings

    reports = []
    rng = np.random.default_rng(seed + 1)
    b = 3
    for margin in (0.2, 0.5):
        net = _small_embedder(n_dim=5, side=5)
        # Hinge arguments must clear the kink too, so redraw whole instances.
        for _ in range(_MAX_REDRAWS):
            params, x = _draw_instance(net, rng, 3 * b, low=0.0, high=1.0)
            emb = net.forward(params, x)
            d_pos = np.sum((emb[:b] - emb[b : 2 * b]) ** 2, axis=-1)
            d_neg = np.sum((emb[:b] - emb[2 * b :]) ** 2, axis=-1)
            if np.min(np.abs(d_pos - d_neg + margin)) > KINK_MARGIN:
                break

        def head(emb, margin=margin):
            loss, (d_a, d_p, d_n) = triplet_loss_from_embeddings(
                emb[:b], emb[b : 2 * b], emb[2 * b :], margin
            )
            return loss, np.concatenate([d_a, d_p, d_n])

        reports.append(check_network("triplet_loss", net, params, x, head, perturb=perturb))
    return reports


def _check_generator_loss(seed: int, perturb) -> list[OpReport]:
    from ndcb.distances import IMAGE_DISTANCES
    from ndcb.generator import (
        GenTrainConfig,
        _loss_and_input_grad,
        generator_loss,
        precompute_sobel_masks,
    )

    reports = []
    rng = np.random.default_rng(seed + 2)
    side = 8
    emb_net = _small_embedder(n_dim=4, side=side)
    gen_net = _small_unet(side)

    for kind in IMAGE_DISTANCES:
        cfg = GenTrainConfig(alpha=0.3, beta=0.7, dist=kind, epochs=0, seed=0)
        # Clear three kink families at once: LeakyReLU pre-activations in
        # both nets, |G(p) - p| pixel gaps (Hamming-style signs), and the
        # embedding hinge at alpha.
        for _ in range(_MAX_REDRAWS):
            emb_params = emb_net.init_params(int(rng.integers(1 << 31)), dtype=np.float64)
            gen_params = gen_net.init_params(int(rng.integers(1 << 31)), dtype=np.float64)
            p = rng.uniform(0.0, 1.0, size=(2, side, side, 1))
            gp = gen_net.forward(gen_params, p)
            e_p = emb_net.forward(emb_params, p)
            d_emb = np.sum((emb_net.forward(emb_params, gp) - e_p) ** 2, axis=-1)
            if (
                leaky_kink_margin(gen_net, gen_params, p) > KINK_MARGIN
                and leaky_kink_margin(emb_net, emb_params, gp) > KINK_MARGIN
                and leaky_kink_margin(emb_net, emb_params, p) > KINK_MARGIN
                and np.min(np.abs(gp - p)) > KINK_MARGIN
                and np.min(np.abs(d_emb - cfg.alpha)) > KINK_MARGIN
            ):
                break
        masks = precompute_sobel_masks(p[..., 0])[..., None] if kind in ("sobel", "combined") else None

        gp, tape = gen_net.forward(gen_params, p, record_tape=True)
        _, _, _, d_gp, _ = _loss_and_input_grad(p, gp, e_p, emb_net, emb_params, cfg, masks)
        grads, _ = gen_net.backward(tape, d_gp)
        op = f"generator_loss_{kind}"
        if perturb and op.startswith(perturb):
            first = next(iter(grads))
            grads[first] = grads[first] + 1e-2

        def value():
            out = gen_net.forward(gen_params, p)
            total, _, _ = generator_loss(
                p, out, emb_net, emb_params, cfg.alpha, cfg.beta, kind, masks, cfg.gamma_c
            )
            return total

        worst = 0.0
        for name, tensor in gen_params.tensors.items():
            numeric = finite_difference(value, tensor)
            worst = max(worst, max_relative_error(grads[name], numeric))
        reports.append(OpReport(op, worst))
    return reports


def run_suite(seed: int = 0, perturb: str | None = None) -> list[OpReport]:
    """All gradient checks: every layer kind plus the two training losses."""
    reports = _check_layers(seed, perturb)
    reports += _check_triplet_loss(seed, perturb)
    reports += _check_generator_loss(seed, perturb)
    return reports
