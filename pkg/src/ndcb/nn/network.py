"""Network container: an ordered layer list plus its trainable parameters.

A ``Network`` owns no state besides its layer descriptors; parameters are a
separate :class:`ParamSet` so the same architecture can be evaluated under
different weights (and so a frozen model is simply one whose ParamSet is
never handed to the optimizer).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ndcb.errors import ConfigurationError
from ndcb.nn.layers import ConcatSkip, Layer, PassContext, SaveSkip


@dataclass
class ParamSet:
    """Named parameter tensors in a fixed order, plus the seed that made them."""

    tensors: dict[str, np.ndarray]
    seed: int | None = None

    @property
    def dtype(self):
        if not self.tensors:
            return None
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.tensors.items()}, self.seed)

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({k: v.astype(dtype) for k, v in self.tensors.items()}, self.seed)

    def allclose(self, other: "ParamSet", **kw) -> bool:
        return self.tensors.keys() == other.tensors.keys() and all(
            np.allclose(self.tensors[k], other.tensors[k], **kw) for k in self.tensors
        )

    def checksum(self) -> bytes:
        import hashlib

        h = hashlib.sha256()
        for name, t in self.tensors.items():
            h.update(name.encode())
            h.update(t.tobytes())
        return h.digest()


@dataclass
class Tape:
    """Intermediate state retained by a recording forward pass."""

    params: ParamSet
    caches: list
    ctx: PassContext
    input_shape: tuple
    output_shape: tuple


class Network:
    """Sequential layer stack with named skip connections."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...]):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        for i, layer in enumerate(self.layers):
            layer.name = f"{i:02d}_{layer.kind}"
        self.output_shape = self._infer_shapes()

    def _infer_shapes(self) -> tuple[int, ...]:
        shape = self.input_shape
        saved: dict[str, tuple] = {}
        self._shapes = [shape]
        for layer in self.layers:
            if isinstance(layer, SaveSkip):
                saved[layer.skip] = shape
            elif isinstance(layer, ConcatSkip):
                if layer.skip not in saved:
                    raise ConfigurationError(f"skip '{layer.skip}' used before being saved")
                sh = saved[layer.skip]
                if sh[:2] != shape[:2]:
                    raise ConfigurationError(
                        f"skip '{layer.skip}' spatial shape {sh[:2]} != {shape[:2]}"
                    )
                shape = (shape[0], shape[1], shape[2] + sh[2])
            else:
                shape = layer.output_shape(shape)
            self._shapes.append(shape)
        return shape

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for layer in self.layers:
            for key, shp in layer.param_shapes().items():
                shapes[f"{layer.name}.{key}"] = shp
        return shapes

    def init_params(self, seed: int, dtype=np.float32) -> ParamSet:
        """He-initialized weights (N(0, 2/fan_in)), zero biases, reproducible."""
        rng = np.random.default_rng(seed)
        tensors: dict[str, np.ndarray] = {}
        for layer in self.layers:
            for key, shp in layer.param_shapes().items():
                name = f"{layer.name}.{key}"
                if key == "bias":
                    tensors[name] = np.zeros(shp, dtype=dtype)
                else:
                    std = np.sqrt(2.0 / layer.fan_in())
                    tensors[name] = rng.normal(0.0, std, size=shp).astype(dtype)
        return ParamSet(tensors, seed=seed)

    def forward(self, params: ParamSet, x: np.ndarray, record_tape: bool = False):
        """Run the stack; with ``record_tape`` also return state for backward."""
        if tuple(x.shape[1:]) != self.input_shape:
            raise ConfigurationError(
                f"input shape {tuple(x.shape[1:])} != expected {self.input_shape}"
            )
        x = np.ascontiguousarray(x, dtype=params.dtype or x.dtype)
        ctx = PassContext()
        caches = [] if record_tape else None
        for layer in self.layers:
            x, cache = layer.forward(x, params.tensors, ctx)
            if record_tape:
                caches.append(cache)
        if record_tape:
            return x, Tape(params, caches, ctx, self.input_shape, self.output_shape)
        return x

    def backward(self, tape: Tape, dout: np.ndarray):
        """Backpropagate ``dout`` (d loss / d output) through the tape.

        Returns ``(grads, dx)``: gradients for every trainable parameter,
        keyed like the ParamSet, and the gradient w.r.t. the network input.
        """
        if tuple(dout.shape[1:]) != self.output_shape:
            raise ConfigurationError(
                f"gradient shape {tuple(dout.shape[1:])} != output {self.output_shape}"
            )
        grads: dict[str, np.ndarray] = {}
        dy = np.ascontiguousarray(dout, dtype=tape.params.dtype or dout.dtype)
        for layer, cache in zip(reversed(self.layers), reversed(tape.caches)):
            dy = layer.backward(dy, cache, tape.params.tensors, grads, tape.ctx)
        # Grads for parameters the sweep never touched (none today, but keeps
        # the contract: one gradient per trainable tensor).
        for name, t in tape.params.tensors.items():
            grads.setdefault(name, np.zeros_like(t))
        return grads, dy


def validate_params(network: Network, params: ParamSet) -> ParamSet:
    """Check a loaded ParamSet against a network's expected names and shapes."""
    expected = network.param_shapes()
    got = {k: v.shape for k, v in params.tensors.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        surplus = sorted(set(got) - set(expected))
        wrong = sorted(
            k for k in set(expected) & set(got) if expected[k] != got[k]
        )
        raise ConfigurationError(
            "weights do not fit this architecture"
            + (f"; missing {missing}" if missing else "")
            + (f"; unexpected {surplus}" if surplus else "")
            + (f"; wrong shapes {wrong}" if wrong else "")
        )
    return params
