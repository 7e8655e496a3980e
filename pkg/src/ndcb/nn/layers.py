"""Layer definitions with explicit forward and backward passes.

Every layer is a stateless descriptor: trainable tensors live in a ParamSet
keyed by ``<layer name>.<param>`` and are passed in on every call.  Image
tensors are batched NHWC arrays; dense activations are (batch, features).

``forward`` returns ``(y, cache)`` where the cache holds whatever the
backward pass needs; skip activations travel through a per-pass context so
U-Net style concatenations work in plain inference as well as under a tape.

Backward passes are hand-derived and checked against central finite
differences (see :mod:`ndcb.nn.gradcheck`).  Convolution uses zero padding;
upsampling is nearest-neighbour, so a transposed convolution is expressed
as ``Upsample2x`` followed by ``Conv2d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ndcb.errors import ConfigurationError, DegenerateInputError

# Lower bound on the input norm of l2_normalize; below it the direction is
# numerically meaningless and we refuse rather than emit garbage.
EPS_NORM = 1e-8


@dataclass
class PassContext:
    """State threaded through one forward or backward sweep."""

    skips: dict = field(default_factory=dict)
    skip_grads: dict = field(default_factory=dict)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    """Extract sliding patches of ``x`` (B,H,W,C) into (B*Ho*Wo, kh*kw*C)."""
    b, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    sb, sh, sw, sc = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, ho, wo, kh, kw, c),
        strides=(sb, stride * sh, stride * sw, sh, sw, sc),
        writeable=False,
    )
    return np.ascontiguousarray(windows).reshape(b * ho * wo, kh * kw * c), ho, wo


class Layer:
    """Base descriptor. Subclasses fill in shapes and the two passes."""

    kind = "layer"
    name = ""  # assigned by Network

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def fan_in(self) -> int:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, x: np.ndarray, params: dict, ctx: PassContext):
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache, params: dict, grads: dict, ctx: PassContext):
        raise NotImplementedError

    def _p(self, params, key):
        return params[f"{self.name}.{key}"]

    def _set_grad(self, grads, key, value):
        grads[f"{self.name}.{key}"] = value


@dataclass
class Dense(Layer):
    in_dim: int
    out_dim: int
    kind = "dense"

    def param_shapes(self):
        return {"weight": (self.in_dim, self.out_dim), "bias": (self.out_dim,)}

    def fan_in(self):
        return self.in_dim

    def output_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ConfigurationError(
                f"{self.name}: expected input ({self.in_dim},), got {in_shape}"
            )
        return (self.out_dim,)

    def forward(self, x, params, ctx):
        return x @ self._p(params, "weight") + self._p(params, "bias"), x

    def backward(self, dy, cache, params, grads, ctx):
        x = cache
        self._set_grad(grads, "weight", x.T @ dy)
        self._set_grad(grads, "bias", dy.sum(axis=0))
        return dy @ self._p(params, "weight").T


@dataclass
class Conv2d(Layer):
    in_ch: int
    out_ch: int
    k: int = 3
    stride: int = 1
    pad: int = 1
    kind = "conv"

    def __post_init__(self):
        if self.pad > self.k - 1:
            raise ConfigurationError("padding must be < kernel size")

    def param_shapes(self):
        return {"weight": (self.k, self.k, self.in_ch, self.out_ch), "bias": (self.out_ch,)}

    def fan_in(self):
        return self.k * self.k * self.in_ch

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[2] != self.in_ch:
            raise ConfigurationError(
                f"{self.name}: expected (H,W,{self.in_ch}), got {in_shape}"
            )
        h, w, _ = in_shape
        ho = (h + 2 * self.pad - self.k) // self.stride + 1
        wo = (w + 2 * self.pad - self.k) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigurationError(f"{self.name}: input {in_shape} too small for kernel")
        return (ho, wo, self.out_ch)

    def forward(self, x, params, ctx):
        w = self._p(params, "weight")
        cols, ho, wo = _im2col(x, self.k, self.k, self.stride, self.pad)
        y = cols @ w.reshape(-1, self.out_ch) + self._p(params, "bias")
        return y.reshape(x.shape[0], ho, wo, self.out_ch), x

    def backward(self, dy, cache, params, grads, ctx):
        x = cache
        w = self._p(params, "weight")
        b, ho, wo, _ = dy.shape
        dy_flat = dy.reshape(b * ho * wo, self.out_ch)

        # Patches are recomputed here instead of cached: one extra im2col is
        # cheaper than holding every layer's column matrix in memory.
        cols, _, _ = _im2col(x, self.k, self.k, self.stride, self.pad)
        self._set_grad(grads, "weight", (cols.T @ dy_flat).reshape(w.shape))
        self._set_grad(grads, "bias", dy_flat.sum(axis=0))

        # dx = stride-1 correlation of the zero-dilated dy with the kernel
        # flipped spatially and transposed in channels.
        h_in, w_in = x.shape[1], x.shape[2]
        dh = (ho - 1) * self.stride + 1
        dw = (wo - 1) * self.stride + 1
        dyd = np.zeros((b, dh, dw, self.out_ch), dtype=dy.dtype)
        dyd[:, :: self.stride, :: self.stride] = dy
        pl = self.k - 1 - self.pad
        pr_h = h_in + self.pad - dh
        pr_w = w_in + self.pad - dw
        dyd = np.pad(dyd, ((0, 0), (pl, pr_h), (pl, pr_w), (0, 0)))
        wt = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
        cols_b, _, _ = _im2col(dyd, self.k, self.k, 1, 0)
        dx = cols_b @ wt.reshape(-1, self.in_ch)
        return dx.reshape(b, h_in, w_in, self.in_ch)


@dataclass
class LeakyReLU(Layer):
    slope: float = 0.01
    kind = "leaky_relu"

    def __post_init__(self):
        if not 0 <= self.slope < 1:
            raise ConfigurationError("leaky_relu slope must be in [0, 1)")

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, params, ctx):
        # Cache the pre-activation itself (not the mask): gradcheck inspects
        # kink margins to keep finite differences off the non-smooth point.
        return np.where(x > 0, x, self.slope * x), x

    def backward(self, dy, cache, params, grads, ctx):
        return np.where(cache > 0, dy, self.slope * dy)


@dataclass
class Sigmoid(Layer):
    kind = "sigmoid"

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, params, ctx):
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return y, y

    def backward(self, dy, cache, params, grads, ctx):
        y = cache
        return dy * y * (1.0 - y)


@dataclass
class L2Normalize(Layer):
    """Project rows of (B, N) onto the unit sphere."""

    kind = "l2_normalize"

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ConfigurationError(f"{self.name}: expects flat vectors, got {in_shape}")
        return in_shape

    def forward(self, x, params, ctx):
        norm = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(norm <= EPS_NORM):
            raise DegenerateInputError(
                f"l2_normalize: input norm below {EPS_NORM:g}, direction undefined"
            )
        y = x / norm
        return y, (y, norm)

    def backward(self, dy, cache, params, grads, ctx):
        y, norm = cache
        return (dy - y * np.sum(y * dy, axis=-1, keepdims=True)) / norm


@dataclass
class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params, ctx):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, params, grads, ctx):
        return dy.reshape(cache)


@dataclass
class ReflectPad2d(Layer):
    pad: int
    kind = "reflect_pad"

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if self.pad >= min(h, w):
            raise ConfigurationError("reflect pad wider than the image")
        return (h + 2 * self.pad, w + 2 * self.pad, c)

    def forward(self, x, params, ctx):
        y = np.pad(x, ((0, 0), (self.pad, self.pad), (self.pad, self.pad), (0, 0)), mode="reflect")
        return y, (x.shape[1], x.shape[2])

    def backward(self, dy, cache, params, grads, ctx):
        h, w = cache
        ri = np.pad(np.arange(h), self.pad, mode="reflect")
        ci = np.pad(np.arange(w), self.pad, mode="reflect")
        tmp = np.zeros((dy.shape[0], h) + dy.shape[2:], dtype=dy.dtype)
        for i, r in enumerate(ri):
            tmp[:, r] += dy[:, i]
        dx = np.zeros((dy.shape[0], h, w, dy.shape[3]), dtype=dy.dtype)
        for j, c in enumerate(ci):
            dx[:, :, c] += tmp[:, :, j]
        return dx


@dataclass
class CenterCrop2d(Layer):
    """Crop margin pixels symmetrically from H and W (inverse of a pad)."""

    margin: int
    kind = "crop"

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if 2 * self.margin >= min(h, w):
            raise ConfigurationError("crop margin wider than the image")
        return (h - 2 * self.margin, w - 2 * self.margin, c)

    def forward(self, x, params, ctx):
        m = self.margin
        return x[:, m : x.shape[1] - m, m : x.shape[2] - m], (x.shape[1], x.shape[2])

    def backward(self, dy, cache, params, grads, ctx):
        h, w = cache
        m = self.margin
        dx = np.zeros((dy.shape[0], h, w, dy.shape[3]), dtype=dy.dtype)
        dx[:, m : h - m, m : w - m] = dy
        return dx


@dataclass
class Upsample2x(Layer):
    """Nearest-neighbour 2x upsampling."""

    kind = "upsample"

    def output_shape(self, in_shape):
        h, w, c = in_shape
        return (2 * h, 2 * w, c)

    def forward(self, x, params, ctx):
        return x.repeat(2, axis=1).repeat(2, axis=2), None

    def backward(self, dy, cache, params, grads, ctx):
        b, h2, w2, c = dy.shape
        return dy.reshape(b, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))


@dataclass
class SaveSkip(Layer):
    """Identity layer that stashes its input for a later ConcatSkip."""

    skip: str
    kind = "save_skip"

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, params, ctx):
        ctx.skips[self.skip] = x
        return x, None

    def backward(self, dy, cache, params, grads, ctx):
        extra = ctx.skip_grads.pop(self.skip, None)
        return dy if extra is None else dy + extra


@dataclass
class ConcatSkip(Layer):
    """Concatenate a previously saved activation along channels."""

    skip: str
    kind = "concat_skip"

    def output_shape(self, in_shape):
        # Channel arithmetic is validated by Network shape inference, which
        # tracks saved skip shapes; standalone use assumes matching H and W.
        raise ConfigurationError("concat_skip shape depends on the saved skip")

    def forward(self, x, params, ctx):
        saved = ctx.skips.get(self.skip)
        if saved is None:
            raise ConfigurationError(f"skip '{self.skip}' was never saved")
        if saved.shape[:3] != x.shape[:3]:
            raise ConfigurationError(
                f"skip '{self.skip}' spatial shape {saved.shape[1:3]} != {x.shape[1:3]}"
            )
        return np.concatenate([x, saved], axis=-1), x.shape[-1]

    def backward(self, dy, cache, params, grads, ctx):
        main_ch = cache
        skip_part = dy[..., main_ch:]
        prev = ctx.skip_grads.get(self.skip)
        ctx.skip_grads[self.skip] = skip_part if prev is None else prev + skip_part
        return dy[..., :main_ch]
