"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ndcb.errors import ConfigurationError
from ndcb.nn.network import ParamSet

BETA1 = 0.9
BETA2 = 0.999
EPS_ADAM = 1e-8


@dataclass
class AdamState:
    lr: float
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS_ADAM
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet, lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        state.m = {k: np.zeros_like(p) for k, p in params.tensors.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.tensors.items()}
        return state


def adam_step(params: ParamSet, grads: dict[str, np.ndarray], state: AdamState):
    """One Adam update, in place. Returns (params, state) for chaining."""
    if grads.keys() != params.tensors.keys():
        raise ConfigurationError("gradient names do not match parameter names")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigurationError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
