"""Adam with bias-corrected moments."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update of ``params`` (name -> Tensor).

    ``lr`` is a float or a mapping from parameter name to learning rate.
    Parameters missing from ``grads`` are left untouched.
    """
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        rate = lr[name] if isinstance(lr, dict) else lr
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if rate == 0.0:
            continue
        p.data = p.data - rate * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state
