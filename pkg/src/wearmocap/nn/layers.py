"""Dense, MLP and bidirectional LSTM layers over autograd tensors.

Parameters live in a flat ``{name: Tensor}`` mapping; layer functions take
that mapping plus a name prefix.
"""

import numpy as np

from ..errors import ShapeMismatch
from . import autograd as ag


def init_linear(params, prefix, n_in, n_out, rng, gain=1.0):
    bound = gain * np.sqrt(6.0 / (n_in + n_out))
    params[f"{prefix}.weight"] = ag.Tensor(rng.uniform(-bound, bound, (n_in, n_out)), requires_grad=True)
    params[f"{prefix}.bias"] = ag.Tensor(np.zeros(n_out), requires_grad=True)


def linear(params, prefix, x):
    w = params[f"{prefix}.weight"]
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"{prefix}: input width {x.shape[-1]} != {w.shape[0]}")
    return ag.matmul(x, w) + params[f"{prefix}.bias"]


def init_mlp(params, prefix, sizes, rng):
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(params, f"{prefix}.{i}", a, b, rng, gain=np.sqrt(2.0) if i < len(sizes) - 2 else 1.0)


def mlp_layer_count(params, prefix):
    n = 0
    while f"{prefix}.{n}.weight" in params:
        n += 1
    return n


def mlp_forward(params, x, prefix="imu_encoder"):
    """Affine layers with ReLU between them; the last layer is linear."""
    x = ag.as_tensor(x)
    n = mlp_layer_count(params, prefix)
    if n == 0:
        raise ShapeMismatch(f"no layers under {prefix!r}")
    for i in range(n):
        x = linear(params, f"{prefix}.{i}", x)
        if i < n - 1:
            x = ag.relu(x)
    return x


def init_lstm(params, prefix, n_in, hidden, rng):
    bound = 1.0 / np.sqrt(hidden)
    params[f"{prefix}.w_ih"] = ag.Tensor(rng.uniform(-bound, bound, (n_in, 4 * hidden)), requires_grad=True)
    params[f"{prefix}.w_hh"] = ag.Tensor(rng.uniform(-bound, bound, (hidden, 4 * hidden)), requires_grad=True)
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0  # forget gate
    params[f"{prefix}.bias"] = ag.Tensor(bias, requires_grad=True)


def lstm_direction(params, prefix, x, reverse=False):
    """One LSTM direction over x of shape (B, T, D); returns per-step hidden states.

    Gate layout along the 4H axis is (input, forget, cell candidate, output).
    """
    B, T, D = x.shape
    w_ih = params[f"{prefix}.w_ih"]
    w_hh = params[f"{prefix}.w_hh"]
    H = w_hh.shape[0]
    if D != w_ih.shape[0]:
        raise ShapeMismatch(f"{prefix}: input width {D} != {w_ih.shape[0]}")
    xw = (ag.matmul(ag.reshape(x, (B * T, D)), w_ih) + params[f"{prefix}.bias"]).reshape(B, T, 4 * H)
    h = ag.Tensor(np.zeros((B, H)))
    c = ag.Tensor(np.zeros((B, H)))
    outs = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        gates = xw[:, t, :] + ag.matmul(h, w_hh)
        sig = ag.sigmoid(gates[:, :2 * H])
        i_g = sig[:, :H]
        f_g = sig[:, H:]
        g_g = ag.tanh(gates[:, 2 * H:3 * H])
        o_g = ag.sigmoid(gates[:, 3 * H:])
        c = f_g * c + i_g * g_g
        h = o_g * ag.tanh(c)
        outs[t] = h
    return ag.stack(outs, axis=1)


def birnn_forward(params, x, prefix="fusion_rnn", head="output_head"):
    """Bidirectional LSTM over (B, T, D) followed by the linear output head.

    Returns (B, T, out) where out is the head width (147 for the pose model).
    """
    x = ag.as_tensor(x)
    if x.ndim == 2:
        x = ag.reshape(x, (1,) + x.shape)
    if x.shape[1] < 1:
        raise ShapeMismatch("sequence must have at least one frame")
    fwd = lstm_direction(params, f"{prefix}.fwd", x)
    bwd = lstm_direction(params, f"{prefix}.bwd", x, reverse=True)
    both = ag.concat([fwd, bwd], axis=-1)
    B, T, H2 = both.shape
    out = linear(params, head, ag.reshape(both, (B * T, H2)))
    return ag.reshape(out, (B, T, out.shape[-1]))
