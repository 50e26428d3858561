"""Minimal layer library: peephole LSTM, conv2d, dense, optimizers.

Parameters live in flat ``dict[str, np.ndarray]`` mappings; every backward
returns gradients keyed like the parameters it was given. All math is float64.
"""

from __future__ import annotations

import os
from typing import NamedTuple

import numpy as np

DEBUG = os.environ.get("VINET_DEBUG", "") not in ("", "0")
LEAKY_SLOPE = 0.1


class NonFiniteError(FloatingPointError):
    pass


def check_finite(name, arr):
    if DEBUG and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {name}")
    return arr


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activate(x, activation):
    if activation == "leaky_relu":
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    if activation == "identity":
        return x
    raise ValueError(f"unknown activation {activation!r}")


def activate_grad(pre, activation):
    if activation == "leaky_relu":
        return np.where(pre > 0, 1.0, LEAKY_SLOPE)
    return np.ones_like(pre)


# ---------------------------------------------------------------------------
# Peephole LSTM cell.
#
# Gate blocks are stacked in the order (i, f, z, o):
#   W_x: (4H, D)  W_h: (4H, H)  b: (4H,)  w_c: (3, H) peepholes (ci, cf, co)


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden):
        return cls(np.zeros(hidden), np.zeros(hidden))


def lstm_param_blocks(p):
    """Named views of the stacked parameters (W_xi, W_hi, W_ci, ..., b_o)."""
    hidden = p["W_h"].shape[1]
    out = {}
    for k, g in enumerate("ifco"):
        rows = slice(k * hidden, (k + 1) * hidden)
        out[f"W_x{g}"] = p["W_x"][rows]
        out[f"W_h{g}"] = p["W_h"][rows]
        out[f"b_{g}"] = p["b"][rows]
    for k, g in enumerate("ifo"):
        out[f"W_c{g}"] = p["w_c"][k]
    return out


def lstm_shapes(input_size, hidden):
    return {
        "W_x": (4 * hidden, input_size),
        "W_h": (4 * hidden, hidden),
        "w_c": (3, hidden),
        "b": (4 * hidden,),
    }


def lstm_cell_forward(x, prev: LstmState, p):
    x = np.asarray(x, dtype=float)
    hidden = p["W_h"].shape[1]
    if x.shape != (p["W_x"].shape[1],) or prev.h.shape != (hidden,) or prev.c.shape != (hidden,):
        raise ValueError(
            f"lstm shape mismatch: x {x.shape}, h {prev.h.shape}, c {prev.c.shape}, W_x {p['W_x'].shape}"
        )
    a = p["W_x"] @ x + p["W_h"] @ prev.h + p["b"]
    a_i, a_f, a_z, a_o = a[:hidden], a[hidden : 2 * hidden], a[2 * hidden : 3 * hidden], a[3 * hidden :]
    w_ci, w_cf, w_co = p["w_c"]
    i = sigmoid(a_i + w_ci * prev.c)
    f = sigmoid(a_f + w_cf * prev.c)
    z = np.tanh(a_z)
    c = f * prev.c + i * z
    # output gate peeks at the current cell
    o = sigmoid(a_o + w_co * c)
    tc = np.tanh(c)
    h = o * tc
    check_finite("lstm h", h)
    cache = (x, prev, i, f, z, c, o, tc, p)
    return LstmState(h, c), cache


def lstm_cell_backward(cache, grad_h, grad_c):
    """Return (grad_x, grad_prev LstmState, grads dict)."""
    x, prev, i, f, z, c, o, tc, p = cache
    w_ci, w_cf, w_co = p["w_c"]
    d_o = grad_h * tc
    da_o = d_o * o * (1.0 - o)
    dc = grad_c + grad_h * o * (1.0 - tc * tc) + da_o * w_co
    da_f = dc * prev.c * f * (1.0 - f)
    da_i = dc * z * i * (1.0 - i)
    da_z = dc * i * (1.0 - z * z)
    dc_prev = dc * f + da_i * w_ci + da_f * w_cf
    da = np.concatenate([da_i, da_f, da_z, da_o])
    grads = {
        "W_x": np.outer(da, x),
        "W_h": np.outer(da, prev.h),
        "w_c": np.stack([da_i * prev.c, da_f * prev.c, da_o * c]),
        "b": da,
    }
    grad_x = p["W_x"].T @ da
    dh_prev = p["W_h"].T @ da
    return grad_x, LstmState(dh_prev, dc_prev), grads


# ---------------------------------------------------------------------------
# Convolution (valid cross-correlation) + activation.


def conv_output_size(size, kernel, stride):
    return (size - kernel) // stride + 1


def conv2d_forward(x, w, b, stride=1, activation="leaky_relu"):
    """x: (m, H, W); w: (f, m, P, Q); b: (f,). Returns (y, cache)."""
    x = np.asarray(x, dtype=float)
    f, m, kp, kq = w.shape
    if x.ndim != 3 or x.shape[0] != m or x.shape[1] < kp or x.shape[2] < kq:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    win = np.lib.stride_tricks.sliding_window_view(x, (kp, kq), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, m * kp * kq)
    pre = (cols @ w.reshape(f, -1).T).T.reshape(f, ho, wo) + b[:, None, None]
    y = activate(pre, activation)
    check_finite("conv2d", y)
    return y, (x.shape, cols, pre, w, stride, activation)


def conv2d_backward(cache, grad_out):
    in_shape, cols, pre, w, stride, activation = cache
    f, m, kp, kq = w.shape
    _, ho, wo = pre.shape
    g = (grad_out * activate_grad(pre, activation)).reshape(f, ho * wo)
    grad_w = (g @ cols).reshape(w.shape)
    grad_b = g.sum(axis=1)
    gcols = (g.T @ w.reshape(f, -1)).reshape(ho, wo, m, kp, kq)
    grad_x = np.zeros(in_shape)
    for pi in range(kp):
        for qi in range(kq):
            grad_x[:, pi : pi + stride * ho : stride, qi : qi + stride * wo : stride] += gcols[
                :, :, :, pi, qi
            ].transpose(2, 0, 1)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# Dense / concat / flatten.


def dense_forward(x, w, b):
    x = np.asarray(x, dtype=float)
    if x.shape != (w.shape[1],):
        raise ValueError(f"dense shape mismatch: input {x.shape}, weight {w.shape}")
    return w @ x + b, (x, w)


def dense_backward(cache, grad_out):
    x, w = cache
    return w.T @ grad_out, np.outer(grad_out, x), grad_out.copy()


def concat_forward(parts):
    parts = [np.asarray(p, dtype=float).ravel() for p in parts]
    return np.concatenate(parts), [len(p) for p in parts]


def concat_backward(sizes, grad_out):
    return np.split(grad_out, np.cumsum(sizes)[:-1])


def flatten(x):
    return np.asarray(x).reshape(-1), np.shape(x)


def unflatten(grad, shape):
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Initialization.


def uniform_fan_in(rng, shape, fan_in, gain=1.0):
    """Uniform init with variance gain^2 / fan_in."""
    limit = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_lstm(rng, input_size, hidden, forget_bias=1.0):
    p = {
        "W_x": uniform_fan_in(rng, (4 * hidden, input_size), input_size),
        "W_h": uniform_fan_in(rng, (4 * hidden, hidden), hidden),
        "w_c": np.zeros((3, hidden)),
        "b": np.zeros(4 * hidden),
    }
    p["b"][hidden : 2 * hidden] = forget_bias
    return p


def init_conv(rng, out_maps, in_maps, kp, kq):
    fan_in = in_maps * kp * kq
    return {"w": uniform_fan_in(rng, (out_maps, in_maps, kp, kq), fan_in), "b": np.zeros(out_maps)}


def init_dense(rng, out_size, in_size, gain=1.0):
    return {"W": uniform_fan_in(rng, (out_size, in_size), in_size, gain), "b": np.zeros(out_size)}


# ---------------------------------------------------------------------------
# Optimizers. Both mutate ``params`` in place and nothing else but their state.


def _check_grads(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteError(f"gradient {name!r} has {bad} non-finite entries")


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads, max_norm):
    """Scale ``grads`` in place so their global norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def sgd_step(params, grads, lr):
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    _check_grads(grads)
    for name, g in grads.items():
        params[name] -= lr * g


class RMSProp:
    """s <- rho s + (1 - rho) g^2;  w <- w - lr g / sqrt(s + eps)."""

    def __init__(self, lr=1e-3, decay=0.9, eps=1e-8):
        if lr <= 0 or not 0.0 < decay < 1.0:
            raise ValueError("RMSProp needs lr > 0 and decay in (0, 1)")
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.mean_square: dict[str, np.ndarray] = {}

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        _check_grads(grads)
        for name, g in grads.items():
            s = self.mean_square.get(name)
            if s is None:
                s = self.mean_square[name] = np.zeros_like(g)
            s *= self.decay
            s += (1.0 - self.decay) * g * g
            params[name] -= lr * g / np.sqrt(s + self.eps)
