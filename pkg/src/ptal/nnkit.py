"""Minimal differentiable layers, Adam, and a finite-difference gradient check.

Every layer is a pair of functions: ``*_forward`` returns ``(out, cache)`` and
``*_backward(dout, cache)`` returns the gradient w.r.t. the input followed by
the gradients w.r.t. any parameters. Everything runs in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Parameter:
    """A named tensor with a gradient buffer of the same shape."""

    def __init__(self, name: str, values):
        self.name = name
        self.values = np.array(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.values.shape})"


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# conv1d


def conv1d_forward(x, kernel, bias=None):
    """Temporal convolution with zero same-padding.

    x: ``T x D_in``; kernel: ``k x D_in x D_out`` with odd ``k``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or kernel.ndim != 3:
        raise ValueError(f"conv1d expects x (T, D_in) and kernel (k, D_in, D_out); got {x.shape}, {kernel.shape}")
    k, d_in, d_out = kernel.shape
    if k % 2 != 1:
        raise ValueError(f"conv1d kernel size must be odd, got {k}")
    if x.shape[1] != d_in:
        raise ValueError(f"conv1d input has D_in={x.shape[1]} but kernel expects {d_in}")
    if bias is not None and bias.shape != (d_out,):
        raise ValueError(f"conv1d bias shape {bias.shape} != ({d_out},)")
    T = x.shape[0]
    pad = k // 2
    xp = np.pad(x, ((pad, pad), (0, 0)))
    # cols[t] = concat(xp[t], ..., xp[t + k - 1])
    cols = sliding_window_view(xp, k, axis=0).transpose(0, 2, 1).reshape(T, k * d_in)
    out = cols @ kernel.reshape(k * d_in, d_out)
    if bias is not None:
        out = out + bias
    return out, (cols, kernel, T, bias is not None)


def conv1d_backward(dout, cache):
    cols, kernel, T, has_bias = cache
    k, d_in, d_out = kernel.shape
    dkernel = (cols.T @ dout).reshape(k, d_in, d_out)
    dcols = (dout @ kernel.reshape(k * d_in, d_out).T).reshape(T, k, d_in)
    pad = k // 2
    dxp = np.zeros((T + 2 * pad, d_in))
    for j in range(k):
        dxp[j:j + T] += dcols[:, j, :]
    dx = dxp[pad:pad + T]
    dbias = dout.sum(axis=0) if has_bias else None
    return dx, dkernel, dbias


# ---------------------------------------------------------------------------
# dense and activations


def dense_forward(x, weight, bias=None):
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out, (x, weight, bias is not None)


def dense_backward(dout, cache):
    x, weight, has_bias = cache
    lead = dout.reshape(-1, dout.shape[-1])
    dweight = x.reshape(-1, x.shape[-1]).T @ lead
    dbias = lead.sum(axis=0) if has_bias else None
    return dout @ weight.T, dweight, dbias


def relu_forward(x):
    out = np.maximum(x, 0.0)
    return out, x > 0


def relu_backward(dout, cache):
    return dout * cache


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split branches so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_forward(x):
    out = sigmoid(x)
    return out, out


def sigmoid_backward(dout, cache):
    return dout * cache * (1.0 - cache)


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_forward(x, axis=-1):
    out = softmax(x, axis)
    return out, (out, axis)


def softmax_backward(dout, cache):
    out, axis = cache
    return out * (dout - np.sum(dout * out, axis=axis, keepdims=True))


def mean_pool_forward(x, axis=0):
    return x.mean(axis=axis), (x.shape, axis)


def mean_pool_backward(dout, cache):
    shape, axis = cache
    n = shape[axis]
    return np.broadcast_to(np.expand_dims(dout, axis) / n, shape).copy()


def l2_normalize_forward(x, axis=-1, eps=1e-12):
    norm = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    out = x / norm
    return out, (out, norm, axis)


def l2_normalize_backward(dout, cache):
    out, norm, axis = cache
    return (dout - out * np.sum(dout * out, axis=axis, keepdims=True)) / norm


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, Parameter], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``."""
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        m = state.m.setdefault(name, np.zeros_like(p.values))
        v = state.v.setdefault(name, np.zeros_like(p.values))
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        p.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# ---------------------------------------------------------------------------
# gradient check


def grad_check(loss_fn: Callable[[], Tuple[float, Dict[str, np.ndarray]]],
               params: Dict[str, np.ndarray], h: float = 1e-5,
               max_coords: int = 1000, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` must return ``(loss, grads)`` evaluated at the current
    contents of ``params`` (arrays that are perturbed in place and restored).
    Tensors with more than ``max_coords`` entries are probed on a seeded
    random subset of coordinates.
    """
    _, analytic = loss_fn()
    analytic = {k: np.array(v, dtype=np.float64, copy=True) for k, v in analytic.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        if flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        else:
            coords = np.arange(flat.size)
        g_an = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn()[0]
            flat[i] = orig - h
            f_minus = loss_fn()[0]
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(g_an[i] - g_fd) / max(1e-8, abs(g_an[i]) + abs(g_fd))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: Dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Write named tensors (and an optional JSON metadata blob) to an .npz file."""
    arrays = {f"param/{k}": np.asarray(v, dtype=np.float64) for k, v in params.items()}
    arrays["meta"] = np.array(json.dumps(meta or {}))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as data:
        params = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
        meta = json.loads(str(data["meta"])) if "meta" in data.files else {}
    if not params:
        raise ValueError(f"{path}: checkpoint contains no parameters")
    return params, meta
