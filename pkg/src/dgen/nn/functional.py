"""Neural-net ops over the autodiff Tensor: conv, norm, attention, resize.

All image ops use NCHW row-major layout.  The tape, shape contracts and
gradient formulas live here; the convolution inner kernels are delegated
to torch's CPU primitives (pure numpy im2col was memory-bound on small
hosts), with the explicit forward/input/weight kernels wired into this
module's own backward closure.
"""

import math
import os

import numpy as np
import torch

from ..errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor, make_op, tsum

# Two independent thread pools (BLAS + torch) spin-wait against each other
# on small hosts and can slow every op by an order of magnitude.  Keep BLAS
# single-threaded (our numpy GEMMs are small) and give torch half the cores.
try:
    import threadpoolctl

    threadpoolctl.threadpool_limits(limits=1, user_api="blas")
except ImportError:  # pragma: no cover
    pass
torch.set_num_threads(max(1, (os.cpu_count() or 2) // 2))


def _to_torch(arr: np.ndarray) -> torch.Tensor:
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return torch.from_numpy(arr)

# Log of (query_len, key_len) per attention call; the model test-probes
# this to assert no attention runs at the outermost resolution.
_attention_log: list = []


def reset_attention_log():
    _attention_log.clear()


def attention_log():
    return list(_attention_log)


# -- convolution ------------------------------------------------------------

def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation, NCHW input against OIHW weight."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    if stride < 1:
        raise ConfigError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigError(f"conv2d padding must be >= 0, got {padding}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if c != ci:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {o} output channels")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d output would be empty: input {x.shape}, kernel {weight.shape}, "
                         f"stride {stride}, padding {padding}")

    xt = _to_torch(x.data)
    wt = _to_torch(weight.data)
    with torch.no_grad():
        y = torch.conv2d(xt, wt, stride=stride, padding=padding).numpy()
    if bias is not None:
        y += bias.data[None, :, None, None]

    def backward(g):
        gt = _to_torch(g)
        with torch.no_grad():
            if x.requires_grad:
                gx = torch.nn.grad.conv2d_input((n, c, h, w), wt, gt, stride=stride, padding=padding)
                x._accumulate(gx.numpy())
            if weight.requires_grad:
                gw = torch.nn.grad.conv2d_weight(xt, weight.shape, gt, stride=stride, padding=padding)
                weight._accumulate(gw.numpy())
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(y, parents, backward, "conv2d")


# -- normalization ----------------------------------------------------------

def group_norm(x, groups: int, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"group_norm expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if groups < 1 or c % groups != 0:
        raise ConfigError(f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm affine shapes {gamma.shape}/{beta.shape} do not match {c} channels")

    xr = x.data.reshape(n, groups, -1)
    mu = xr.mean(axis=-1, keepdims=True)
    var = xr.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat_r = (xr - mu) * inv
    xhat = xhat_r.reshape(n, c, h, w)
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxh = (g * gamma.data[None, :, None, None]).reshape(n, groups, -1)
            m1 = gxh.mean(axis=-1, keepdims=True)
            m2 = (gxh * xhat_r).mean(axis=-1, keepdims=True)
            gx = inv * (gxh - m1 - xhat_r * m2)
            x._accumulate(gx.reshape(n, c, h, w))

    return make_op(y, (x, gamma, beta), backward, "group_norm")


# -- dense / activations ------------------------------------------------------

def linear(x, weight, bias=None) -> Tensor:
    """x (..., fin) @ weight (fout, fin)^T + bias."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    fout, fin = weight.shape
    if x.shape[-1] != fin:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data)
        if weight.requires_grad:
            gf = g.reshape(-1, fout)
            xf = x.data.reshape(-1, fin)
            weight._accumulate(gf.T @ xf)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.reshape(-1, fout).sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(y, parents, backward, "linear")


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    y = x.data * s

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (s + x.data * s * (1.0 - s)))

    return make_op(y, (x,), backward, "silu")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return make_op(y, (x,), backward, "softmax")


def attention(q, k, v) -> Tensor:
    """Scaled dot-product attention over the trailing (tokens, dim) axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if k.shape[-1] != d:
        raise ShapeError(f"attention: query dim {q.shape} vs key dim {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: key tokens {k.shape} vs value tokens {v.shape}")
    _attention_log.append((q.shape[-2], k.shape[-2]))
    scores = (q @ k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / math.sqrt(d))
    return softmax(scores, axis=-1) @ v


# -- resampling ----------------------------------------------------------------

def _interp_matrix(n_in: int, n_out: int, mode: str, dtype) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    if mode == "nearest":
        src = np.minimum((rows * n_in) // n_out, n_in - 1)
        m[rows, src] = 1.0
    elif mode == "bilinear":
        # align_corners=False convention; degenerates to identity at equal sizes
        center = np.clip((rows + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1.0)
        i0 = np.floor(center).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        w1 = center - i0
        np.add.at(m, (rows, i0), 1.0 - w1)
        np.add.at(m, (rows, i1), w1)
    else:
        raise ConfigError(f"interpolate mode must be 'nearest' or 'bilinear', got {mode!r}")
    return m


def interpolate(x, size, mode: str = "bilinear") -> Tensor:
    """Resize NCHW spatial dims to `size` (h, w)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"interpolate expects NCHW input, got {x.shape}")
    try:
        th, tw = int(size[0]), int(size[1])
    except (TypeError, IndexError):
        raise ShapeError(f"interpolate target size must be (h, w), got {size!r}")
    if th <= 0 or tw <= 0:
        raise ShapeError(f"interpolate target size must be positive, got {(th, tw)}")
    n, c, h, w = x.shape
    mh = _interp_matrix(h, th, mode, x.dtype)
    mw = _interp_matrix(w, tw, mode, x.dtype)

    def apply(arr, a, b):
        t = arr @ b.T                                   # (n, c, h, tw)
        return np.tensordot(t, a, axes=(2, 1)).transpose(0, 1, 3, 2)

    y = apply(x.data, mh, mw)

    def backward(g):
        if x.requires_grad:
            x._accumulate(apply(g, mh.T, mw.T))

    return make_op(y, (x,), backward, "interpolate")


def mse(pred, target) -> Tensor:
    """Mean squared error over all elements (scalar Tensor)."""
    pred = as_tensor(pred)
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return tsum(diff * diff) * (1.0 / pred.size)
