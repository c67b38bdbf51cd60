"""
Differentiable primitives.

Every primitive computes its forward result with numpy and, when a tape is
active and an input requires a gradient, records a backward rule through
:func:`record_op`. Outputs keep the dtype of the inputs.
"""
import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import log_softmax as _log_softmax

from spatiospatial.tensor.core import Tensor, as_tensor, record_op
from spatiospatial.utils.errors import (
    ContractError,
    DegenerateStatisticsError,
    InvalidGeometryError,
    NumericError,
    ParameterError,
    ShapeError,
)

logger = logging.getLogger(__name__)


def _triple(value):
    if isinstance(value, (int, np.integer)):
        return (int(value),) * 3
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ContractError(f"expected three values (depth, height, width), got {value}")
    return value


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def conv_output_extent(n, k, s, p):
    """
    Output extent of a zero-padded strided window: floor((n + 2p - k) / s) + 1.
    Raises:
        InvalidGeometryError: if the result is smaller than one.
    """
    extent = (n + 2 * p - k) // s + 1
    if extent < 1:
        raise InvalidGeometryError(
            f"output extent {extent} < 1 for input {n}, kernel {k}, stride {s}, padding {p}")
    return extent


@dataclass(frozen=True)
class Conv3dParams:
    """Geometry of a 3D convolution. Zero padding only."""
    kernel: tuple
    stride: tuple = (1, 1, 1)
    padding: tuple = (0, 0, 0)
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _triple(self.kernel))
        object.__setattr__(self, "stride", _triple(self.stride))
        object.__setattr__(self, "padding", _triple(self.padding))
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ContractError(f"invalid convolution geometry {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ContractError(f"channel counts must be positive, got {self.in_channels}->{self.out_channels}")

    @classmethod
    def from_weight(cls, weight, stride=1, padding=0):
        cout, cin, kd, kh, kw = weight.shape
        return cls(kernel=(kd, kh, kw), stride=stride, padding=padding,
                   in_channels=cin, out_channels=cout)

    def output_extents(self, spatial):
        return tuple(conv_output_extent(n, k, s, p)
                     for n, k, s, p in zip(spatial, self.kernel, self.stride, self.padding))


# --- elementwise / structural -------------------------------------------------

def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    out = a.data + b.data

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record_op("add", (a, b), out.astype(a.dtype, copy=False), backward_fn)


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    out = a.data * b.data

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record_op("mul", (a, b), out.astype(a.dtype, copy=False), backward_fn)


def sum(x):
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward_fn(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return record_op("sum", (x,), out, backward_fn)


def mean(x):
    if x.size == 0:
        raise ContractError("mean of an empty tensor")
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    scale = 1.0 / x.size

    def backward_fn(g):
        return (np.full(x.shape, g * scale, dtype=x.dtype),)

    return record_op("mean", (x,), out, backward_fn)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}: element count must be preserved") from exc

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return record_op("reshape", (x,), out, backward_fn)


def flatten(x):
    """(N, ...) -> (N, F)."""
    return reshape(x, (x.shape[0], -1))


def pick(x, index):
    """
    Select one entry per row: out[i] = x[i, index[i]].
    Args:
        x (Tensor): (N, C).
        index (array-like): N integer class indices in [0, C).
    """
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"pick needs (N, C) input and N indices, got {x.shape} and {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[1]):
        raise ContractError(f"index out of range [0, {x.shape[1]}): {index.tolist()}")
    rows = np.arange(x.shape[0])
    out = x.data[rows, index]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[rows, index] = g
        return (gx,)

    return record_op("pick", (x,), out, backward_fn)


# --- network primitives -------------------------------------------------------

def _check_conv_inputs(x, weight, bias):
    if x.ndim != 5:
        raise ShapeError(f"conv3d input must be (N, C, D, H, W), got {x.shape}")
    if weight.ndim != 5:
        raise ShapeError(f"conv3d weight must be (Cout, Cin, kd, kh, kw), got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels but weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias must have shape ({weight.shape[0]},), got {bias.shape}")
    if x.dtype != weight.dtype:
        raise ContractError(f"dtype mismatch: input {x.dtype}, weight {weight.dtype}")


def _resolve_params(weight, params, stride, padding):
    if params is None:
        return Conv3dParams.from_weight(weight, stride, padding)
    if (params.out_channels, params.in_channels) + params.kernel != weight.shape:
        raise ShapeError(f"weight shape {weight.shape} does not match {params}")
    return params


def _pad(x, padding):
    pd, ph, pw = padding
    if pd == ph == pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))


def conv3d(x, weight, bias=None, params=None, stride=1, padding=0):
    """
    3D cross-correlation (no kernel flip) with zero padding.

    Windows are gathered with ``as_strided`` and contracted against the weight
    in one ``tensordot``; the backward pass scatters column gradients back one
    kernel offset at a time.
    Args:
        x (Tensor): (N, Cin, D, H, W).
        weight (Tensor): (Cout, Cin, kd, kh, kw).
        bias (Tensor): Optional (Cout,).
        params (Conv3dParams): Geometry; built from ``weight``, ``stride`` and
            ``padding`` when omitted.
    Returns:
        Tensor: (N, Cout, D', H', W').
    """
    _check_conv_inputs(x, weight, bias)
    params = _resolve_params(weight, params, stride, padding)
    N, C, D, H, W = x.shape
    Do, Ho, Wo = params.output_extents((D, H, W))
    kd, kh, kw = params.kernel
    sd, sh, sw = params.stride

    xp = _pad(x.data, params.padding)
    sN, sC, sD, sH, sW = xp.strides
    windows = as_strided(xp, shape=(N, C, Do, Ho, Wo, kd, kh, kw),
                         strides=(sN, sC, sd * sD, sh * sH, sw * sW, sD, sH, sW),
                         writeable=False)
    out = np.tensordot(windows, weight.data, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    out = np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1, 1)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(g):
        gx = gw = None
        if weight.requires_grad:
            gw = np.tensordot(g, windows, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        if x.requires_grad:
            cols = np.tensordot(g, weight.data, axes=([1], [0]))  # N, Do, Ho, Wo, C, kd, kh, kw
            cols = cols.transpose(0, 4, 5, 6, 7, 1, 2, 3)
            gxp = np.zeros_like(xp)
            for i in range(kd):
                for j in range(kh):
                    for k in range(kw):
                        gxp[:, :,
                            i:i + sd * (Do - 1) + 1:sd,
                            j:j + sh * (Ho - 1) + 1:sh,
                            k:k + sw * (Wo - 1) + 1:sw] += cols[:, :, i, j, k]
            pd, ph, pw = params.padding
            gx = gxp[:, :, pd:pd + D, ph:ph + H, pw:pw + W]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3, 4))

    return record_op("conv3d", inputs, out, backward_fn)


def conv3d_reference(x, weight, bias=None, params=None, stride=1, padding=0):
    """
    Direct-loop convolution over every output position. Forward only; the
    reference that :func:`conv3d` must match.
    Returns:
        np.ndarray: (N, Cout, D', H', W').
    """
    _check_conv_inputs(x, weight, bias)
    params = _resolve_params(weight, params, stride, padding)
    N, C, D, H, W = x.shape
    Do, Ho, Wo = params.output_extents((D, H, W))
    kd, kh, kw = params.kernel
    sd, sh, sw = params.stride
    xp = _pad(x.data, params.padding)
    w = weight.data
    out = np.zeros((N, params.out_channels, Do, Ho, Wo), dtype=x.dtype)
    for n in range(N):
        for co in range(params.out_channels):
            for od in range(Do):
                for oh in range(Ho):
                    for ow in range(Wo):
                        patch = xp[n, :, od * sd:od * sd + kd, oh * sh:oh * sh + kh, ow * sw:ow * sw + kw]
                        acc = np.sum(patch * w[co])
                        if bias is not None:
                            acc += bias.data[co]
                        out[n, co, od, oh, ow] = acc
    return out


def batchnorm3d(x, gamma, beta, running_mean, running_var, momentum=0.1, eps=1e-5, training=True):
    """
    Per-channel batch normalisation over (N, D, H, W).

    Training mode normalises with the biased batch variance and updates the
    running statistics in place: new = (1 - momentum) * old + momentum * batch,
    using the unbiased variance. Eval mode normalises with the running
    statistics.
    Args:
        x (Tensor): (N, C, D, H, W).
        gamma, beta (Tensor): (C,) affine parameters.
        running_mean, running_var (Tensor): (C,) buffers.
    Returns:
        Tensor: Normalised input.
    """
    if x.ndim != 5:
        raise ShapeError(f"batchnorm3d input must be (N, C, D, H, W), got {x.shape}")
    C = x.shape[1]
    for label, t in (("gamma", gamma), ("beta", beta),
                     ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (C,):
            raise ShapeError(f"{label} must have shape ({C},), got {t.shape}")
    axes = (0, 2, 3, 4)
    bshape = (1, C, 1, 1, 1)
    M = x.size // C if C else 0

    if training:
        if M < 2:
            raise DegenerateStatisticsError(
                f"batch statistics need at least 2 elements per channel, got {M} for input {x.shape}")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        with np.errstate(all="ignore"):
            running_mean.data *= (1.0 - momentum)
            running_mean.data += momentum * mu
            running_var.data *= (1.0 - momentum)
            running_var.data += momentum * var * (M / (M - 1))
    else:
        mu = running_mean.data
        var = running_var.data
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = (gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)).astype(x.dtype, copy=False)

    def backward_fn(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (inv_std.reshape(bshape) / M) * (
                M * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return record_op("batchnorm3d", (x, gamma, beta), out, backward_fn)


def relu(x):
    """Elementwise max(x, 0); the gradient at exactly 0 is 0."""
    positive = x.data > 0
    out = np.where(positive, x.data, 0).astype(x.dtype, copy=False)

    def backward_fn(g):
        return (g * positive,)

    return record_op("relu", (x,), out, backward_fn)


def adaptive_avg_pool_unit(x):
    """(N, C, D, H, W) -> (N, C, 1, 1, 1) by averaging every spatial position."""
    if x.ndim != 5:
        raise ShapeError(f"pooling input must be (N, C, D, H, W), got {x.shape}")
    positions = x.shape[2] * x.shape[3] * x.shape[4]
    if positions == 0:
        raise InvalidGeometryError(f"cannot pool an empty spatial extent {x.shape[2:]}")
    out = x.data.mean(axis=(2, 3, 4), keepdims=True)

    def backward_fn(g):
        return (np.broadcast_to(g / positions, x.shape).astype(x.dtype),)

    return record_op("adaptive_avg_pool", (x,), out, backward_fn)


def linear(x, weight, bias=None):
    """
    Affine map x @ weight.T + bias.
    Args:
        x (Tensor): (N, F).
        weight (Tensor): (K, F).
        bias (Tensor): Optional (K,).
    Returns:
        Tensor: (N, K).
    """
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear needs (N, F) input and (K, F) weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} features but weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias must have shape ({weight.shape[0]},), got {bias.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(g):
        grads = (g @ weight.data, g.T @ x.data)
        if bias is not None:
            grads += (g.sum(axis=0),)
        return grads

    return record_op("linear", inputs, out.astype(x.dtype, copy=False), backward_fn)


def dropout(x, p, training, rng):
    """
    Inverted dropout: zero each element with probability ``p`` and scale the
    survivors by 1/(1-p). Identity in eval mode or when p == 0.
    Args:
        x (Tensor): Input.
        p (float): Drop probability in [0, 1).
        training (bool): Mode flag.
        rng (np.random.Generator): Mask source.
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale
    out = x.data * mask

    def backward_fn(g):
        return (g * mask,)

    return record_op("dropout", (x,), out, backward_fn)


def log_softmax(x):
    """
    Max-subtracted log of softmax along the class axis.
    Args:
        x (Tensor): (N, C) logits, C >= 1, all finite.
    """
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"log_softmax needs (N, C) logits with C >= 1, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("log_softmax received non-finite logits")
    out = _log_softmax(x.data, axis=1).astype(x.dtype, copy=False)
    probs = np.exp(out)

    def backward_fn(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return record_op("log_softmax", (x,), out, backward_fn)


def softmax(x):
    """Row-wise softmax as a plain array (inference only)."""
    return np.exp(log_softmax(Tensor(x.data)).data)
