"""Neural-network kernels with hand-written gradients.

All spatial kernels use channel-last layout (batch, height, width, channels)
and "same" padding follows the ceil(in/stride) output-size convention with the
extra pad row/column placed after the data when the total is odd.

Each kernel takes a :class:`LayerParams` bundle so that callers hold a single
handle per layer; gradients are attached as closures on the returned tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .tensor import Tensor

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99
PROB_FLOOR = 1e-12  # cross-entropy clamp


class LayerKind(Enum):
    CONV = "conv"
    DEPTHWISE_CONV = "depthwise_conv"
    DENSE = "dense"
    BATCH_NORM = "batch_norm"


@dataclass
class BnStats:
    """Running statistics and affine pair for a batch-norm layer.

    ``mean``/``variance`` are plain arrays updated in place during training;
    ``scale``/``shift`` are learnable tensors.
    """

    mean: np.ndarray
    variance: np.ndarray
    scale: Tensor
    shift: Tensor


@dataclass
class LayerParams:
    """Parameter bundle for one layer.

    For conv/depthwise/dense layers ``weights`` is the kernel and ``bias`` is
    optional.  For batch norm ``weights``/``bias`` alias the scale/shift inside
    ``bn_stats``.  ``trainable`` gates gradient flow into the bundle; a frozen
    batch-norm layer also keeps its running statistics untouched.
    """

    kind: LayerKind
    weights: Tensor
    bias: Optional[Tensor] = None
    bn_stats: Optional[BnStats] = None
    trainable: bool = True

    def __post_init__(self):
        if self.kind == LayerKind.CONV:
            if self.weights.ndim != 4:
                raise ValueError(
                    f"conv weights must be rank 4 (kh, kw, c_in, c_out); got rank {self.weights.ndim}"
                )
        elif self.kind == LayerKind.DEPTHWISE_CONV:
            if self.weights.ndim != 4 or self.weights.shape[3] != 1:
                raise ValueError(
                    "depthwise weights must have shape (k, k, channels, 1); "
                    f"got {self.weights.shape}"
                )
        elif self.kind == LayerKind.DENSE:
            if self.weights.ndim != 2:
                raise ValueError(
                    f"dense weights must be rank 2 (f_in, f_out); got rank {self.weights.ndim}"
                )
        elif self.kind == LayerKind.BATCH_NORM:
            if self.bn_stats is None:
                raise ValueError("batch-norm layer requires bn_stats")
            c = self.bn_stats.scale.size
            for name, arr in (
                ("mean", self.bn_stats.mean),
                ("variance", self.bn_stats.variance),
                ("shift", self.bn_stats.shift.data),
            ):
                if arr.shape != (c,):
                    raise ValueError(
                        f"batch-norm {name} must have shape ({c},); got {arr.shape}"
                    )

    @classmethod
    def for_conv(cls, weights: Tensor, bias: Tensor | None = None, trainable: bool = True):
        return cls(LayerKind.CONV, weights, bias, trainable=trainable)

    @classmethod
    def for_depthwise(cls, weights: Tensor, trainable: bool = True):
        return cls(LayerKind.DEPTHWISE_CONV, weights, trainable=trainable)

    @classmethod
    def for_dense(cls, weights: Tensor, bias: Tensor | None = None, trainable: bool = True):
        return cls(LayerKind.DENSE, weights, bias, trainable=trainable)

    @classmethod
    def for_batch_norm(
        cls,
        mean: np.ndarray,
        variance: np.ndarray,
        scale: Tensor,
        shift: Tensor,
        trainable: bool = True,
    ):
        stats = BnStats(mean=mean, variance=variance, scale=scale, shift=shift)
        return cls(LayerKind.BATCH_NORM, scale, shift, bn_stats=stats, trainable=trainable)


def _wants(t: Tensor, trainable: bool = True) -> bool:
    """Whether a gradient must be computed for ``t``."""
    return trainable and (t.requires_grad or bool(t._prev))


def _same_pad(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)  # ceil division
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return before, total - before


def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: str):
    if padding == "same":
        pt, pb = _same_pad(h, kh, stride)
        pl, pr = _same_pad(w, kw, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
        if h < kh or w < kw:
            raise ValueError(
                f"valid padding needs input >= kernel; got spatial ({h}, {w}) vs kernel ({kh}, {kw})"
            )
    else:
        raise ValueError(f"padding must be 'same' or 'valid'; got {padding!r}")
    oh = (h + pt + pb - kh) // stride + 1
    ow = (w + pl + pr - kw) // stride + 1
    return (pt, pb, pl, pr), oh, ow


def _extract_patches(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int):
    """Gather (b, oh, ow, kh, kw, c) sliding windows from a padded input."""
    b, _, _, c = xp.shape
    patches = np.empty((b, oh, ow, kh, kw, c), dtype=xp.dtype)
    for ky in range(kh):
        for kx in range(kw):
            patches[:, :, :, ky, kx, :] = xp[
                :, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride, :
            ]
    return patches


def _scatter_patches(dpatches: np.ndarray, xp_shape, kh: int, kw: int, stride: int):
    """Inverse of :func:`_extract_patches`: accumulate window grads into the padded input."""
    dxp = np.zeros(xp_shape, dtype=dpatches.dtype)
    oh, ow = dpatches.shape[1], dpatches.shape[2]
    for ky in range(kh):
        for kx in range(kw):
            dxp[:, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride, :] += dpatches[
                :, :, :, ky, kx, :
            ]
    return dxp


def conv2d(x: Tensor, params: LayerParams, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D convolution, channel-last, weights (kh, kw, c_in, c_out)."""
    if params.kind != LayerKind.CONV:
        raise ValueError(f"conv2d requires CONV params; got {params.kind}")
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be rank 4 (b, h, w, c); got rank {x.ndim}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1; got {stride}")
    w = params.weights
    kh, kw, cin, cout = w.shape
    b, h, wid, xc = x.shape
    if xc != cin:
        raise ValueError(f"conv2d channel mismatch: input has {xc} channels, weights expect {cin}")

    (pt, pb, pl, pr), oh, ow = _conv_geometry(h, wid, kh, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt + pb + pl + pr else x.data
    patches = _extract_patches(xp, kh, kw, stride, oh, ow)
    flat = patches.reshape(b * oh * ow, kh * kw * cin)
    out_data = flat @ w.data.reshape(kh * kw * cin, cout)
    out_data = out_data.reshape(b, oh, ow, cout)
    if params.bias is not None:
        out_data = out_data + params.bias.data

    prev = [x, w] + ([params.bias] if params.bias is not None else [])
    out = Tensor(out_data, _prev=prev, _op="conv2d")

    def _backward():
        dy = out.grad
        dy_flat = dy.reshape(b * oh * ow, cout)
        if params.bias is not None and _wants(params.bias, params.trainable):
            params.bias.accumulate_grad(dy.sum(axis=(0, 1, 2)))
        if _wants(w, params.trainable):
            dw = flat.T @ dy_flat
            w.accumulate_grad(dw.reshape(kh, kw, cin, cout))
        if _wants(x):
            dpatches = (dy_flat @ w.data.reshape(kh * kw * cin, cout).T).reshape(
                b, oh, ow, kh, kw, cin
            )
            dxp = _scatter_patches(dpatches, xp.shape, kh, kw, stride)
            if pt + pb + pl + pr:
                dxp = dxp[:, pt : pt + h, pl : pl + wid, :]
            x.accumulate_grad(dxp)

    out._backward = _backward
    return out


def depthwise_conv2d(
    x: Tensor, params: LayerParams, stride: int = 1, padding: str = "same"
) -> Tensor:
    """Depthwise 2-D convolution: one (k, k) filter per input channel."""
    if params.kind != LayerKind.DEPTHWISE_CONV:
        raise ValueError(f"depthwise_conv2d requires DEPTHWISE_CONV params; got {params.kind}")
    if x.ndim != 4:
        raise ValueError(f"depthwise input must be rank 4 (b, h, w, c); got rank {x.ndim}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1; got {stride}")
    w = params.weights
    kh, kw, c, _ = w.shape
    b, h, wid, xc = x.shape
    if xc != c:
        raise ValueError(f"depthwise channel mismatch: input has {xc} channels, weights expect {c}")

    (pt, pb, pl, pr), oh, ow = _conv_geometry(h, wid, kh, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt + pb + pl + pr else x.data
    patches = _extract_patches(xp, kh, kw, stride, oh, ow)
    kernel = w.data[:, :, :, 0]
    out_data = np.einsum("bijklc,klc->bijc", patches, kernel, optimize=True)

    out = Tensor(out_data, _prev=(x, w), _op="depthwise_conv2d")

    def _backward():
        dy = out.grad
        if _wants(w, params.trainable):
            dw = np.einsum("bijklc,bijc->klc", patches, dy, optimize=True)
            w.accumulate_grad(dw[:, :, :, None])
        if _wants(x):
            dpatches = dy[:, :, :, None, None, :] * kernel[None, None, None, :, :, :]
            dxp = _scatter_patches(dpatches, xp.shape, kh, kw, stride)
            if pt + pb + pl + pr:
                dxp = dxp[:, pt : pt + h, pl : pl + wid, :]
            x.accumulate_grad(dxp)

    out._backward = _backward
    return out


def dense(x: Tensor, params: LayerParams) -> Tensor:
    """Fully connected layer: (b, f_in) @ (f_in, f_out) + bias."""
    if params.kind != LayerKind.DENSE:
        raise ValueError(f"dense requires DENSE params; got {params.kind}")
    if x.ndim != 2:
        raise ValueError(f"dense input must be rank 2 (b, f_in); got rank {x.ndim}")
    w = params.weights
    if x.shape[1] != w.shape[0]:
        raise ValueError(
            f"dense feature mismatch: input has {x.shape[1]} features, weights expect {w.shape[0]}"
        )
    out_data = x.data @ w.data
    if params.bias is not None:
        out_data = out_data + params.bias.data
    prev = [x, w] + ([params.bias] if params.bias is not None else [])
    out = Tensor(out_data, _prev=prev, _op="dense")

    def _backward():
        dy = out.grad
        if params.bias is not None and _wants(params.bias, params.trainable):
            params.bias.accumulate_grad(dy.sum(axis=0))
        if _wants(w, params.trainable):
            w.accumulate_grad(x.data.T @ dy)
        if _wants(x):
            x.accumulate_grad(dy @ w.data.T)

    out._backward = _backward
    return out


def batch_norm(
    x: Tensor,
    params: LayerParams,
    mode: str = "infer",
    epsilon: float = BN_EPSILON,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Batch normalization over all axes except the last (channel) axis.

    Train mode normalizes with biased batch statistics and folds them into the
    running mean/variance in place.  A frozen layer (``params.trainable`` is
    false) always uses its stored statistics and never updates them, so whole
    layers stay bit-identical under training.
    """
    if params.kind != LayerKind.BATCH_NORM:
        raise ValueError(f"batch_norm requires BATCH_NORM params; got {params.kind}")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer'; got {mode!r}")
    stats = params.bn_stats
    c = stats.scale.size
    if x.shape[-1] != c:
        raise ValueError(
            f"batch_norm channel mismatch: input has {x.shape[-1]} channels, layer has {c}"
        )
    axes = tuple(range(x.ndim - 1))
    scale, shift = stats.scale, stats.shift
    use_batch_stats = mode == "train" and params.trainable

    if use_batch_stats:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)  # biased, matches the running-stat convention
        stats.mean *= momentum
        stats.mean += (1.0 - momentum) * mu
        stats.variance *= momentum
        stats.variance += (1.0 - momentum) * var
    else:
        mu = stats.mean
        var = stats.variance

    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.data - mu) * inv_std
    out_data = scale.data * xhat + shift.data
    out = Tensor(out_data, _prev=(x, scale, shift), _op="batch_norm")

    m = int(np.prod([x.shape[a] for a in axes]))

    def _backward():
        dy = out.grad
        if _wants(shift, params.trainable):
            shift.accumulate_grad(dy.sum(axis=axes))
        if _wants(scale, params.trainable):
            scale.accumulate_grad((dy * xhat).sum(axis=axes))
        if _wants(x):
            if use_batch_stats:
                dxhat = dy * scale.data
                term = (
                    dxhat
                    - dxhat.mean(axis=axes)
                    - xhat * (dxhat * xhat).mean(axis=axes)
                )
                x.accumulate_grad(term * inv_std)
            else:
                x.accumulate_grad(dy * scale.data * inv_std)

    out._backward = _backward
    return out


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    out = Tensor(s, _prev=(x,), _op="sigmoid")

    def _backward():
        if _wants(x):
            x.accumulate_grad(out.grad * s * (1.0 - s))

    out._backward = _backward
    return out


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x); gradient is sigmoid(x) * (1 + x * (1 - sigmoid(x)))."""
    s = _stable_sigmoid(x.data)
    out = Tensor(x.data * s, _prev=(x,), _op="swish")

    def _backward():
        if _wants(x):
            x.accumulate_grad(out.grad * s * (1.0 + x.data * (1.0 - s)))

    out._backward = _backward
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), _prev=(x,), _op="relu")

    def _backward():
        if _wants(x):
            x.accumulate_grad(out.grad * (x.data > 0))

    out._backward = _backward
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ValueError("softmax requires a non-empty last axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, _prev=(x,), _op="softmax")

    def _backward():
        if _wants(x):
            dy = out.grad
            dot = (dy * p).sum(axis=-1, keepdims=True)
            x.accumulate_grad(p * (dy - dot))

    out._backward = _backward
    return out


def dropout(x: Tensor, rate: float, mode: str = "infer", rng_seed: int | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, rescale survivors.

    Inference mode is the identity.  Train mode requires a seed so runs are
    reproducible.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must satisfy 0 <= rate < 1; got {rate}")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer'; got {mode!r}")
    if mode == "infer" or rate == 0.0:
        return x
    if rng_seed is None:
        raise ValueError("dropout in train mode requires rng_seed")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = 1.0 / (1.0 - rate)
    out = Tensor(x.data * keep * scale, _prev=(x,), _op="dropout")

    def _backward():
        if _wants(x):
            x.accumulate_grad(out.grad * keep * scale)

    out._backward = _backward
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(b, h, w, c) -> (b, c) spatial mean."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool input must be rank 4; got rank {x.ndim}")
    b, h, w, c = x.shape
    out = Tensor(x.data.mean(axis=(1, 2)), _prev=(x,), _op="global_avg_pool")

    def _backward():
        if _wants(x):
            g = out.grad[:, None, None, :] / (h * w)
            x.accumulate_grad(np.broadcast_to(g, x.shape).astype(x.dtype))

    out._backward = _backward
    return out


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (skip connection)."""
    if a.shape != b.shape:
        raise ValueError(f"residual_add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, _prev=(a, b), _op="residual_add")

    def _backward():
        if _wants(a):
            a.accumulate_grad(out.grad)
        if _wants(b):
            b.accumulate_grad(out.grad)

    out._backward = _backward
    return out


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale feature maps (b, h, w, c) by per-sample channel gates (b, c)."""
    if x.ndim != 4 or s.ndim != 2:
        raise ValueError(
            f"channel_scale expects maps rank 4 and gates rank 2; got {x.ndim} and {s.ndim}"
        )
    if x.shape[0] != s.shape[0] or x.shape[3] != s.shape[1]:
        raise ValueError(
            f"channel_scale mismatch: maps {x.shape} vs gates {s.shape}"
        )
    gate = s.data[:, None, None, :]
    out = Tensor(x.data * gate, _prev=(x, s), _op="channel_scale")

    def _backward():
        dy = out.grad
        if _wants(x):
            x.accumulate_grad(dy * gate)
        if _wants(s):
            s.accumulate_grad((dy * x.data).sum(axis=(1, 2)))

    out._backward = _backward
    return out


def reduce_sum(x: Tensor) -> Tensor:
    """Sum of all elements (scalar output)."""
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype), _prev=(x,), _op="reduce_sum")

    def _backward():
        if _wants(x):
            x.accumulate_grad(np.broadcast_to(out.grad, x.shape).astype(x.dtype))

    out._backward = _backward
    return out


def reduce_mean(x: Tensor) -> Tensor:
    """Mean of all elements (scalar output)."""
    out = Tensor(np.asarray(x.data.mean(), dtype=x.dtype), _prev=(x,), _op="reduce_mean")

    def _backward():
        if _wants(x):
            g = out.grad / x.size
            x.accumulate_grad(np.broadcast_to(g, x.shape).astype(x.dtype))

    out._backward = _backward
    return out


def cross_entropy(probs: Tensor, true_label) -> Tensor:
    """Mean negative log-likelihood of the true classes.

    ``probs`` is (b, n) rows of class probabilities (softmax output);
    ``true_label`` is an int or an int array of shape (b,).  Probabilities are
    clamped at 1e-12 before the log; clamped entries get zero gradient.
    """
    if probs.ndim != 2:
        raise ValueError(f"cross_entropy expects (batch, classes) probs; got rank {probs.ndim}")
    labels = np.atleast_1d(np.asarray(true_label, dtype=np.int64))
    b, n = probs.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} does not match batch size {b}")
    if labels.min() < 0 or labels.max() >= n:
        raise ValueError(f"labels must lie in [0, {n - 1}]")
    rows = np.arange(b)
    p_true = probs.data[rows, labels]
    clamped = np.maximum(p_true, PROB_FLOOR)
    loss = -np.log(clamped).mean()
    out = Tensor(np.asarray(loss, dtype=probs.dtype), _prev=(probs,), _op="cross_entropy")

    def _backward():
        if _wants(probs):
            dp = np.zeros_like(probs.data)
            live = p_true >= PROB_FLOOR  # no gradient through the clamp
            dp[rows[live], labels[live]] = -1.0 / (clamped[live] * b)
            probs.accumulate_grad(out.grad * dp)

    out._backward = _backward
    return out
