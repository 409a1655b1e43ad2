"""Dense multi-channel tensors and forward-only convolution semantics.

Convolution follows the flattened-filter definition
(K * X)_i = sum_q K_q X_{i-q+1} (1-indexed, zero padding outside the input),
so a stride-1 pass is extent-preserving and a single-entry filter of value
lam reproduces lam * X exactly.  Under stride s the stride-1 result is
subsampled at positions s, 2s, ... giving ceil(extent / s) outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .activations import ActivationSpec, apply as act_apply
from .errors import ShapeMismatchError

IDENTITY_RESIDUAL = "identity_residual"
GENERAL = "general"


def _prod(dims) -> int:
    out = 1
    for d in dims:
        out *= int(d)
    return out


@dataclass(frozen=True)
class ChannelTensor:
    """Value flowing through a network: channels x flattened spatial extent."""

    data: np.ndarray
    spatial_dims: tuple

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spatial_dims", tuple(int(d) for d in self.spatial_dims))
        if len(self.spatial_dims) not in (1, 2):
            raise ShapeMismatchError("spatial_dims must have 1 or 2 entries")
        if data.ndim != 2 or data.shape[1] != _prod(self.spatial_dims):
            raise ShapeMismatchError(
                "data must have shape (channels, %d), got %r"
                % (_prod(self.spatial_dims), data.shape)
            )
        if not np.all(np.isfinite(data)):
            raise ShapeMismatchError("tensor entries must be finite")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_spatial(cls, arr) -> "ChannelTensor":
        """Build from an array of shape (channels, *spatial_dims)."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim not in (2, 3):
            raise ShapeMismatchError("expected (channels, d) or (channels, d1, d2)")
        return cls(arr.reshape(arr.shape[0], -1), arr.shape[1:])

    def spatial(self) -> np.ndarray:
        return self.data.reshape((self.channels,) + self.spatial_dims)


@dataclass(frozen=True)
class Filter:
    """A single convolutional kernel, flattened, with its stride."""

    entries: np.ndarray
    kernel_shape: tuple
    stride: int = 1

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "kernel_shape", tuple(int(k) for k in self.kernel_shape))
        if self.stride < 1:
            raise ShapeMismatchError("stride must be >= 1")
        if entries.size != _prod(self.kernel_shape):
            raise ShapeMismatchError(
                "filter has %d entries but kernel shape %r"
                % (entries.size, self.kernel_shape)
            )


@dataclass(frozen=True)
class SkipOperator:
    """Skip connection from the output of layer `from_layer` into `to_layer`.

    Identity residuals carry implicit single-entry unit filters between
    matching channels and are not prunable; general skips store a full
    filter grid like a convolutional layer.
    """

    from_layer: int
    to_layer: int
    kind: str = IDENTITY_RESIDUAL
    weights: Optional[np.ndarray] = None  # (c_to, c_from, K) for general skips
    kernel_shape: tuple = (1,)
    stride: int = 1

    def __post_init__(self):
        if not 0 < self.from_layer < self.to_layer:
            raise ShapeMismatchError("skip needs 0 < from_layer < to_layer")
        object.__setattr__(self, "kernel_shape", tuple(int(k) for k in self.kernel_shape))
        if self.kind == IDENTITY_RESIDUAL:
            if self.weights is not None:
                raise ShapeMismatchError("identity residual skips carry no stored weights")
            if self.kernel_shape != (1,) or self.stride != 1:
                raise ShapeMismatchError("identity residual skips are 1x1 stride-1")
        elif self.kind == GENERAL:
            if self.weights is None:
                raise ShapeMismatchError("general skips need a weight grid")
            w = np.asarray(self.weights, dtype=np.float64)
            object.__setattr__(self, "weights", w)
            if w.ndim != 3 or w.shape[2] != _prod(self.kernel_shape):
                raise ShapeMismatchError("general skip weights must be (c_to, c_from, K)")
        else:
            raise ShapeMismatchError("unknown skip kind %r" % (self.kind,))


def _axis_gather(d: int, k: int, stride: int):
    """Per-offset index/validity pairs realizing the padded convolution sum."""
    d_out = -(-d // stride)
    gathers = []
    for q in range(k):
        idx = stride * np.arange(d_out) + (stride - 1 - q)
        valid = (idx >= 0) & (idx < d)
        gathers.append((np.clip(idx, 0, d - 1), valid))
    return d_out, gathers


def _windows(x: np.ndarray, kernel_shape, stride: int) -> np.ndarray:
    """Stack shifted views of one batched channel.

    x: (B, *spatial); returns (K, B, *out_spatial) with zero padding applied,
    so that the convolution is a matrix product with the flattened kernel.
    """
    nd = len(kernel_shape)
    if x.ndim - 1 != nd:
        raise ShapeMismatchError(
            "filter is %d-d but input has %d spatial dims" % (nd, x.ndim - 1)
        )
    b = x.shape[0]
    if nd == 1:
        d_out, g = _axis_gather(x.shape[1], kernel_shape[0], stride)
        out = np.empty((kernel_shape[0], b, d_out))
        for q, (idx, valid) in enumerate(g):
            out[q] = np.where(valid, x[:, idx], 0.0)
        return out
    d1_out, g1 = _axis_gather(x.shape[1], kernel_shape[0], stride)
    d2_out, g2 = _axis_gather(x.shape[2], kernel_shape[1], stride)
    out = np.empty((kernel_shape[0] * kernel_shape[1], b, d1_out, d2_out))
    for q1, (i1, v1) in enumerate(g1):
        rows = x[:, i1, :]
        for q2, (i2, v2) in enumerate(g2):
            vals = rows[:, :, i2]
            mask = v1[:, None] & v2[None, :]
            out[q1 * kernel_shape[1] + q2] = np.where(mask, vals, 0.0)
    return out


def output_extent(spatial_dims, stride: int) -> tuple:
    return tuple(-(-d // stride) for d in spatial_dims)


def convolve(filt: Filter, x: np.ndarray) -> np.ndarray:
    """Convolve one spatial tensor with one filter; pure function."""
    x = np.asarray(x, dtype=np.float64)
    win = _windows(x[None], filt.kernel_shape, filt.stride)
    k = filt.entries.size
    flat = filt.entries @ win.reshape(k, -1)
    return flat.reshape(win.shape[2:])


def preactivation_batch(
    weights: np.ndarray,
    kernel_shape,
    stride: int,
    biases: Optional[np.ndarray],
    x: np.ndarray,
) -> np.ndarray:
    """Batched pre-activation of one layer.

    weights: (c_out, c_in, K); x: (B, c_in, *spatial).  Accumulates input
    channels sequentially so that channel-level rewirings that only insert
    exact zeros cannot perturb rounding.
    """
    c_out, c_in, k = weights.shape
    if x.shape[1] != c_in:
        raise ShapeMismatchError(
            "layer expects %d input channels, got %d" % (c_in, x.shape[1])
        )
    b = x.shape[0]
    out_sp = output_extent(x.shape[2:], stride)
    acc = np.zeros((c_out, b) + out_sp)
    flat = acc.reshape(c_out, -1)
    for j in range(c_in):
        win = _windows(x[:, j], kernel_shape, stride)
        flat += weights[:, j, :] @ win.reshape(k, -1)
    acc = np.moveaxis(acc, 0, 1)
    if biases is not None:
        acc = acc + biases.reshape((1, c_out) + (1,) * len(out_sp))
    return acc


def layer_forward(
    weights: np.ndarray,
    biases: Optional[np.ndarray],
    activation: ActivationSpec,
    x: ChannelTensor,
    kernel_shape,
    stride: int = 1,
) -> ChannelTensor:
    """One convolutional layer: phi(sum_j W_ij * x_j + b_i)."""
    pre = preactivation_batch(weights, kernel_shape, stride, biases, x.spatial()[None])
    return ChannelTensor.from_spatial(act_apply(activation, pre[0]))


def skip_contribution_batch(
    skip: SkipOperator, stored: np.ndarray
) -> np.ndarray:
    """Batched contribution of one skip operator given x^(from_layer)."""
    if skip.kind == IDENTITY_RESIDUAL:
        return stored
    return preactivation_batch(
        skip.weights, skip.kernel_shape, skip.stride, None, stored
    )


def skip_forward(
    layer_output: ChannelTensor,
    skips: Sequence[SkipOperator],
    stored_activations: Mapping[int, ChannelTensor],
) -> ChannelTensor:
    """Add skip contributions (after activation) to one layer's output."""
    out = layer_output.spatial()[None]
    for skip in skips:
        if skip.from_layer not in stored_activations:
            raise ShapeMismatchError(
                "missing stored activation for skip source layer %d" % skip.from_layer
            )
        src = stored_activations[skip.from_layer].spatial()[None]
        contrib = skip_contribution_batch(skip, src)
        if contrib.shape != out.shape:
            raise ShapeMismatchError(
                "skip contribution shape %r does not match layer output %r"
                % (contrib.shape[1:], out.shape[1:])
            )
        out = out + contrib
    return ChannelTensor.from_spatial(out[0])
