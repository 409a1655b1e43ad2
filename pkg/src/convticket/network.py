"""Network specifications, forward evaluation, random sources, masks, file I/O."""

from __future__ import annotations

import base64
import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .activations import ActivationSpec, apply as act_apply
from .errors import (
    ArchitectureError,
    FileFormatError,
    ParameterBoundError,
    ShapeMismatchError,
)
from .tensors import (
    GENERAL,
    IDENTITY_RESIDUAL,
    ChannelTensor,
    SkipOperator,
    _prod,
    preactivation_batch,
    skip_contribution_batch,
)

FORMAT_VERSION = 1

TARGET = "target"
SOURCE = "source"
TICKET = "ticket"


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    kernel_shape: tuple
    stride: int
    activation: ActivationSpec
    has_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kernel_shape", tuple(int(k) for k in self.kernel_shape))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ArchitectureError("channel counts must be >= 1")
        if any(k < 1 for k in self.kernel_shape) or len(self.kernel_shape) not in (1, 2):
            raise ArchitectureError("kernel shape must be 1-d or 2-d with entries >= 1")
        if self.stride < 1:
            raise ArchitectureError("stride must be >= 1")

    @property
    def kernel_size(self) -> int:
        return _prod(self.kernel_shape)


@dataclass
class NetworkSpec:
    """Architecture plus parameters of a target, source, or ticket network."""

    layers: List[LayerSpec]
    weights: List[np.ndarray]
    biases: List[Optional[np.ndarray]]
    skips: List[SkipOperator] = field(default_factory=list)
    output_scale: Optional[List[float]] = None
    kind: str = TARGET

    def __post_init__(self):
        if self.output_scale is None:
            self.output_scale = [1.0] * len(self.layers)
        self.validate()

    @property
    def depth(self) -> int:
        return len(self.layers)

    def validate(self):
        if not self.layers:
            raise ArchitectureError("network needs at least one layer")
        if not (len(self.weights) == len(self.biases) == len(self.layers)):
            raise ArchitectureError("weights/biases lists must match layer count")
        for l, (spec, w, b) in enumerate(zip(self.layers, self.weights, self.biases), 1):
            if l > 1 and spec.in_channels != self.layers[l - 2].out_channels:
                raise ArchitectureError(
                    "layer %d input channels do not chain from layer %d" % (l, l - 1)
                )
            want = (spec.out_channels, spec.in_channels, spec.kernel_size)
            if w.shape != want:
                raise ArchitectureError(
                    "layer %d weights have shape %r, expected %r" % (l, w.shape, want)
                )
            if spec.has_bias:
                if b is None or b.shape != (spec.out_channels,):
                    raise ArchitectureError("layer %d bias has wrong shape" % l)
            elif b is not None:
                raise ArchitectureError("layer %d declared without bias but has one" % l)
        for skip in self.skips:
            if skip.to_layer > self.depth:
                raise ArchitectureError("skip targets layer beyond network depth")
            c_from = self.layers[skip.from_layer - 1].out_channels
            c_to = self.layers[skip.to_layer - 1].out_channels
            if skip.kind == IDENTITY_RESIDUAL and c_from != c_to:
                raise ArchitectureError(
                    "identity residual skip needs matching channel counts"
                )
            if skip.kind == GENERAL and skip.weights.shape[:2] != (c_to, c_from):
                raise ArchitectureError("general skip weight grid has wrong channels")

    def parameter_bound(self) -> float:
        vals = [np.abs(w).max() if w.size else 0.0 for w in self.weights]
        vals += [np.abs(b).max() for b in self.biases if b is not None and b.size]
        vals += [
            np.abs(s.weights).max()
            for s in self.skips
            if s.kind == GENERAL and s.weights.size
        ]
        return float(max(vals)) if vals else 0.0


@dataclass
class Mask:
    """Per-parameter binary selection over a source network's parameters.

    Identity residual skips carry no entries here: they are not maskable.
    """

    weights: List[np.ndarray]
    biases: List[Optional[np.ndarray]]
    skips: Dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, net: NetworkSpec) -> "Mask":
        return cls(
            weights=[np.zeros(w.shape, dtype=np.uint8) for w in net.weights],
            biases=[
                np.zeros(b.shape, dtype=np.uint8) if b is not None else None
                for b in net.biases
            ],
            skips={
                i: np.zeros(s.weights.shape, dtype=np.uint8)
                for i, s in enumerate(net.skips)
                if s.kind == GENERAL
            },
        )

    @classmethod
    def ones_like(cls, net: NetworkSpec) -> "Mask":
        m = cls.zeros_like(net)
        for w in m.weights:
            w[...] = 1
        for b in m.biases:
            if b is not None:
                b[...] = 1
        for s in m.skips.values():
            s[...] = 1
        return m


@dataclass(frozen=True)
class NonzeroCounts:
    """Exact nonzero-parameter counts, split into layer weights and skips."""

    n_w: tuple
    n_m: tuple
    n_total: int

    def layer_total(self, layer: int) -> int:
        return self.n_w[layer - 1] + self.n_m[layer - 1]


def count_nonzero(net: NetworkSpec) -> NonzeroCounts:
    n_w = []
    for w, b in zip(net.weights, net.biases):
        n = int(np.count_nonzero(w))
        if b is not None:
            n += int(np.count_nonzero(b))
        n_w.append(n)
    n_m = [0] * net.depth
    for skip in net.skips:
        if skip.kind == IDENTITY_RESIDUAL:
            n_m[skip.to_layer - 1] += net.layers[skip.to_layer - 1].out_channels
        else:
            n_m[skip.to_layer - 1] += int(np.count_nonzero(skip.weights))
    return NonzeroCounts(tuple(n_w), tuple(n_m), sum(n_w) + sum(n_m))


def dense_size(net: NetworkSpec) -> int:
    """Total parameter slots of the architecture (weights, biases, skip grids)."""
    n = 0
    for spec, b in zip(net.layers, net.biases):
        n += spec.out_channels * spec.in_channels * spec.kernel_size
        if b is not None:
            n += spec.out_channels
    for skip in net.skips:
        if skip.kind == IDENTITY_RESIDUAL:
            n += net.layers[skip.to_layer - 1].out_channels
        else:
            n += skip.weights.size
    return n


def apply_mask(source: NetworkSpec, mask: Mask) -> NetworkSpec:
    """Zero out masked parameters; survivors keep their source value bit-exactly."""
    if len(mask.weights) != source.depth:
        raise ShapeMismatchError("mask depth does not match source")
    weights, biases = [], []
    for w, b, mw, mb in zip(source.weights, source.biases, mask.weights, mask.biases):
        if mw.shape != w.shape:
            raise ShapeMismatchError("weight mask shape mismatch")
        weights.append(np.where(mw.astype(bool), w, 0.0))
        if b is None:
            biases.append(None)
        else:
            if mb is None or mb.shape != b.shape:
                raise ShapeMismatchError("bias mask shape mismatch")
            biases.append(np.where(mb.astype(bool), b, 0.0))
    skips = []
    for i, skip in enumerate(source.skips):
        if skip.kind == GENERAL:
            ms = mask.skips.get(i)
            if ms is None or ms.shape != skip.weights.shape:
                raise ShapeMismatchError("skip mask shape mismatch")
            skips.append(
                SkipOperator(
                    skip.from_layer,
                    skip.to_layer,
                    GENERAL,
                    np.where(ms.astype(bool), skip.weights, 0.0),
                    skip.kernel_shape,
                    skip.stride,
                )
            )
        else:
            skips.append(skip)
    return NetworkSpec(
        layers=list(source.layers),
        weights=weights,
        biases=biases,
        skips=skips,
        output_scale=list(source.output_scale),
        kind=TICKET,
    )


def forward_trace_batch(net: NetworkSpec, x: np.ndarray) -> List[np.ndarray]:
    """Batched forward pass returning all activations x^(0) .. x^(L).

    x has shape (batch, c_0, *spatial).
    """
    if x.shape[1] != net.layers[0].in_channels:
        raise ArchitectureError(
            "input has %d channels, network expects %d"
            % (x.shape[1], net.layers[0].in_channels)
        )
    if np.abs(x).max(initial=0.0) > 1.0 + 1e-12:
        warnings.warn("input entries exceed |x| <= 1; error guarantees may not hold")
    stored = [x]
    for l, spec in enumerate(net.layers, 1):
        pre = preactivation_batch(
            net.weights[l - 1], spec.kernel_shape, spec.stride, net.biases[l - 1],
            stored[l - 1],
        )
        out = act_apply(spec.activation, pre)
        for skip in net.skips:
            if skip.to_layer != l:
                continue
            contrib = skip_contribution_batch(skip, stored[skip.from_layer])
            if contrib.shape != out.shape:
                raise ArchitectureError(
                    "skip from layer %d produces shape %r, layer %d output is %r"
                    % (skip.from_layer, contrib.shape[1:], l, out.shape[1:])
                )
            out = out + contrib
        stored.append(out)
    return stored


def forward_trace(net: NetworkSpec, x: ChannelTensor) -> List[ChannelTensor]:
    trace = forward_trace_batch(net, x.spatial()[None])
    return [ChannelTensor.from_spatial(t[0]) for t in trace]


def forward(net: NetworkSpec, x: ChannelTensor) -> ChannelTensor:
    return forward_trace(net, x)[-1]


def init_source(plan, seed: int) -> NetworkSpec:
    """Sample a random source network from a plan's layer dims and sigma schedule.

    Weights are i.i.d. U[-sigma_l, sigma_l]; layer-1 biases are
    U[-sigma_1, sigma_1]; deeper biases are exactly zero (modelled as
    bias-free layers).  With looks_linear set, layer-1 channels come in
    exact sign-mirrored pairs.
    """
    weights, biases, layers = [], [], []
    for l, spec in enumerate(plan.source_layers, 1):
        rng = np.random.default_rng((int(seed), l))
        sigma = plan.sigmas[l - 1]
        shape = (spec.out_channels, spec.in_channels, spec.kernel_size)
        if l == 1 and plan.looks_linear:
            if spec.out_channels % 2:
                raise ArchitectureError("looks-linear layer needs an even channel count")
            half = rng.uniform(-sigma, sigma, (spec.out_channels // 2,) + shape[1:])
            w = np.empty(shape)
            w[0::2] = half
            w[1::2] = -half
            bh = rng.uniform(-sigma, sigma, spec.out_channels // 2)
            b = np.empty(spec.out_channels)
            b[0::2] = bh
            b[1::2] = -bh
        else:
            w = rng.uniform(-sigma, sigma, shape)
            b = rng.uniform(-sigma, sigma, spec.out_channels) if l == 1 else None
        weights.append(w)
        biases.append(b)
        layers.append(spec)
    return NetworkSpec(
        layers=layers,
        weights=weights,
        biases=biases,
        skips=[SkipOperator(**s) for s in plan.source_skips],
        kind=SOURCE,
    )


def rescale_target(net: NetworkSpec, cap: float = 1.0) -> NetworkSpec:
    """Homogeneous rescale bringing all parameters within |theta| <= cap.

    Only valid for relu / leaky_relu layers; per-layer factors go into
    output_scale so the original function is cap-scaled output times
    their product.  Never applied silently: callers opt in.
    """
    for spec in net.layers:
        if spec.activation.kind not in ("relu", "leaky_relu"):
            raise ArchitectureError(
                "rescaling through %s is not homogeneous" % spec.activation.kind
            )
    factors, weights, biases = [], [], []
    running = 1.0
    for w, b in zip(net.weights, net.biases):
        peak = max(
            np.abs(w).max(initial=0.0),
            np.abs(b).max(initial=0.0) if b is not None else 0.0,
        )
        f = max(1.0, peak / cap)
        factors.append(f)
        running *= f
        weights.append(w / f)
        biases.append(b / running if b is not None else None)
    out = NetworkSpec(
        layers=list(net.layers),
        weights=weights,
        biases=biases,
        skips=list(net.skips),
        output_scale=factors,
        kind=net.kind,
    )
    return out


# ---------------------------------------------------------------------------
# File I/O: JSON header + base64 block of little-endian values, bit-exact.

def _encode_payload(arrays) -> dict:
    names, blobs = [], []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        names.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
        blobs.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    return {
        "encoding": "base64",
        "endianness": "little",
        "order": "row-major",
        "arrays": names,
        "data": base64.b64encode(b"".join(blobs)).decode("ascii"),
    }


def _decode_payload(payload: dict) -> Dict[str, np.ndarray]:
    try:
        raw = base64.b64decode(payload["data"])
        out = {}
        offset = 0
        for entry in payload["arrays"]:
            dt = np.dtype(entry["dtype"]).newbyteorder("<")
            n = _prod(entry["shape"]) * dt.itemsize
            arr = np.frombuffer(raw[offset : offset + n], dtype=dt)
            if arr.size != _prod(entry["shape"]):
                raise FileFormatError("payload truncated at %s" % entry["name"])
            out[entry["name"]] = arr.reshape(entry["shape"]).astype(dt.newbyteorder("="))
            offset += n
        return out
    except (KeyError, ValueError) as exc:
        raise FileFormatError("malformed payload: %s" % exc) from None


def _check_header(doc: dict, expected_format: str):
    if not isinstance(doc, dict) or doc.get("format") != expected_format:
        raise FileFormatError("not a %s file" % expected_format)
    if doc.get("version") != FORMAT_VERSION:
        raise FileFormatError(
            "unsupported version %r (expected %d)" % (doc.get("version"), FORMAT_VERSION)
        )


def _skip_header(skip: SkipOperator) -> dict:
    return {
        "from_layer": skip.from_layer,
        "to_layer": skip.to_layer,
        "kind": skip.kind,
        "kernel_shape": list(skip.kernel_shape),
        "stride": skip.stride,
    }


def save_network(net: NetworkSpec, path, config=None):
    arrays = []
    for l, (w, b) in enumerate(zip(net.weights, net.biases), 1):
        arrays.append(("layer%d.weight" % l, w))
        if b is not None:
            arrays.append(("layer%d.bias" % l, b))
    for i, skip in enumerate(net.skips):
        if skip.kind == GENERAL:
            arrays.append(("skip%d.weight" % i, skip.weights))
    doc = {
        "format": "convticket.net",
        "version": FORMAT_VERSION,
        "kind": net.kind,
        "layers": [
            {
                "in_channels": s.in_channels,
                "out_channels": s.out_channels,
                "kernel_shape": list(s.kernel_shape),
                "stride": s.stride,
                "activation": s.activation.canonical_name(),
                "has_bias": s.has_bias,
            }
            for s in net.layers
        ],
        "skips": [_skip_header(s) for s in net.skips],
        "output_scale": list(net.output_scale),
        "config": config or {},
        "payload": _encode_payload(arrays),
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_network(path) -> NetworkSpec:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FileFormatError("invalid JSON: %s" % exc) from None
    _check_header(doc, "convticket.net")
    arrays = _decode_payload(doc["payload"])
    layers, weights, biases = [], [], []
    try:
        for l, entry in enumerate(doc["layers"], 1):
            spec = LayerSpec(
                in_channels=entry["in_channels"],
                out_channels=entry["out_channels"],
                kernel_shape=tuple(entry["kernel_shape"]),
                stride=entry["stride"],
                activation=ActivationSpec.parse(entry["activation"]),
                has_bias=entry["has_bias"],
            )
            layers.append(spec)
            weights.append(arrays["layer%d.weight" % l])
            biases.append(arrays.get("layer%d.bias" % l) if spec.has_bias else None)
        skips = []
        for i, entry in enumerate(doc["skips"]):
            kind = entry["kind"]
            skips.append(
                SkipOperator(
                    entry["from_layer"],
                    entry["to_layer"],
                    kind,
                    arrays["skip%d.weight" % i] if kind == GENERAL else None,
                    tuple(entry["kernel_shape"]),
                    entry["stride"],
                )
            )
    except KeyError as exc:
        raise FileFormatError("missing field %s" % exc) from None
    net = NetworkSpec(
        layers=layers,
        weights=weights,
        biases=biases,
        skips=skips,
        output_scale=list(doc["output_scale"]),
        kind=doc.get("kind", TARGET),
    )
    if net.kind == TARGET:
        peak = net.parameter_bound()
        if peak > 1.0:
            raise ParameterBoundError(peak)
    return net


def save_mask(mask: Mask, path, config=None):
    arrays = []
    for l, (w, b) in enumerate(zip(mask.weights, mask.biases), 1):
        arrays.append(("layer%d.weight" % l, w))
        if b is not None:
            arrays.append(("layer%d.bias" % l, b))
    for i, m in sorted(mask.skips.items()):
        arrays.append(("skip%d.weight" % i, m))
    doc = {
        "format": "convticket.mask",
        "version": FORMAT_VERSION,
        "layers": len(mask.weights),
        "has_bias": [b is not None for b in mask.biases],
        "skip_indices": sorted(mask.skips),
        "config": config or {},
        "payload": _encode_payload(arrays),
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_mask(path) -> Mask:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FileFormatError("invalid JSON: %s" % exc) from None
    _check_header(doc, "convticket.mask")
    arrays = _decode_payload(doc["payload"])
    try:
        weights = [arrays["layer%d.weight" % l] for l in range(1, doc["layers"] + 1)]
        biases = [
            arrays["layer%d.bias" % l] if has_b else None
            for l, has_b in enumerate(doc["has_bias"], 1)
        ]
        skips = {i: arrays["skip%d.weight" % i] for i in doc["skip_indices"]}
    except KeyError as exc:
        raise FileFormatError("missing field %s" % exc) from None
    return Mask(weights=weights, biases=biases, skips=skips)
