"""Nine-layer deringing CNN with two additive skip connections.

Layer 1 is conv + ReLU, layers 2-8 are conv + BN + ReLU and layer 9 is
conv + BN + tanh.  A skip ``(src, dst)`` adds the output of layer ``src`` to
the input of layer ``dst``; the defaults join layer 1 into layer 5 and layer 5
into layer 9, all on 32-channel tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .dsp import normalize_gather
from .gather import Gather
from .tensor_core import (
    BatchNormParams,
    ConvParams,
    activation_backward,
    activation_forward,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
)

DEFAULT_SKIPS = ((1, 5), (5, 9))


@dataclass(frozen=True)
class ModelSpec:
    num_layers: int = 9
    feature_maps: int = 32
    kernel_size: int = 3
    in_channels: int = 1
    out_channels: int = 1
    skip_connections: tuple[tuple[int, int], ...] = DEFAULT_SKIPS
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    def __post_init__(self):
        if self.num_layers < 2:
            raise ValueError("need at least an input and an output layer")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        for src, dst in self.skip_connections:
            if not 1 <= src < dst <= self.num_layers:
                raise ValueError(f"bad skip connection ({src}, {dst})")
            # both ends must carry feature_maps channels
            if src == self.num_layers or dst == 1:
                raise ValueError(f"skip ({src}, {dst}) joins tensors of unequal width")

    @property
    def activations(self) -> tuple[str, ...]:
        return ("relu",) * (self.num_layers - 1) + ("tanh",)

    @property
    def has_bn(self) -> tuple[bool, ...]:
        return (False,) + (True,) * (self.num_layers - 1)

    def channels(self, layer: int) -> tuple[int, int]:
        """(c_in, c_out) of 1-based ``layer``."""
        c_in = self.in_channels if layer == 1 else self.feature_maps
        c_out = self.out_channels if layer == self.num_layers else self.feature_maps
        return c_in, c_out

    @property
    def receptive_field(self) -> int:
        return self.num_layers * (self.kernel_size - 1) + 1

    @property
    def min_inference_size(self) -> int:
        """Smallest gather side accepted by :func:`predict_gather`."""
        return 2 * self.receptive_field - 1

    def layer_records(self) -> list[tuple[str, tuple[int, ...]]]:
        """Flat (kind, shape) sequence, conv then BN per layer, as serialized."""
        k = self.kernel_size
        records = []
        for layer in range(1, self.num_layers + 1):
            c_in, c_out = self.channels(layer)
            records.append(("conv", (c_out, c_in, k, k)))
            if self.has_bn[layer - 1]:
                records.append(("batchnorm", (c_out,)))
        return records


@dataclass
class ModelParams:
    convs: list[ConvParams]
    norms: list[BatchNormParams | None]  # None where the layer has no BN

    def parameters(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        for i, (conv, bn) in enumerate(zip(self.convs, self.norms), start=1):
            for name, value, grad in conv.parameters():
                yield f"layer{i}.{name}", value, grad
            if bn is not None:
                for name, value, grad in bn.parameters():
                    yield f"layer{i}.{name}", value, grad

    def zero_grad(self) -> None:
        for conv, bn in zip(self.convs, self.norms):
            conv.zero_grad()
            if bn is not None:
                bn.zero_grad()

    def set_mode(self, mode: str) -> None:
        for bn in self.norms:
            if bn is not None:
                bn.mode = mode

    def count(self) -> int:
        return sum(value.size for _, value, _ in self.parameters())

    def astype(self, dtype) -> "ModelParams":
        """Deep copy with every array cast to ``dtype`` (grads reset)."""
        convs = [
            ConvParams(c.kernels.astype(dtype), c.biases.astype(dtype)) for c in self.convs
        ]
        norms = [
            None
            if b is None
            else BatchNormParams(
                b.gamma.astype(dtype),
                b.beta.astype(dtype),
                b.running_mean.astype(dtype),
                b.running_var.astype(dtype),
                eps=b.eps,
                momentum=b.momentum,
                mode=b.mode,
            )
            for b in self.norms
        ]
        return ModelParams(convs, norms)

    def copy(self) -> "ModelParams":
        return self.astype(self.convs[0].kernels.dtype)


def build_model(
    seed: int, spec: ModelSpec | None = None, dtype=np.float32
) -> tuple[ModelSpec, ModelParams]:
    """Fresh parameters: kernels ~ N(0, 1/fan_in), zero biases, identity BN."""
    spec = spec or ModelSpec()
    rng = np.random.default_rng(seed)
    k = spec.kernel_size
    convs, norms = [], []
    for layer in range(1, spec.num_layers + 1):
        c_in, c_out = spec.channels(layer)
        fan_in = c_in * k * k
        kernels = rng.standard_normal((c_out, c_in, k, k)) / np.sqrt(fan_in)
        convs.append(ConvParams(kernels.astype(dtype), np.zeros(c_out, dtype)))
        if spec.has_bn[layer - 1]:
            norms.append(
                BatchNormParams.identity(
                    c_out, dtype, eps=spec.bn_eps, momentum=spec.bn_momentum
                )
            )
        else:
            norms.append(None)
    return spec, ModelParams(convs, norms)


@dataclass
class _LayerCache:
    conv_in: np.ndarray
    bn: object  # BatchNormCache or None
    act_in: np.ndarray


@dataclass
class ForwardCache:
    spec: ModelSpec
    mode: str
    layers: list[_LayerCache] = field(default_factory=list)
    consumed: bool = False


def forward(
    spec: ModelSpec,
    params: ModelParams,
    x: np.ndarray,
    mode: str = "infer",
    keep_cache: bool | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on ``x`` of shape (n, 1, h, w).

    Returns the output (same shape, values in (-1, 1)) and a cache that
    :func:`backward` consumes.  Per-layer values are retained only when
    ``keep_cache`` is true, which defaults to train mode.
    """
    if keep_cache is None:
        keep_cache = mode == "train"
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ValueError(
            f"model input must have shape (n, {spec.in_channels}, h, w), got {x.shape}"
        )
    params.set_mode(mode)
    skips_into = {dst: src for src, dst in spec.skip_connections}
    skip_sources = set(skips_into.values())
    outputs: dict[int, np.ndarray] = {}
    cache = ForwardCache(spec, mode)
    h = x
    for layer in range(1, spec.num_layers + 1):
        if layer in skips_into:
            h = h + outputs[skips_into[layer]]
        conv_in = h
        z = conv2d_forward(conv_in, params.convs[layer - 1])
        bn = params.norms[layer - 1]
        bn_cache = None
        if bn is not None:
            z, bn_cache = batchnorm_forward(z, bn)
        h = activation_forward(z, spec.activations[layer - 1])
        if layer in skip_sources:
            outputs[layer] = h
        if keep_cache:
            cache.layers.append(_LayerCache(conv_in, bn_cache, z))
    return h, cache


def backward(
    spec: ModelSpec, params: ModelParams, cache: ForwardCache, loss_grad: np.ndarray
) -> np.ndarray:
    """Accumulate parameter gradients; return the gradient w.r.t. the input."""
    if cache is None or not cache.layers:
        raise RuntimeError("backward needs the cache of a forward pass")
    if cache.consumed:
        raise RuntimeError("forward cache already used by a previous backward")
    if cache.spec != spec:
        raise RuntimeError("forward cache was produced by a different model spec")
    cache.consumed = True
    skips_from: dict[int, list[int]] = {}
    for src, dst in spec.skip_connections:
        skips_from.setdefault(src, []).append(dst)
    # gradient w.r.t. the *input* of each layer, kept for skip sources
    input_grads: dict[int, np.ndarray] = {}
    g_out = loss_grad
    for layer in range(spec.num_layers, 0, -1):
        # output of a skip source also feeds every destination's input
        for dst in skips_from.get(layer, ()):
            g_out = g_out + input_grads[dst]
        lc = cache.layers[layer - 1]
        g = activation_backward(lc.act_in, spec.activations[layer - 1], g_out)
        if lc.bn is not None:
            g = batchnorm_backward(lc.bn, g)
        g = conv2d_backward(lc.conv_in, params.convs[layer - 1], g)
        input_grads[layer] = g
        g_out = g
    return g_out


def predict_gather(spec: ModelSpec, params: ModelParams, gather: Gather) -> Gather:
    """Dering a whole gather in one fully convolutional inference pass.

    The gather is scaled to unit max amplitude, passed through the network
    and scaled back, so the result is positively homogeneous in the input.
    """
    n_t, n_x = gather.data.shape
    size = spec.min_inference_size
    if n_t < size or n_x < size:
        raise ValueError(
            f"gather {n_t}x{n_x} is smaller than the {size}x{size} minimum "
            f"(receptive field {spec.receptive_field})"
        )
    normed, scale = normalize_gather(gather)
    if scale == 0:
        return replace(gather, data=gather.data.copy())
    dtype = params.convs[0].kernels.dtype
    x = normed.data.astype(dtype)[None, None]
    out, _ = forward(spec, params, x, mode="infer")
    return replace(gather, data=out[0, 0].astype(np.float64) * scale)
