"""Mixed-scale dense (MSD) network of width one.

Hidden layer ``k`` convolves the channel stack ``[input, out_1 .. out_{k-1}]``
with a single dilated 3x3 kernel and applies ReLU.  A 1x1 convolution over the
input and every hidden output produces the (linear) result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConvLayerParams, dilated_conv2d, dilated_conv2d_backward, uniform_init


@dataclass(frozen=True)
class MSDConfig:
    n_layers: int = 15
    dilate_range: int = 5
    in_channels: int = 1

    def __post_init__(self):
        if self.n_layers < 1 or self.dilate_range < 1 or self.in_channels < 1:
            raise ValueError(f"invalid MSD config {self}")


def dilation_of_layer(k: int, p: int) -> int:
    """Dilation of 1-based layer ``k``: counts 1..p and then starts over."""
    if k < 1 or p < 1:
        raise ValueError("layer index and dilate range must be >= 1")
    return (k - 1) % p + 1


def layer_name(k: int) -> str:
    return f"layer{k:02d}"


def msd_weight_shapes(config: MSDConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c = config.in_channels
    for k in range(1, config.n_layers + 1):
        shapes[f"{layer_name(k)}.kernel"] = (1, c + k - 1, 3, 3)
        shapes[f"{layer_name(k)}.bias"] = (1,)
    shapes["out.kernel"] = (1, c + config.n_layers, 1, 1)
    shapes["out.bias"] = (1,)
    return shapes


def init_msd_weights(config: MSDConfig, seed=0, lo: float = -0.25, hi: float = 0.25) -> dict:
    rng = np.random.default_rng(seed)
    return {name: uniform_init(shape, lo, hi, rng) for name, shape in msd_weight_shapes(config).items()}


def identity_msd_weights(config: MSDConfig) -> dict:
    """Weights whose output equals the first input channel."""
    weights = {name: np.zeros(shape) for name, shape in msd_weight_shapes(config).items()}
    weights["out.kernel"][0, 0, 0, 0] = 1.0
    return weights


def check_msd_weights(weights: dict, config: MSDConfig) -> None:
    expected = msd_weight_shapes(config)
    if set(weights) != set(expected):
        missing = sorted(set(expected) - set(weights))
        extra = sorted(set(weights) - set(expected))
        raise ValueError(f"weights do not match config: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if np.shape(weights[name]) != shape:
            raise ValueError(f"{name}: shape {np.shape(weights[name])}, expected {shape}")


def count_parameters_msd(config: MSDConfig) -> int:
    c, n = config.in_channels, config.n_layers
    hidden = sum(9 * (c + k - 1) + 1 for k in range(1, n + 1))
    return hidden + (c + n) + 1


def _hidden_params(weights: dict, config: MSDConfig, k: int) -> ConvLayerParams:
    name = layer_name(k)
    return ConvLayerParams(
        weights[f"{name}.kernel"], weights[f"{name}.bias"], dilation_of_layer(k, config.dilate_range)
    )


def _out_params(weights: dict) -> ConvLayerParams:
    return ConvLayerParams(weights["out.kernel"], weights["out.bias"])


def msd_forward(x: np.ndarray, weights: dict, config: MSDConfig, return_cache: bool = False):
    """Network output ``(N, 1, H, W)`` for input ``(N, in_channels, H, W)``."""
    x = np.asarray(x, dtype=np.float64)
    check_msd_weights(weights, config)
    if x.ndim != 4 or x.shape[1] != config.in_channels:
        raise ValueError(f"expected (N, {config.in_channels}, H, W) input, got {x.shape}")
    n, c, h, w = x.shape
    feats = np.empty((n, c + config.n_layers, h, w))
    feats[:, :c] = x
    pre = np.empty((n, config.n_layers, h, w))
    for k in range(1, config.n_layers + 1):
        j = c + k - 1
        a = dilated_conv2d(feats[:, :j], _hidden_params(weights, config, k))
        pre[:, k - 1] = a[:, 0]
        feats[:, j] = np.maximum(a[:, 0], 0.0)
    out = dilated_conv2d(feats, _out_params(weights))
    if return_cache:
        return out, (feats, pre)
    return out


def msd_backward(x: np.ndarray, weights: dict, config: MSDConfig, upstream: np.ndarray, cache=None):
    """Input gradient and a dict of weight gradients (same keys as ``weights``)."""
    x = np.asarray(x, dtype=np.float64)
    if cache is None:
        _, cache = msd_forward(x, weights, config, return_cache=True)
    feats, pre = cache
    n, c, h, w = x.shape
    if upstream.shape != (n, 1, h, w):
        raise ValueError(f"upstream shape {upstream.shape} != {(n, 1, h, w)}")
    grads: dict[str, np.ndarray] = {}
    g_feats, grads["out.kernel"], grads["out.bias"] = dilated_conv2d_backward(
        feats, _out_params(weights), upstream
    )
    for k in range(config.n_layers, 0, -1):
        j = c + k - 1
        g_pre = g_feats[:, j : j + 1] * (pre[:, k - 1 : k] > 0)
        g_in, gk, gb = dilated_conv2d_backward(feats[:, :j], _hidden_params(weights, config, k), g_pre)
        g_feats[:, :j] += g_in
        grads[f"{layer_name(k)}.kernel"] = gk
        grads[f"{layer_name(k)}.bias"] = gb
    ordered = {name: grads[name] for name in weights}
    return g_feats[:, :c].copy(), ordered
