"""Minimal numpy deep-learning engine.

Tensors are plain float64 ``numpy`` arrays in NCHW order (a patch/time axis,
when present, sits between N and C).  There is no autograd graph: every
operation exposes an explicit forward/backward pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np


@dataclass
class ConvLayerParams:
    """Weights of one same-size 2D convolution (cross-correlation)."""

    kernel: np.ndarray  # (out, in, k, k), k in {1, 3}
    bias: np.ndarray | None = None  # (out,)
    dilation: int = 1

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        if self.kernel.ndim != 4 or self.kernel.shape[2] != self.kernel.shape[3]:
            raise ValueError(f"kernel must be (out, in, k, k), got {self.kernel.shape}")
        if self.kernel.shape[2] not in (1, 3):
            raise ValueError("only 3x3 and 1x1 kernels are supported")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.out_channels,):
                raise ValueError(f"bias shape {self.bias.shape} != ({self.out_channels},)")

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def size(self) -> int:
        return self.kernel.shape[2]


def _im2col(x: np.ndarray, size: int, dilation: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*size*size, H*W) of zero-padded dilated taps."""
    n, c, h, w = x.shape
    if size == 1:
        return x.reshape(n, c, h * w)
    pad = dilation * (size // 2)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, size, size, h, w))
    for ky in range(size):
        for kx in range(size):
            oy, ox = ky * dilation, kx * dilation
            cols[:, :, ky, kx] = xp[:, :, oy : oy + h, ox : ox + w]
    return cols.reshape(n, c * size * size, h * w)


def _col2im(cols: np.ndarray, shape, size: int, dilation: int) -> np.ndarray:
    n, c, h, w = shape
    if size == 1:
        return cols.reshape(n, c, h, w)
    pad = dilation * (size // 2)
    cols = cols.reshape(n, c, size, size, h, w)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for ky in range(size):
        for kx in range(size):
            oy, ox = ky * dilation, kx * dilation
            xp[:, :, oy : oy + h, ox : ox + w] += cols[:, :, ky, kx]
    return xp[:, :, pad : pad + h, pad : pad + w]


def _check_input(x: np.ndarray, params: ConvLayerParams) -> None:
    if x.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) input, got shape {x.shape}")
    if x.shape[1] != params.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, layer expects {params.in_channels}")


def dilated_conv2d(x: np.ndarray, params: ConvLayerParams) -> np.ndarray:
    """Same-size dilated convolution with zero padding of ``dilation`` pixels."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, params)
    n, _, h, w = x.shape
    cols = _im2col(x, params.size, params.dilation)
    out = np.matmul(params.kernel.reshape(params.out_channels, -1), cols)
    if params.bias is not None:
        out += params.bias[None, :, None]
    return out.reshape(n, params.out_channels, h, w)


def dilated_conv2d_backward(x: np.ndarray, params: ConvLayerParams, upstream: np.ndarray):
    """Gradients of :func:`dilated_conv2d` w.r.t. input, kernel and bias.

    ``bias_grad`` is ``None`` when the layer has no bias.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, params)
    n, _, h, w = x.shape
    if upstream.shape != (n, params.out_channels, h, w):
        raise ValueError(f"upstream shape {upstream.shape} does not match conv output")
    g = upstream.reshape(n, params.out_channels, h * w)
    cols = _im2col(x, params.size, params.dilation)
    kernel_grad = np.einsum("nop,nkp->ok", g, cols).reshape(params.kernel.shape)
    kflat = params.kernel.reshape(params.out_channels, -1)
    input_grad = _col2im(np.matmul(kflat.T, g), x.shape, params.size, params.dilation)
    bias_grad = upstream.sum(axis=(0, 2, 3)) if params.bias is not None else None
    return input_grad, kernel_grad, bias_grad


class Activation(str, Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(x: np.ndarray, kind: Activation) -> np.ndarray:
    kind = Activation(kind)
    if kind is Activation.RELU:
        return np.maximum(x, 0.0)
    if kind is Activation.SIGMOID:
        return sigmoid(np.asarray(x, dtype=np.float64))
    return np.tanh(x)


def activation_backward(x: np.ndarray, upstream: np.ndarray, kind: Activation) -> np.ndarray:
    """Upstream gradient times the pointwise derivative evaluated at ``x``."""
    kind = Activation(kind)
    if kind is Activation.RELU:
        return upstream * (x > 0)
    y = activation(x, kind)
    if kind is Activation.SIGMOID:
        return upstream * y * (1.0 - y)
    return upstream * (1.0 - y * y)


def mse_loss(output: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over every entry, with its gradient w.r.t. ``output``.

    Every axis except the single channel axis is counted, so a (B, 1, H, W)
    batch is normalized by B*H*W and a (B, T, 1, H, W) sequence by B*T*H*W.
    """
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if output.shape != target.shape:
        raise ValueError(f"shape mismatch: {output.shape} vs {target.shape}")
    diff = output - target
    count = diff.size
    return float(np.sum(diff * diff) / count), (2.0 / count) * diff


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Flat named view for checkpointing."""
        out = {"adam.step": np.array(float(self.step_count))}
        for name in self.m:
            out[f"{name}.adam_m"] = self.m[name]
            out[f"{name}.adam_v"] = self.v[name]
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], **hyper) -> "AdamState":
        state = cls(**hyper)
        state.step_count = int(tensors.get("adam.step", np.array(0.0)))
        for key, value in tensors.items():
            if key.endswith(".adam_m"):
                state.m[key[: -len(".adam_m")]] = np.array(value)
            elif key.endswith(".adam_v"):
                state.v[key[: -len(".adam_v")]] = np.array(value)
        return state


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if state.step_count < 0:
        raise ValueError("step_count must be >= 0")
    for name, g in grads.items():
        if name not in params:
            raise ValueError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"gradient shape mismatch for {name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        params[name] -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


def uniform_init(shape, lo: float = -0.25, hi: float = 0.25, seed=None) -> np.ndarray:
    """I.i.d. samples from ``[lo, hi)``; ``seed`` may be an int or a Generator."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=shape)


def grad_check(
    f: Callable[[np.ndarray], float],
    point: np.ndarray,
    analytic: np.ndarray,
    h: float = 1e-5,
    n_directions: int | None = None,
    seed: int = 0,
) -> float:
    """Worst discrepancy between ``analytic`` and central differences of ``f``.

    The error is normalized by the largest gradient magnitude, so coordinates
    whose true gradient is ~0 do not blow up the ratio.  With ``n_directions``
    the check uses that many random directional derivatives instead of every
    coordinate.  Each step is ``h * max(1, |theta|)``.
    """
    x = np.array(point, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError("analytic gradient shape does not match the point")

    def central(direction: np.ndarray, step: float) -> float:
        return (f(x + step * direction) - f(x - step * direction)) / (2.0 * step)

    if n_directions is None:
        numeric = np.empty_like(x)
        flat = numeric.reshape(-1)
        for i in range(x.size):
            e = np.zeros_like(x)
            e.flat[i] = 1.0
            flat[i] = central(e, h * max(1.0, abs(x.flat[i])))
        scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-300)
        return float(np.max(np.abs(numeric - analytic)) / scale)

    rng = np.random.default_rng(seed)
    step = h * max(1.0, float(np.max(np.abs(x))))
    worst = 0.0
    for _ in range(n_directions):
        d = rng.standard_normal(x.shape)
        d /= np.linalg.norm(d)
        num = central(d, step)
        ana = float(np.sum(analytic * d))
        scale = max(abs(num), abs(ana), float(np.linalg.norm(analytic)), 1e-300)
        worst = max(worst, abs(num - ana) / scale)
    return worst
