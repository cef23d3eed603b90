"""Convolutional GRU cell, patch sequences and the recurrent MSD-GRU network.

The MSD-GRU keeps the dense wiring of :mod:`ctstreak.nn.msd` but swaps every
hidden conv layer for a single-channel conv-GRU block.  An image is cut into
non-overlapping patches that are fed to the network one time step at a time;
each block carries its hidden state from one patch to the next.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from .core import ConvLayerParams, dilated_conv2d, dilated_conv2d_backward, sigmoid, uniform_init
from .msd import MSDConfig, dilation_of_layer, layer_name

KERNELS = ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh")
BIASES = ("bz", "br", "bh")
INT64_MAX = 2**63 - 1


class GRUVariant(str, Enum):
    STANDARD = "standard"
    # state convolution added after the tanh, reset bias inside that conv
    ADDITIVE = "additive"


class Traversal(str, Enum):
    RASTER = "raster"
    SERPENTINE = "serpentine"


@dataclass
class ConvGRUParams:
    """Six 3x3 kernels sharing one dilation, plus three per-channel biases.

    ``W*`` map the block input (``in_channels``) to the single state channel,
    ``U*`` map the state to itself.
    """

    Wz: np.ndarray
    Wr: np.ndarray
    Wh: np.ndarray
    Uz: np.ndarray
    Ur: np.ndarray
    Uh: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bh: np.ndarray
    dilation: int = 1

    def __post_init__(self):
        for name in KERNELS + BIASES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        cin = self.Wz.shape[1]
        for name in ("Wz", "Wr", "Wh"):
            if getattr(self, name).shape != (1, cin, 3, 3):
                raise ValueError(f"{name} must have shape (1, {cin}, 3, 3)")
        for name in ("Uz", "Ur", "Uh"):
            if getattr(self, name).shape != (1, 1, 3, 3):
                raise ValueError(f"{name} must have shape (1, 1, 3, 3)")
        for name in BIASES:
            if getattr(self, name).shape != (1,):
                raise ValueError(f"{name} must have shape (1,)")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")

    @property
    def in_channels(self) -> int:
        return self.Wz.shape[1]

    @classmethod
    def zeros(cls, in_channels: int, dilation: int = 1) -> "ConvGRUParams":
        kw = {n: np.zeros((1, in_channels, 3, 3)) for n in ("Wz", "Wr", "Wh")}
        kw.update({n: np.zeros((1, 1, 3, 3)) for n in ("Uz", "Ur", "Uh")})
        kw.update({n: np.zeros(1) for n in BIASES})
        return cls(dilation=dilation, **kw)

    @classmethod
    def random(cls, in_channels: int, dilation: int = 1, seed=0, lo=-0.25, hi=0.25) -> "ConvGRUParams":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        p = cls.zeros(in_channels, dilation)
        for name in KERNELS + BIASES:
            setattr(p, name, uniform_init(getattr(p, name).shape, lo, hi, rng))
        return p

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in KERNELS + BIASES}


def _conv(x, kernel, dilation):
    return dilated_conv2d(x, ConvLayerParams(kernel, None, dilation))


def _conv_back(x, kernel, dilation, g):
    gx, gk, _ = dilated_conv2d_backward(x, ConvLayerParams(kernel, None, dilation), g)
    return gx, gk


def _bias(b):
    return b[None, :, None, None]


def conv_gru_step(x, h_prev, params: ConvGRUParams, variant=GRUVariant.STANDARD, return_cache=False):
    """One conv-GRU update; returns the new state ``(N, 1, h, w)``."""
    variant = GRUVariant(variant)
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.ndim != 4 or h_prev.ndim != 4:
        raise ValueError("x and h_prev must be (N, C, H, W)")
    if x.shape[1] != params.in_channels:
        raise ValueError(f"x has {x.shape[1]} channels, block expects {params.in_channels}")
    if h_prev.shape != (x.shape[0], 1) + x.shape[2:]:
        raise ValueError(f"h_prev shape {h_prev.shape} incompatible with x shape {x.shape}")
    d = params.dilation
    z = sigmoid(_conv(x, params.Wz, d) + _conv(h_prev, params.Uz, d) + _bias(params.bz))
    r = sigmoid(_conv(x, params.Wr, d) + _conv(h_prev, params.Ur, d) + _bias(params.br))
    if variant is GRUVariant.STANDARD:
        q = r * h_prev
        c = np.tanh(_conv(x, params.Wh, d) + _conv(q, params.Uh, d) + _bias(params.bh))
        h = (1.0 - z) * h_prev + z * c
    else:
        q = r * h_prev + _bias(params.bh)
        c = np.tanh(_conv(x, params.Wh, d))
        h = (1.0 - z) * h_prev + z * c + _conv(q, params.Uh, d)
    if return_cache:
        return h, (z, r, q, c)
    return h


def conv_gru_backward(x, h_prev, params: ConvGRUParams, variant, upstream, cache=None):
    """Gradients w.r.t. ``x``, ``h_prev`` and every parameter of one step."""
    variant = GRUVariant(variant)
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if cache is None:
        _, cache = conv_gru_step(x, h_prev, params, variant, return_cache=True)
    if upstream.shape != h_prev.shape:
        raise ValueError(f"upstream shape {upstream.shape} != state shape {h_prev.shape}")
    z, r, q, c = cache
    d = params.dilation
    g = upstream
    grads: dict[str, np.ndarray] = {}

    dz = g * (c - h_prev)
    dc = g * z
    dh = g * (1.0 - z)
    da_h = dc * (1.0 - c * c)
    dx, grads["Wh"] = _conv_back(x, params.Wh, d, da_h)
    if variant is GRUVariant.STANDARD:
        dq, grads["Uh"] = _conv_back(q, params.Uh, d, da_h)
        grads["bh"] = da_h.sum(axis=(0, 2, 3))
    else:
        dq, grads["Uh"] = _conv_back(q, params.Uh, d, g)
        grads["bh"] = dq.sum(axis=(0, 2, 3))
    dr = dq * h_prev
    dh += dq * r

    da_z = dz * z * (1.0 - z)
    da_r = dr * r * (1.0 - r)
    gx, grads["Wz"] = _conv_back(x, params.Wz, d, da_z)
    dx += gx
    gx, grads["Wr"] = _conv_back(x, params.Wr, d, da_r)
    dx += gx
    gh, grads["Uz"] = _conv_back(h_prev, params.Uz, d, da_z)
    dh += gh
    gh, grads["Ur"] = _conv_back(h_prev, params.Ur, d, da_r)
    dh += gh
    grads["bz"] = da_z.sum(axis=(0, 2, 3))
    grads["br"] = da_r.sum(axis=(0, 2, 3))
    return dx, dh, {name: grads[name] for name in KERNELS + BIASES}


# ---------------------------------------------------------------- patches


def tile_positions(b1: int, b2: int, order=Traversal.RASTER) -> np.ndarray:
    """(T, 2) array of (tile row, tile col) in visiting order."""
    order = Traversal(order)
    pos = []
    for i in range(b1):
        cols = range(b2) if (order is Traversal.RASTER or i % 2 == 0) else range(b2 - 1, -1, -1)
        pos.extend((i, j) for j in cols)
    return np.array(pos, dtype=np.int64).reshape(-1, 2)


@dataclass
class PatchSequence:
    """Tiles of an image batch, ``data[n, t, c, y, x]``; ``positions[t]`` is the tile's grid cell."""

    data: np.ndarray
    grid_rows: int
    grid_cols: int
    positions: np.ndarray
    order: Traversal = Traversal.RASTER

    @property
    def n_patches(self) -> int:
        return self.data.shape[1]

    @property
    def patch_shape(self) -> tuple[int, int]:
        return self.data.shape[3], self.data.shape[4]

    def with_data(self, data: np.ndarray) -> "PatchSequence":
        return PatchSequence(data, self.grid_rows, self.grid_cols, self.positions.copy(), self.order)


def slice_patches(image, patch_h: int, patch_w: int, order=Traversal.RASTER) -> PatchSequence:
    """Cut ``(H, W)`` or ``(N, C, H, W)`` into non-overlapping tiles."""
    data = getattr(image, "data", image)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data[None, None]
    if data.ndim != 4:
        raise ValueError(f"expected a 2D image or (N, C, H, W) batch, got {data.shape}")
    n, c, h, w = data.shape
    if patch_h < 1 or patch_w < 1 or h % patch_h or w % patch_w:
        raise ValueError(f"image {h}x{w} is not divisible into {patch_h}x{patch_w} patches")
    b1, b2 = h // patch_h, w // patch_w
    tiles = data.reshape(n, c, b1, patch_h, b2, patch_w).transpose(0, 2, 4, 1, 3, 5)
    positions = tile_positions(b1, b2, order)
    seq = tiles[:, positions[:, 0], positions[:, 1]]
    return PatchSequence(np.ascontiguousarray(seq), b1, b2, positions, Traversal(order))


def stitch_patches(seq: PatchSequence) -> np.ndarray:
    """Inverse of :func:`slice_patches`; returns ``(N, C, H, W)``."""
    data = np.asarray(seq.data)
    if data.ndim != 5:
        raise ValueError(f"patch data must be 5D, got {data.shape}")
    b1, b2 = seq.grid_rows, seq.grid_cols
    if b1 < 1 or b2 < 1 or b1 * b2 != data.shape[1]:
        raise ValueError(f"grid {b1}x{b2} inconsistent with {data.shape[1]} patches")
    expected = tile_positions(b1, b2, seq.order)
    if np.shape(seq.positions) != expected.shape or not np.array_equal(seq.positions, expected):
        raise ValueError(f"patch positions do not follow {Traversal(seq.order).value} order")
    n, _, c, ph, pw = data.shape
    tiles = np.empty((n, b1, b2, c, ph, pw))
    tiles[:, expected[:, 0], expected[:, 1]] = data
    return tiles.transpose(0, 3, 1, 4, 2, 5).reshape(n, c, b1 * ph, b2 * pw)


# ---------------------------------------------------------------- MSD-GRU


def msd_gru_weight_shapes(config: MSDConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    c = config.in_channels
    for k in range(1, config.n_layers + 1):
        name = layer_name(k)
        for kern in ("Wz", "Wr", "Wh"):
            shapes[f"{name}.{kern}.kernel"] = (1, c + k - 1, 3, 3)
        for kern in ("Uz", "Ur", "Uh"):
            shapes[f"{name}.{kern}.kernel"] = (1, 1, 3, 3)
        for b in BIASES:
            shapes[f"{name}.{b}"] = (1,)
    shapes["out.kernel"] = (1, c + config.n_layers, 1, 1)
    shapes["out.bias"] = (1,)
    return shapes


def init_msd_gru_weights(config: MSDConfig, seed=0, lo: float = -0.25, hi: float = 0.25) -> dict:
    rng = np.random.default_rng(seed)
    return {n: uniform_init(s, lo, hi, rng) for n, s in msd_gru_weight_shapes(config).items()}


def identity_msd_gru_weights(config: MSDConfig) -> dict:
    weights = {n: np.zeros(s) for n, s in msd_gru_weight_shapes(config).items()}
    weights["out.kernel"][0, 0, 0, 0] = 1.0
    return weights


def check_msd_gru_weights(weights: dict, config: MSDConfig) -> None:
    expected = msd_gru_weight_shapes(config)
    if set(weights) != set(expected):
        missing = sorted(set(expected) - set(weights))
        extra = sorted(set(weights) - set(expected))
        raise ValueError(f"weights do not match config: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if np.shape(weights[name]) != shape:
            raise ValueError(f"{name}: shape {np.shape(weights[name])}, expected {shape}")


def block_params(weights: dict, config: MSDConfig, k: int) -> ConvGRUParams:
    name = layer_name(k)
    kw = {kern: weights[f"{name}.{kern}.kernel"] for kern in KERNELS}
    kw.update({b: weights[f"{name}.{b}"] for b in BIASES})
    return ConvGRUParams(dilation=dilation_of_layer(k, config.dilate_range), **kw)


def count_parameters_gru(weights: dict) -> int:
    """Number of stored scalars (every kernel, bias and the output layer)."""
    return int(sum(np.size(v) for v in weights.values()))


def _out_params(weights):
    return ConvLayerParams(weights["out.kernel"], weights["out.bias"])


def _seq_data(seq) -> np.ndarray:
    data = seq.data if isinstance(seq, PatchSequence) else np.asarray(seq, dtype=np.float64)
    if data.ndim != 5:
        raise ValueError(f"sequence data must be (N, T, C, h, w), got {data.shape}")
    return data


def msd_gru_forward(seq, weights: dict, config: MSDConfig, variant=GRUVariant.STANDARD, return_cache=False):
    """Run the unrolled network over every time step.

    Accepts a :class:`PatchSequence` (returns one with the same grid) or a raw
    ``(N, T, C, h, w)`` array (returns an array).
    """
    variant = GRUVariant(variant)
    check_msd_gru_weights(weights, config)
    data = _seq_data(seq)
    n, T, c, ph, pw = data.shape
    if c != config.in_channels:
        raise ValueError(f"sequence has {c} channels, network expects {config.in_channels}")
    L = config.n_layers
    blocks = [block_params(weights, config, k) for k in range(1, L + 1)]
    out_layer = _out_params(weights)
    states = [np.zeros((n, 1, ph, pw)) for _ in range(L)]
    out = np.empty((n, T, 1, ph, pw))
    steps = []
    for t in range(T):
        feats = np.empty((n, c + L, ph, pw))
        feats[:, :c] = data[:, t]
        prev = list(states)
        step_caches = []
        for k in range(L):
            h, cache = conv_gru_step(feats[:, : c + k], states[k], blocks[k], variant, return_cache=True)
            states[k] = h
            feats[:, c + k] = h[:, 0]
            step_caches.append(cache)
        out[:, t] = dilated_conv2d(feats, out_layer)
        steps.append((feats, prev, step_caches))
    result = seq.with_data(out) if isinstance(seq, PatchSequence) else out
    if return_cache:
        return result, steps
    return result


def msd_gru_backward(seq, weights: dict, config: MSDConfig, variant, upstream, cache=None):
    """Backpropagation through time; returns (sequence gradient, weight gradients)."""
    variant = GRUVariant(variant)
    data = _seq_data(seq)
    upstream = _seq_data(upstream)
    n, T, c, ph, pw = data.shape
    if upstream.shape != (n, T, 1, ph, pw):
        raise ValueError(f"upstream shape {upstream.shape} != {(n, T, 1, ph, pw)}")
    if cache is None:
        _, cache = msd_gru_forward(data, weights, config, variant, return_cache=True)
    L = config.n_layers
    blocks = [block_params(weights, config, k) for k in range(1, L + 1)]
    out_layer = _out_params(weights)
    grads = {name: np.zeros_like(np.asarray(w, dtype=np.float64)) for name, w in weights.items()}
    g_seq = np.zeros_like(data)
    g_state = [np.zeros((n, 1, ph, pw)) for _ in range(L)]
    for t in range(T - 1, -1, -1):
        feats, prev, step_caches = cache[t]
        g_feats, gk, gb = dilated_conv2d_backward(feats, out_layer, upstream[:, t])
        grads["out.kernel"] += gk
        grads["out.bias"] += gb
        for k in range(L - 1, -1, -1):
            g_h = g_feats[:, c + k : c + k + 1] + g_state[k]
            gx, gh, pg = conv_gru_backward(
                feats[:, : c + k], prev[k], blocks[k], variant, g_h, cache=step_caches[k]
            )
            g_feats[:, : c + k] += gx
            g_state[k] = gh
            name = layer_name(k + 1)
            for key, value in pg.items():
                grads[f"{name}.{key}.kernel" if key in KERNELS else f"{name}.{key}"] += value
        g_seq[:, t] = g_feats[:, :c]
    return g_seq, grads


# ---------------------------------------------------------------- cost model


@dataclass(frozen=True)
class CostReport:
    """Analytical per-block parameter and multiplication counts."""

    params_gru_block: int
    params_dnn_layer: int
    mults_gru_per_step: int
    mults_dnn_layer: int
    mults_gru_unrolled: int

    @property
    def unrolled_to_dnn_ratio(self) -> Fraction:
        return Fraction(self.mults_gru_unrolled, self.mults_dnn_layer)

    @property
    def dnn_to_step_ratio(self) -> Fraction:
        return Fraction(self.mults_dnn_layer, self.mults_gru_per_step)


def _checked(value: int) -> int:
    if value > INT64_MAX:
        raise OverflowError(f"count {value} exceeds the 64-bit range")
    return value


def cost_model(c: int, S1: int, S2: int, b1: int, b2: int) -> CostReport:
    """Closed-form costs for a ``c``-channel ``S1 x S2`` image cut into ``b1 x b2`` patches.

    A GRU block counts three 3x3 input convolutions over ``c`` channels and
    three 3x3 state convolutions over one channel; biases are not counted.
    """
    for name, v in (("c", c), ("S1", S1), ("S2", S2), ("b1", b1), ("b2", b2)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    if S1 % b1 or S2 % b2:
        raise ValueError(f"{S1}x{S2} is not divisible into a {b1}x{b2} patch grid")
    patch_px = (S1 // b1) * (S2 // b2)
    return CostReport(
        params_gru_block=_checked(3**3 * c + 3**3),
        params_dnn_layer=_checked(3**2 * c),
        mults_gru_per_step=_checked(patch_px * 3**3 * c + patch_px * 3**3),
        mults_dnn_layer=_checked(S1 * S2 * 3**2 * c),
        mults_gru_unrolled=_checked(S1 * S2 * 3**3 * c + S1 * S2 * 3**3),
    )
