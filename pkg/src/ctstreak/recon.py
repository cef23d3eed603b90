"""Beer-Lambert transforms and classical reconstruction: FBP, SIRT, CGLS, TV-min."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import Geometry, Image, Sinogram
from .projector import ProjectionOperator, _image_data, _sino_data

WEIGHT_FLOOR = 1e-12


class Method(str, Enum):
    FBP = "fbp"
    SIRT = "sirt"
    CGLS = "cgls"
    TVMIN = "tvmin"


@dataclass(frozen=True)
class ReconConfig:
    method: Method = Method.SIRT
    iterations: int = 100
    tv_weight: float = 0.1
    filter: str = "ram-lak"

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.method is not Method.FBP and self.iterations < 1:
            raise ValueError("iterative methods need iterations >= 1")
        if self.tv_weight < 0:
            raise ValueError("tv_weight must be >= 0")
        if self.filter != "ram-lak":
            raise ValueError(f"unsupported filter {self.filter!r}")


def transmit(p: Sinogram, I0: float) -> Sinogram:
    """Expected detector counts ``I0 * exp(-p)``."""
    if not I0 > 0:
        raise ValueError(f"I0 must be positive, got {I0}")
    if not np.all(np.isfinite(p.data)):
        raise ValueError("projection data must be finite")
    return Sinogram(I0 * np.exp(-p.data), p.angles, p.detector_spacing)


def log_normalize(counts: Sinogram, I0: float) -> Sinogram:
    """``-ln(I / I0)``, with counts below one photon clamped to one."""
    if not I0 > 0:
        raise ValueError(f"I0 must be positive, got {I0}")
    return Sinogram(-np.log(np.maximum(counts.data, 1.0) / I0), counts.angles, counts.detector_spacing)


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def ramp_kernel(n_pad: int, spacing: float) -> np.ndarray:
    """Frequency response |q| on the FFT grid (q in cycles per unit length)."""
    return np.abs(np.fft.fftfreq(n_pad, d=spacing))


def ramp_filter(sino: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Ram-Lak filter each row, zero-padded to a power of two >= 2 * n_detectors."""
    n_det = sino.shape[-1]
    n_pad = _next_pow2(2 * n_det)
    spec = np.fft.fft(sino, n=n_pad, axis=-1) * ramp_kernel(n_pad, spacing)
    return np.fft.ifft(spec, axis=-1).real[..., :n_det]


def pixel_driven_backprojection(rows: np.ndarray, geometry: Geometry) -> np.ndarray:
    """Sum over angles of each row linearly interpolated at ``x cos + y sin``."""
    g = geometry
    x, y = g.pixel_centers()
    grid = np.arange(-1, g.n_detectors + 1, dtype=np.float64)
    out = np.zeros(g.image_shape)
    for a, theta in enumerate(g.angles):
        t = (x[None, :] * math.cos(theta) + y[:, None] * math.sin(theta)) / g.detector_spacing
        t += (g.n_detectors - 1) / 2.0
        padded = np.concatenate(([0.0], rows[a], [0.0]))
        out += np.interp(t, grid, padded, left=0.0, right=0.0)
    return out


def fbp(sinogram, geometry: Geometry) -> Image:
    """Filtered backprojection with an unwindowed ramp filter."""
    data = _sino_data(sinogram, geometry)
    filtered = ramp_filter(data, geometry.detector_spacing)
    img = pixel_driven_backprojection(filtered, geometry) * (math.pi / geometry.n_angles)
    return Image(img, geometry.pixel_size)


def _inverse_weights(w: np.ndarray) -> np.ndarray:
    inv = np.zeros_like(w)
    mask = w >= WEIGHT_FLOOR
    inv[mask] = 1.0 / w[mask]
    return inv


def sirt(
    sinogram,
    geometry: Geometry,
    iterations: int = 100,
    initial=None,
    residuals: list | None = None,
) -> Image:
    """SIRT: ``x += C A^T (R (p - A x))`` with inverse column/row sums C, R.

    Rays and pixels whose weight sum is below ``WEIGHT_FLOOR`` are left out of
    the update.  If ``residuals`` is a list, ``||p - A x||`` before every
    update is appended to it.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    p = _sino_data(sinogram, geometry)
    op = ProjectionOperator(geometry)
    R = _inverse_weights(op.row_sums())
    C = _inverse_weights(op.col_sums())
    x = np.zeros(geometry.image_shape) if initial is None else _image_data(initial, geometry).copy()
    for _ in range(iterations):
        res = p - op.forward(x)
        if residuals is not None:
            residuals.append(float(np.linalg.norm(res)))
        x += C * op.adjoint(R * res)
    return Image(x, geometry.pixel_size)


def cgls(sinogram, geometry: Geometry, iterations: int = 50, residuals: list | None = None) -> Image:
    """Conjugate gradients on the normal equations, started from zero."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    b = _sino_data(sinogram, geometry)
    op = ProjectionOperator(geometry)
    x = np.zeros(geometry.image_shape)
    r = b.copy()
    s = op.adjoint(r)
    d = s.copy()
    gamma = float(np.vdot(s, s))
    if residuals is not None:
        residuals.append(float(np.linalg.norm(r)))
    for _ in range(iterations):
        if gamma == 0.0:
            break
        q = op.forward(d)
        qq = float(np.vdot(q, q))
        if qq == 0.0:
            break
        alpha = gamma / qq
        x += alpha * d
        r -= alpha * q
        s = op.adjoint(r)
        gamma_new = float(np.vdot(s, s))
        d = s + (gamma_new / gamma) * d
        gamma = gamma_new
        if residuals is not None:
            residuals.append(float(np.linalg.norm(r)))
    return Image(x, geometry.pixel_size)


def gradient(x: np.ndarray) -> np.ndarray:
    """Forward differences, zero across the last row/column."""
    g = np.zeros((2,) + x.shape)
    g[0, :-1, :] = x[1:, :] - x[:-1, :]
    g[1, :, :-1] = x[:, 1:] - x[:, :-1]
    return g


def divergence(g: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`gradient`."""
    gy, gx = g
    d = np.zeros(gy.shape)
    d[:-1, :] += gy[:-1, :]
    d[1:, :] -= gy[:-1, :]
    d[:, :-1] += gx[:, :-1]
    d[:, 1:] -= gx[:, :-1]
    return d


def total_variation(x) -> float:
    """Isotropic TV with forward differences."""
    data = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    g = gradient(data)
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())


def operator_norm(
    op: ProjectionOperator, with_gradient: bool = True, n_iter: int = 50, scale: float = 1.0
) -> float:
    """Power-method estimate of ``||[scale * A; grad]||`` from a fixed start vector."""
    v = np.ones(op.geometry.image_shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = scale**2 * op.adjoint(op.forward(v))
        if with_gradient:
            w -= divergence(gradient(v))
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return math.sqrt(lam)


def tvmin(
    sinogram,
    geometry: Geometry,
    iterations: int = 200,
    tv_weight: float = 0.1,
    nonnegative: bool = True,
) -> Image:
    """Chambolle-Pock for ``0.5 ||A x - p||^2 + tv_weight * TV(x)``.

    The data term is measured in pixel units (``A`` and ``p`` divided by the
    pixel size), so ``tv_weight`` means the same thing at every resolution and
    field of view, and the result does not depend on the pixel size.

    The iterate is clipped to ``x >= 0`` after every primal step unless
    ``nonnegative`` is False.  With ``tv_weight=0`` and no clipping the
    iterates stay in the range of ``A^T``, so they approach the same
    minimum-norm least-squares solution as CGLS.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if tv_weight < 0:
        raise ValueError("tv_weight must be >= 0")
    op = ProjectionOperator(geometry)
    scale = 1.0 / geometry.pixel_size
    p = scale * _sino_data(sinogram, geometry)
    L = operator_norm(op, scale=scale)
    if L == 0.0:
        return Image(np.zeros(geometry.image_shape), geometry.pixel_size)
    tau = sigma = 0.99 / L
    x = np.zeros(geometry.image_shape)
    xbar = x.copy()
    y_data = np.zeros_like(p)
    y_tv = np.zeros((2,) + geometry.image_shape)
    for _ in range(iterations):
        y_data = (y_data + sigma * (scale * op.forward(xbar) - p)) / (1.0 + sigma)
        y_tv += sigma * gradient(xbar)
        if tv_weight > 0:
            norm = np.sqrt(y_tv[0] ** 2 + y_tv[1] ** 2)
            y_tv /= np.maximum(1.0, norm / tv_weight)
        else:
            y_tv[:] = 0.0
        x_new = x - tau * (scale * op.adjoint(y_data) - divergence(y_tv))
        if nonnegative:
            np.maximum(x_new, 0.0, out=x_new)
        xbar = 2.0 * x_new - x
        x = x_new
    return Image(x, geometry.pixel_size)


def reconstruct(sinogram, geometry: Geometry, config: ReconConfig) -> Image:
    if config.method is Method.FBP:
        return fbp(sinogram, geometry)
    if config.method is Method.SIRT:
        return sirt(sinogram, geometry, config.iterations)
    if config.method is Method.CGLS:
        return cgls(sinogram, geometry, config.iterations)
    return tvmin(sinogram, geometry, config.iterations, config.tv_weight)
