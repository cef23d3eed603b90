"""Parallel-beam linear-interpolation (Joseph) projector and its exact adjoint.

Each ray ``x cos(theta) + y sin(theta) = s`` is traversed one pixel row (or
column, whichever axis the ray is closer to) at a time.  At every step the
ray position is linearly interpolated between the two straddled pixels, and
the step length ``pixel_size / max(|cos|, |sin|)`` is the path weight.  The
system matrix is never stored: the interpolation tables are rebuilt per angle
on every call.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .geometry import Geometry, Image, Sinogram

_num_threads: int | None = None


def set_num_threads(n: int | None) -> None:
    """Cap the worker threads used per projection call (``None``: env or 1)."""
    global _num_threads
    if n is not None and n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = n


def get_num_threads() -> int:
    if _num_threads is not None:
        return _num_threads
    env = os.environ.get("CTSTREAK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


class ProjectionOperator:
    """Matrix-free ``A`` (forward) and ``A^T`` (back) for one geometry.

    Works on plain arrays: images are ``(height, width)``, sinograms
    ``(n_angles, n_detectors)``.
    """

    def __init__(self, geometry: Geometry):
        self.geometry = geometry
        self._x, self._y = geometry.pixel_centers()
        self._s = geometry.detector_positions()

    @property
    def shape(self) -> tuple[int, int]:
        g = self.geometry
        return (g.n_angles * g.n_detectors, g.image_width * g.image_height)

    def _tables(self, angle: float):
        """Flat pixel indices and weights of the two straddled pixels per step."""
        g = self.geometry
        h, w, ps = g.image_height, g.image_width, g.pixel_size
        c, s = np.cos(angle), np.sin(angle)
        det = self._s[:, None]
        if abs(c) >= abs(s):
            u = (det - self._y[None, :] * s) / c / ps + (w - 1) / 2.0
            i0 = np.floor(u)
            frac = u - i0
            i0 = i0.astype(np.int64)
            i1 = i0 + 1
            ok0 = (i0 >= 0) & (i0 < w)
            ok1 = (i1 >= 0) & (i1 < w)
            base = (np.arange(h, dtype=np.int64) * w)[None, :]
            idx0 = base + np.clip(i0, 0, w - 1)
            idx1 = base + np.clip(i1, 0, w - 1)
            step = ps / abs(c)
        else:
            v = (h - 1) / 2.0 - (det - self._x[None, :] * c) / s / ps
            i0 = np.floor(v)
            frac = v - i0
            i0 = i0.astype(np.int64)
            i1 = i0 + 1
            ok0 = (i0 >= 0) & (i0 < h)
            ok1 = (i1 >= 0) & (i1 < h)
            col = np.arange(w, dtype=np.int64)[None, :]
            idx0 = np.clip(i0, 0, h - 1) * w + col
            idx1 = np.clip(i1, 0, h - 1) * w + col
            step = ps / abs(s)
        w0 = np.where(ok0, (1.0 - frac) * step, 0.0)
        w1 = np.where(ok1, frac * step, 0.0)
        return idx0, idx1, w0, w1

    def _forward_angle(self, flat: np.ndarray, a: int) -> np.ndarray:
        idx0, idx1, w0, w1 = self._tables(self.geometry.angles[a])
        return (w0 * flat[idx0] + w1 * flat[idx1]).sum(axis=1)

    def _back_angle(self, sino: np.ndarray, a: int) -> np.ndarray:
        idx0, idx1, w0, w1 = self._tables(self.geometry.angles[a])
        row = sino[a][:, None]
        n = self.geometry.image_width * self.geometry.image_height
        return np.bincount(idx0.ravel(), (w0 * row).ravel(), n) + np.bincount(
            idx1.ravel(), (w1 * row).ravel(), n
        )

    def _map_angles(self, fn):
        n = self.geometry.n_angles
        threads = min(get_num_threads(), n)
        if threads <= 1:
            return map(fn, range(n))
        pool = ThreadPoolExecutor(max_workers=threads)
        try:
            return list(pool.map(fn, range(n)))
        finally:
            pool.shutdown()

    def forward(self, image: np.ndarray) -> np.ndarray:
        g = self.geometry
        image = np.asarray(image, dtype=np.float64)
        if image.shape != g.image_shape:
            raise ValueError(f"image shape {image.shape} does not match geometry {g.image_shape}")
        flat = image.ravel()
        out = np.empty(g.sinogram_shape)
        for a, row in enumerate(self._map_angles(lambda a: self._forward_angle(flat, a))):
            out[a] = row
        return out

    def adjoint(self, sinogram: np.ndarray) -> np.ndarray:
        g = self.geometry
        sinogram = np.asarray(sinogram, dtype=np.float64)
        if sinogram.shape != g.sinogram_shape:
            raise ValueError(
                f"sinogram shape {sinogram.shape} does not match geometry {g.sinogram_shape}"
            )
        acc = np.zeros(g.image_width * g.image_height)
        # fold in angle order so the result does not depend on the thread count
        for part in self._map_angles(lambda a: self._back_angle(sinogram, a)):
            acc += part
        return acc.reshape(g.image_shape)

    def row_sums(self) -> np.ndarray:
        return self.forward(np.ones(self.geometry.image_shape))

    def col_sums(self) -> np.ndarray:
        return self.adjoint(np.ones(self.geometry.sinogram_shape))


def _image_data(image, geometry: Geometry) -> np.ndarray:
    data = image.data if isinstance(image, Image) else np.asarray(image, dtype=np.float64)
    if data.shape != geometry.image_shape:
        raise ValueError(f"image shape {data.shape} does not match geometry {geometry.image_shape}")
    return data


def _sino_data(sinogram, geometry: Geometry) -> np.ndarray:
    data = sinogram.data if isinstance(sinogram, Sinogram) else np.asarray(sinogram, dtype=np.float64)
    if data.shape != geometry.sinogram_shape:
        raise ValueError(
            f"sinogram shape {data.shape} does not match geometry {geometry.sinogram_shape}"
        )
    return data


def forward_project(image, geometry: Geometry) -> Sinogram:
    data = ProjectionOperator(geometry).forward(_image_data(image, geometry))
    return Sinogram(data, geometry.angles.copy(), geometry.detector_spacing)


def back_project(sinogram, geometry: Geometry) -> Image:
    data = ProjectionOperator(geometry).adjoint(_sino_data(sinogram, geometry))
    return Image(data, geometry.pixel_size)


def row_sums(geometry: Geometry) -> Sinogram:
    """Total pixel weight along every ray (``A @ 1``)."""
    return Sinogram(ProjectionOperator(geometry).row_sums(), geometry.angles.copy(), geometry.detector_spacing)


def col_sums(geometry: Geometry) -> Image:
    """Total ray weight through every pixel (``A.T @ 1``)."""
    return Image(ProjectionOperator(geometry).col_sums(), geometry.pixel_size)
