"""Acquisition geometry, image containers and synthetic phantoms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.special import erfc


class FormatError(ValueError):
    """Raised when a file is readable but not in a supported format."""


@dataclass
class Image:
    """2D attenuation map, stored row-major as ``data[row, col]``.

    Row 0 is the top of the image (largest y coordinate).
    """

    data: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"image data must be 2D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class Sinogram:
    """Projection values indexed ``data[angle, detector]``."""

    data: np.ndarray
    angles: np.ndarray
    detector_spacing: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] != self.angles.size:
            raise ValueError(
                f"sinogram shape {self.data.shape} inconsistent with {self.angles.size} angles"
            )
        if self.angles.size and (
            np.any(np.diff(self.angles) <= 0) or self.angles[0] < 0 or self.angles[-1] >= np.pi
        ):
            raise ValueError("angles must be strictly increasing in [0, pi)")

    @property
    def n_angles(self) -> int:
        return self.data.shape[0]

    @property
    def n_detectors(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Geometry:
    """Parallel-beam acquisition with equiangular views over ``[0, angular_span)``.

    The detector array and the image are both centred on the rotation axis.
    """

    n_angles: int
    n_detectors: int
    image_width: int
    image_height: int
    angular_span: float = math.pi
    detector_spacing: float = 1.0
    pixel_size: float = 1.0
    angles: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("n_angles", "n_detectors", "image_width", "image_height"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not (0 < self.angular_span <= math.pi):
            raise ValueError("angular_span must lie in (0, pi]")
        if self.detector_spacing <= 0 or self.pixel_size <= 0:
            raise ValueError("detector_spacing and pixel_size must be positive")
        angles = np.arange(self.n_angles, dtype=np.float64) * (self.angular_span / self.n_angles)
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.image_height, self.image_width)

    @property
    def sinogram_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_detectors)

    def detector_positions(self) -> np.ndarray:
        k = np.arange(self.n_detectors, dtype=np.float64)
        return (k - (self.n_detectors - 1) / 2.0) * self.detector_spacing

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (x of each column, y of each row) in physical units."""
        cols = np.arange(self.image_width, dtype=np.float64)
        rows = np.arange(self.image_height, dtype=np.float64)
        x = (cols - (self.image_width - 1) / 2.0) * self.pixel_size
        y = ((self.image_height - 1) / 2.0 - rows) * self.pixel_size
        return x, y

    def empty_sinogram(self) -> Sinogram:
        return Sinogram(np.zeros(self.sinogram_shape), self.angles.copy(), self.detector_spacing)


def make_parallel_geometry(
    n_angles: int,
    n_detectors: int,
    image_size: int,
    pixel_size: float = 1.0,
    detector_spacing: float | None = None,
) -> Geometry:
    """Square-image parallel-beam geometry with angles ``k*pi/n_angles``.

    ``detector_spacing`` defaults to ``pixel_size``.
    """
    for name, value in (("n_angles", n_angles), ("n_detectors", n_detectors), ("image_size", image_size)):
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    if detector_spacing is None:
        detector_spacing = pixel_size
    return Geometry(
        n_angles=int(n_angles),
        n_detectors=int(n_detectors),
        image_width=int(image_size),
        image_height=int(image_size),
        detector_spacing=float(detector_spacing),
        pixel_size=float(pixel_size),
    )


# (intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees); Toft's
# high-contrast variant, which already lies within [0, 1].
SHEPP_LOGAN_ELLIPSES = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


def _unit_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    # pixel centres on [-1, 1]^2, y pointing up
    t = (np.arange(size) + 0.5) * (2.0 / size) - 1.0
    return np.meshgrid(t, -t)


def ellipse_mask(x, y, a, b, x0, y0, phi):
    """Boolean mask of points (x, y) inside the rotated ellipse."""
    c, s = math.cos(phi), math.sin(phi)
    dx, dy = x - x0, y - y0
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def render_ellipses(size: int, ellipses) -> np.ndarray:
    x, y = _unit_grid(size)
    img = np.zeros((size, size))
    for value, a, b, x0, y0, phi_deg in ellipses:
        img[ellipse_mask(x, y, a, b, x0, y0, math.radians(phi_deg))] += value
    return np.clip(img, 0.0, 1.0)


def shepp_logan(size: int) -> Image:
    """Shepp-Logan head phantom sampled at pixel centres."""
    if size < 16:
        raise ValueError(f"phantom size must be >= 16, got {size}")
    return Image(render_ellipses(size, SHEPP_LOGAN_ELLIPSES))


def random_ellipse_phantom(size: int, n_ellipses: int, seed: int) -> Image:
    """Additive composite of seeded random ellipses inside the unit disk."""
    if size < 16:
        raise ValueError(f"phantom size must be >= 16, got {size}")
    if n_ellipses < 1:
        raise ValueError(f"n_ellipses must be >= 1, got {n_ellipses}")
    rng = np.random.default_rng(seed)
    ellipses = []
    for _ in range(n_ellipses):
        r = 0.4 * math.sqrt(rng.uniform())
        t = rng.uniform(0.0, 2.0 * math.pi)
        a, b = rng.uniform(0.05, 0.45, size=2)
        ellipses.append(
            (
                rng.uniform(0.1, 0.6),
                a,
                b,
                r * math.cos(t),
                r * math.sin(t),
                rng.uniform(0.0, 180.0),
            )
        )
    return Image(render_ellipses(size, ellipses))


def disk_phantom(
    size: int, radius: float, value: float = 1.0, edge_sigma: float = 0.0, supersample: int = 8
) -> Image:
    """Centred disk, radius in pixels.

    With ``edge_sigma == 0`` edge pixels hold their exact area coverage
    (estimated on a ``supersample`` grid).  A positive ``edge_sigma`` gives the
    disk a Gaussian-blurred edge of that width instead, which keeps the object
    close to band-limited.
    """
    c = np.arange(size) - (size - 1) / 2.0
    if edge_sigma > 0:
        rho = np.hypot(c[:, None], c[None, :])
        return Image(value * 0.5 * erfc((rho - radius) / (edge_sigma * math.sqrt(2.0))))
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    fine = (c[:, None] + offsets[None, :]).ravel()
    inside = (fine[:, None] ** 2 + fine[None, :] ** 2) <= radius**2
    cover = inside.reshape(size, supersample, size, supersample).mean(axis=(1, 3))
    return Image(value * cover)


def resize_bilinear(data: np.ndarray, size: int) -> np.ndarray:
    """Pixel-centre aligned bilinear resampling to ``size x size``."""
    h, w = data.shape
    if (h, w) == (size, size):
        return data.astype(np.float64, copy=True)
    rr = (np.arange(size) + 0.5) * (h / size) - 0.5
    cc = (np.arange(size) + 0.5) * (w / size) - 0.5
    grid = np.meshgrid(rr, cc, indexing="ij")
    return map_coordinates(data.astype(np.float64), grid, order=1, mode="nearest")


def _to_gray(arr: np.ndarray) -> tuple[np.ndarray, float]:
    if arr.dtype == np.uint8:
        peak = 255.0
    elif arr.dtype in (np.uint16, np.int32, np.int64) and arr.ndim == 2:
        peak = 65535.0
    else:
        raise FormatError(f"unsupported pixel type {arr.dtype}")
    arr = arr.astype(np.float64)
    if arr.ndim == 3:
        if arr.shape[2] in (3, 4):
            arr = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
        elif arr.shape[2] == 2:
            arr = arr[..., 0]
        else:
            raise FormatError(f"unsupported channel count {arr.shape[2]}")
    return arr, peak


def ingest_image(path, size: int) -> Image:
    """Load a PNG as a ``size x size`` grayscale image scaled to [0, 1]."""
    from PIL import Image as PILImage, UnidentifiedImageError

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with PILImage.open(path) as im:
            if im.format != "PNG":
                raise FormatError(f"{path}: unsupported format {im.format}, expected PNG")
            if im.mode == "P":
                im = im.convert("RGB")
            arr = np.array(im)
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a readable image") from exc
    except (OSError, SyntaxError) as exc:
        raise OSError(f"{path}: corrupt image ({exc})") from exc
    gray, peak = _to_gray(arr)
    return Image(np.clip(resize_bilinear(gray, size) / peak, 0.0, 1.0))
