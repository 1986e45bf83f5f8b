"""Test images on the [-1, 1]^2 raster and 16-bit binary PGM I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class PgmFormatError(ValueError):
    """Malformed or unsupported PGM container."""


@dataclass(frozen=True)
class ImageGrid:
    """Square attenuation-coefficient raster, flattened row-major.

    Row 0 is the top of the image (y = +1 edge); see the pixel convention in
    the projector module.
    """

    n: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, float).ravel()
        if vals.shape != (self.n * self.n,):
            raise ValueError(f"expected {self.n * self.n} values, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("image values must be finite")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def as_image(self):
        """The raster as an (n, n) array, row 0 on top."""
        return self.values.reshape(self.n, self.n)

    @classmethod
    def from_image(cls, arr):
        arr = np.asarray(arr, float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"expected a square 2-D array, got shape {arr.shape}")
        return cls(n=arr.shape[0], values=arr.ravel())


def pixel_centers(n):
    """Pixel-center coordinates: X, Y meshgrids of shape (n, n), row 0 on top."""
    h = 2.0 / n
    xs = -1.0 + h * (np.arange(n) + 0.5)
    ys = 1.0 - h * (np.arange(n) + 0.5)
    return np.meshgrid(xs, ys)


# Modified (high-contrast) Shepp-Logan ellipse table:
# additive intensity, x semi-axis, y semi-axis, center x, center y, rotation deg.
SHEPP_LOGAN_ELLIPSES = (
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6050, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


def add_ellipse(img, value, a, b, x0, y0, phi_deg):
    """Add `value` to all pixels whose center lies inside the ellipse."""
    n = img.shape[0]
    x, y = pixel_centers(n)
    phi = math.radians(phi_deg)
    xr = (x - x0) * math.cos(phi) + (y - y0) * math.sin(phi)
    yr = -(x - x0) * math.sin(phi) + (y - y0) * math.cos(phi)
    img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value


def shepp_logan(n) -> ImageGrid:
    """Modified Shepp-Logan phantom sampled at pixel centers, values in [0, 1]."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    img = np.zeros((n, n))
    for value, a, b, x0, y0, phi in SHEPP_LOGAN_ELLIPSES:
        add_ellipse(img, value, a, b, x0, y0, phi)
    return ImageGrid.from_image(img)


def disk(n, radius, value) -> ImageGrid:
    """Centered disk: pixel centers within `radius` of the origin get `value`."""
    if not 0 < radius <= 1:
        raise ValueError(f"radius must be in (0, 1], got {radius}")
    x, y = pixel_centers(n)
    img = np.where(x * x + y * y <= radius * radius, float(value), 0.0)
    return ImageGrid.from_image(img)


def composite(n) -> ImageGrid:
    """Stock test image: centered disk plus an off-center rotated ellipse."""
    x, y = pixel_centers(n)
    img = np.where(x * x + y * y <= 0.55 ** 2, 0.35, 0.0)
    add_ellipse(img, 0.45, 0.28, 0.16, 0.25, -0.2, 30.0)
    return ImageGrid.from_image(img)


PHANTOMS = {
    "shepp_logan": shepp_logan,
    "disk": lambda n: disk(n, 0.5, 1.0),
    "composite": composite,
}


def write_pgm(img: ImageGrid, path):
    """Write a 16-bit binary PGM (P5), mapping [0, max] to [0, 65535].

    Negative values are clipped at zero; an all-zero image is written as-is.
    """
    vals = np.clip(img.as_image(), 0.0, None)
    peak = vals.max()
    scale = 65535.0 / peak if peak > 0 else 1.0
    raster = np.round(vals * scale).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.n} {img.n}\n65535\n".encode("ascii"))
        f.write(raster.tobytes())


def read_pgm(path) -> ImageGrid:
    """Read a square 16-bit binary PGM written by write_pgm; values in [0, 1]."""
    with open(path, "rb") as f:
        raw = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(raw):
            raise PgmFormatError("truncated PGM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":  # comment to end of line
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    if tokens[0] != b"P5":
        raise PgmFormatError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise PgmFormatError("non-numeric PGM header field") from exc
    if width != height:
        raise PgmFormatError(f"image is not square: {width} x {height}")
    if maxval != 65535:
        raise PgmFormatError(f"expected 16-bit samples (maxval 65535), got {maxval}")
    data = raw[pos + 1:]  # single whitespace byte separates header and raster
    expected = width * height * 2
    if len(data) != expected:
        raise PgmFormatError(f"expected {expected} raster bytes, got {len(data)}")
    raster = np.frombuffer(data, dtype=">u2").astype(float) / 65535.0
    return ImageGrid(n=width, values=raster)
