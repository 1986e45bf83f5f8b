"""Sinogram simulation: forward projection and exactly calibrated noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import FanBeamGeometry, GeometryParams
from .phantom import ImageGrid
from .projector import assemble_stack


@dataclass(frozen=True)
class Sinogram:
    """Measurement vector of line integrals, partitioned into view blocks."""

    values: np.ndarray
    view_offsets: np.ndarray  # index of each view's first row

    def __post_init__(self):
        vals = np.asarray(self.values, float).ravel().copy()
        offs = np.asarray(self.view_offsets, np.int64).ravel().copy()
        if not np.all(np.isfinite(vals)):
            raise ValueError("sinogram values must be finite")
        if offs.size == 0 or offs[0] != 0 or np.any(np.diff(offs) <= 0):
            raise ValueError("view_offsets must start at 0 and strictly increase")
        if vals.size % offs.size or offs[-1] + vals.size // offs.size != vals.size:
            raise ValueError("view_offsets inconsistent with value count")
        vals.flags.writeable = False
        offs.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "view_offsets", offs)

    @property
    def n_views(self) -> int:
        return self.view_offsets.shape[0]

    @property
    def rows_per_view(self) -> int:
        return self.values.shape[0] // self.n_views

    def view(self, i):
        """The i-th view's block of measurements."""
        start = self.view_offsets[i]
        return self.values[start:start + self.rows_per_view]

    def with_values(self, values):
        return Sinogram(values=values, view_offsets=self.view_offsets)


def beer_transmit(i0, mu_d):
    """Transmitted energy i0 * exp(-mu_d) after attenuation along a path."""
    if i0 <= 0:
        raise ValueError(f"initial energy must be positive, got {i0}")
    if mu_d < 0:
        raise ValueError(f"path integral must be >= 0, got {mu_d}")
    return i0 * np.exp(-mu_d)


def forward_sinogram(img: ImageGrid, params: GeometryParams,
                     geom: FanBeamGeometry) -> Sinogram:
    """Line integrals b = A(p) x, view blocks in view order."""
    if img.n != geom.n_pixels:
        raise ValueError(f"image side {img.n} != geometry n_pixels {geom.n_pixels}")
    if params.n_views != geom.n_views:
        raise ValueError("params and geometry disagree on the view count")
    op = assemble_stack(params, geom)
    offsets = np.arange(geom.n_views, dtype=np.int64) * geom.n_detectors
    return Sinogram(values=op.apply(img.values), view_offsets=offsets)


def add_noise(b: Sinogram, level, rng_seed) -> Sinogram:
    """Add Gaussian noise scaled so the realized l2 ratio equals `level` exactly."""
    if level < 0:
        raise ValueError(f"noise level must be >= 0, got {level}")
    if level == 0:
        return b
    b_norm = np.linalg.norm(b.values)
    if b_norm == 0:
        raise ValueError("cannot add relative noise to an all-zero sinogram")
    g = np.random.default_rng(rng_seed).standard_normal(b.values.shape[0])
    return b.with_values(b.values + (level * b_norm / np.linalg.norm(g)) * g)


def save_csv(b: Sinogram, path):
    """Write the sinogram as CSV, one row of detector readings per view."""
    rows = b.values.reshape(b.n_views, b.rows_per_view)
    with open(path, "w") as f:
        for row in rows:
            f.write(",".join(f"{v:.14e}" for v in row) + "\n")


def load_csv(path) -> Sinogram:
    """Read a sinogram written by save_csv."""
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    arr = np.asarray(rows, float)
    offsets = np.arange(arr.shape[0], dtype=np.int64) * arr.shape[1]
    return Sinogram(values=arr.ravel(), view_offsets=offsets)
