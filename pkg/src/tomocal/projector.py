"""Sparse per-view system blocks of exact ray-pixel intersection lengths.

Each view contributes one block row A(theta_i, R_i): one sparse row per
detector ray holding the Euclidean chord length of that ray inside each pixel
of the [-1, 1]^2 grid.  Lengths come from parametric grid traversal (sorted
crossings of the two gridline families), so a row's entries sum to the ray's
total chord length through the square.

Pixel convention: cell (row i, col j) of an n x n grid covers
x in [-1 + j*h, -1 + (j+1)*h], y in [1 - (i+1)*h, 1 - i*h] with h = 2/n
(row 0 at the top), flattened row-major to index i*n + j.  This matches the
raster layout of phantom images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import FanBeamGeometry, GeometryParams, make_rays

# Parametric crossings closer than this are merged to avoid zero-length
# segments when rays run along gridlines (e.g. axis-aligned views).
MERGE_TOL = 1e-14


def _trace_fan(grid_n, source, directions):
    """Trace a batch of unit-direction rays from one source point.

    Returns CSR triplets (data, indices, indptr) for a block of
    len(directions) rows over grid_n**2 pixel columns.
    """
    n = int(grid_n)
    h = 2.0 / n
    sx, sy = float(source[0]), float(source[1])
    d = np.atleast_2d(np.asarray(directions, float))
    k = d.shape[0]
    dx, dy = d[:, 0], d[:, 1]

    # Entry/exit parameters of each ray in the square (slab intersection,
    # restricted to the forward half-line t >= 0).
    def axis_range(s, dc):
        parallel = np.abs(dc) < 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (-1.0 - s) / dc
            t1 = (1.0 - s) / dc
        lo = np.minimum(t0, t1)
        hi = np.maximum(t0, t1)
        inside = abs(s) <= 1.0
        lo = np.where(parallel, -np.inf if inside else np.inf, lo)
        hi = np.where(parallel, np.inf if inside else -np.inf, hi)
        return lo, hi

    x_lo, x_hi = axis_range(sx, dx)
    y_lo, y_hi = axis_range(sy, dy)
    t_in = np.maximum(np.maximum(x_lo, y_lo), 0.0)
    t_out = np.minimum(x_hi, y_hi)
    hit = t_out - t_in > MERGE_TOL
    t_in = np.where(hit, t_in, 0.0)
    t_out = np.where(hit, t_out, 0.0)

    # Crossing parameters with both gridline families, clipped into
    # [t_in, t_out]; out-of-range crossings collapse onto the endpoints and
    # produce zero-length segments that are dropped below.
    lines = -1.0 + h * np.arange(n + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = (lines[None, :] - sx) / dx[:, None]
        ty = (lines[None, :] - sy) / dy[:, None]
    t_all = np.concatenate([tx, ty, t_in[:, None], t_out[:, None]], axis=1)
    t_all = np.where(np.isfinite(t_all), t_all, 0.0)
    t_all = np.clip(t_all, t_in[:, None], t_out[:, None])
    t_all.sort(axis=1)

    seg = np.diff(t_all, axis=1)
    valid = (seg > MERGE_TOL) & hit[:, None]

    t_mid = 0.5 * (t_all[:, 1:] + t_all[:, :-1])
    px = sx + t_mid * dx[:, None]
    py = sy + t_mid * dy[:, None]
    col = np.clip(np.floor((px + 1.0) / h), 0, n - 1).astype(np.int64)
    row = np.clip(np.floor((1.0 - py) / h), 0, n - 1).astype(np.int64)
    flat = row * n + col

    counts = valid.sum(axis=1)
    indptr = np.zeros(k + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    ray_idx, seg_idx = np.nonzero(valid)  # row-major: grouped by ray
    data = seg[ray_idx, seg_idx]
    indices = flat[ray_idx, seg_idx]
    return data, indices, indptr


def trace_ray(grid_n, ray):
    """Chord lengths of a single ray `(source, unit_direction)`.

    Returns (pixel_indices, lengths); both empty when the ray misses the
    square.  Entries sum to the total chord length through [-1, 1]^2.
    """
    source, direction = ray
    direction = np.asarray(direction, float)
    norm = np.linalg.norm(direction)
    if not np.isclose(norm, 1.0, rtol=1e-9, atol=0):
        raise ValueError(f"ray direction must be a unit vector, |d| = {norm}")
    data, indices, _ = _trace_fan(grid_n, source, direction[None, :])
    return indices, data


@dataclass(frozen=True)
class ViewBlock:
    """One view's sparse system block: n_detectors rows of chord lengths."""

    matrix: sp.csr_matrix
    theta: float
    r: float

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]


def assemble_view(theta, r, geom: FanBeamGeometry) -> ViewBlock:
    """Build A(theta, r): one row per detector ray, ordered by detector index."""
    source, directions = make_rays(theta, r, geom)
    data, indices, indptr = _trace_fan(geom.n_pixels, source, directions)
    matrix = sp.csr_matrix((data, indices, indptr),
                           shape=(geom.n_detectors, geom.n_cells))
    matrix.sort_indices()
    return ViewBlock(matrix=matrix, theta=float(theta), r=float(r))


@dataclass
class StackedOperator:
    """A(p): ordered stack of per-view blocks acting on image vectors."""

    blocks: list
    _stacked: sp.csr_matrix = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("StackedOperator needs at least one block")
        cols = {b.n_cols for b in self.blocks}
        if len(cols) != 1:
            raise ValueError("all blocks must share the same column count")

    @property
    def n_views(self) -> int:
        return len(self.blocks)

    @property
    def shape(self):
        m = sum(b.n_rows for b in self.blocks)
        return (m, self.blocks[0].n_cols)

    @property
    def stacked(self) -> sp.csr_matrix:
        if self._stacked is None:
            self._stacked = sp.vstack([b.matrix for b in self.blocks],
                                      format="csr")
        return self._stacked

    def view_slice(self, i) -> slice:
        start = sum(b.n_rows for b in self.blocks[:i])
        return slice(start, start + self.blocks[i].n_rows)

    def apply(self, x):
        """y = A x."""
        x = np.asarray(x, float)
        if x.shape != (self.shape[1],):
            raise ValueError(f"x has shape {x.shape}, expected ({self.shape[1]},)")
        return self.stacked @ x

    def apply_adjoint(self, y):
        """x = A^T y."""
        y = np.asarray(y, float)
        if y.shape != (self.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({self.shape[0]},)")
        return self.stacked.T @ y

    # aliases so the operator drops into scipy-style solver code
    matvec = apply
    rmatvec = apply_adjoint


def assemble_stack(params: GeometryParams, geom: FanBeamGeometry) -> StackedOperator:
    """Assemble A(p) as the stack of per-view blocks, in view order."""
    blocks = [assemble_view(params.thetas[i], params.radii[i], geom)
              for i in range(params.n_views)]
    return StackedOperator(blocks=blocks)


def dump_coo(block: ViewBlock, stream):
    """Debug dump of a block as 'row col value' text lines."""
    coo = block.matrix.tocoo()
    for i, j, v in zip(coo.row, coo.col, coo.data):
        stream.write(f"{i} {j} {v:.17g}\n")
