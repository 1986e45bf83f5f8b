"""Fan-beam acquisition geometry: source poses, box bounds, perturbations, rays.

Conventions used throughout the package:

* the image occupies the square [-1, 1]^2 (domain half-width 1.0);
* view angles are stored in degrees and converted to radians only inside
  trigonometric calls;
* source distances are dimensionless multiples of the domain half-width and
  must exceed sqrt(2) so the source stays outside the image square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

SQRT2 = math.sqrt(2.0)


class GeometryError(ValueError):
    """Inadmissible acquisition geometry (e.g. X-ray source inside the image)."""


def _frozen_array(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FanBeamGeometry:
    """Static acquisition layout: raster size, view count and rays per fan.

    The fan opening is chosen per view so that the extreme rays are tangent to
    the circle of radius sqrt(2) circumscribing the image square, which
    guarantees the whole image is swept for any admissible source distance.
    """

    n_pixels: int
    n_views: int
    n_detectors: int
    domain_half_width: float = 1.0

    def __post_init__(self):
        if self.n_pixels < 2:
            raise ValueError(f"n_pixels must be >= 2, got {self.n_pixels}")
        if self.n_views < 1:
            raise ValueError(f"n_views must be >= 1, got {self.n_views}")
        if self.n_detectors < 1:
            raise ValueError(f"n_detectors must be >= 1, got {self.n_detectors}")

    @property
    def n_rays(self) -> int:
        """Total row count of the assembled system (views x detectors)."""
        return self.n_views * self.n_detectors

    @property
    def n_cells(self) -> int:
        return self.n_pixels * self.n_pixels


@dataclass(frozen=True)
class GeometryParams:
    """Per-view source pose (angle in degrees, distance to center) with bounds.

    Bounds are absolute per-view boxes [lo, hi] that always contain the stored
    values; they stay fixed when values are perturbed or re-estimated.
    """

    thetas: np.ndarray
    radii: np.ndarray
    theta_bounds: np.ndarray  # shape (n_views, 2)
    r_bounds: np.ndarray      # shape (n_views, 2)

    def __post_init__(self):
        object.__setattr__(self, "thetas", _frozen_array(self.thetas))
        object.__setattr__(self, "radii", _frozen_array(self.radii))
        object.__setattr__(self, "theta_bounds", _frozen_array(self.theta_bounds))
        object.__setattr__(self, "r_bounds", _frozen_array(self.r_bounds))
        n = self.thetas.shape[0]
        if self.radii.shape != (n,):
            raise ValueError("thetas and radii must have equal length")
        if self.theta_bounds.shape != (n, 2) or self.r_bounds.shape != (n, 2):
            raise ValueError("bounds must have shape (n_views, 2)")
        if np.any(self.radii <= SQRT2):
            raise GeometryError("all source distances must exceed sqrt(2)")
        for vals, bounds, name in ((self.thetas, self.theta_bounds, "theta"),
                                   (self.radii, self.r_bounds, "r")):
            if np.any(bounds[:, 0] > vals) or np.any(bounds[:, 1] < vals):
                raise ValueError(f"{name} bounds do not contain the stored values")

    @property
    def n_views(self) -> int:
        return self.thetas.shape[0]

    @classmethod
    def from_values(cls, thetas, radii, theta_halfwidth=0.0, r_halfwidth=0.0):
        """Build params with symmetric boxes value +/- halfwidth."""
        thetas = np.asarray(thetas, float)
        radii = np.asarray(radii, float)
        tb = np.column_stack([thetas - theta_halfwidth, thetas + theta_halfwidth])
        rb = np.column_stack([radii - r_halfwidth, radii + r_halfwidth])
        return cls(thetas, radii, tb, rb)

    def with_bounds(self, theta_halfwidth, r_halfwidth):
        """Re-center the boxes at the current values with the given half-widths."""
        return GeometryParams.from_values(self.thetas, self.radii,
                                          theta_halfwidth, r_halfwidth)

    def with_values(self, thetas, radii):
        """Replace the pose values, keeping the existing absolute boxes."""
        return replace(self, thetas=np.asarray(thetas, float),
                       radii=np.asarray(radii, float))


@dataclass(frozen=True)
class Perturbation:
    """Additive pose perturbation, constant on contiguous groups of views."""

    d_theta: np.ndarray
    d_r: np.ndarray
    group_count: int

    def __post_init__(self):
        object.__setattr__(self, "d_theta", _frozen_array(self.d_theta))
        object.__setattr__(self, "d_r", _frozen_array(self.d_r))
        if self.d_theta.shape != self.d_r.shape:
            raise ValueError("d_theta and d_r must have equal length")


def default_detector_count(n_pixels) -> int:
    """Detector array spanning the image diagonal at unit magnification."""
    return 2 * math.ceil(SQRT2 * n_pixels / 2.0)


def default_geometry(n_pixels):
    """Standard acquisition: 180 views at 0,2,...,358 degrees, distance 2.

    Returns (FanBeamGeometry, GeometryParams); bounds are initially pinned at
    the values (zero half-width).
    """
    if not isinstance(n_pixels, (int, np.integer)) or n_pixels < 2:
        raise ValueError(f"n_pixels must be an integer >= 2, got {n_pixels!r}")
    n_views = 180
    geom = FanBeamGeometry(n_pixels=int(n_pixels), n_views=n_views,
                           n_detectors=default_detector_count(n_pixels))
    thetas = np.arange(n_views, dtype=float) * 2.0
    radii = np.full(n_views, 2.0)
    return geom, GeometryParams.from_values(thetas, radii)


def sample_perturbations(half_width_theta, half_width_r, n_views, group_count,
                         rng_seed) -> Perturbation:
    """Draw group-constant uniform perturbations U(-hw, +hw) per group.

    Views are split into `group_count` contiguous groups; when the group count
    does not divide n_views the last group absorbs the remainder.  Each group
    draws one angle value and one distance value, independently across groups.
    Deterministic for a fixed seed.
    """
    if half_width_theta < 0 or half_width_r < 0:
        raise ValueError("perturbation half-widths must be >= 0")
    if not 1 <= group_count <= n_views:
        raise ValueError(f"group_count must be in [1, {n_views}], got {group_count}")
    rng = np.random.default_rng(rng_seed)
    g_theta = rng.uniform(-half_width_theta, half_width_theta, size=group_count)
    g_r = rng.uniform(-half_width_r, half_width_r, size=group_count)
    base = n_views // group_count
    sizes = np.full(group_count, base, dtype=int)
    sizes[-1] += n_views - base * group_count
    return Perturbation(d_theta=np.repeat(g_theta, sizes),
                        d_r=np.repeat(g_r, sizes),
                        group_count=group_count)


def apply_perturbation(params: GeometryParams, pert: Perturbation) -> GeometryParams:
    """Componentwise addition of the perturbation; bounds are unchanged."""
    if pert.d_theta.shape[0] != params.n_views:
        raise ValueError("perturbation length does not match the view count")
    return params.with_values(params.thetas + pert.d_theta,
                              params.radii + pert.d_r)


def fan_half_angle(r, domain_half_width=1.0) -> float:
    """Fan half-opening (radians) subtending the circumscribed circle."""
    if r <= SQRT2 * domain_half_width:
        raise GeometryError(f"source distance {r} must exceed "
                            f"sqrt(2)*{domain_half_width} (source inside image)")
    return math.asin(SQRT2 * domain_half_width / r)


def make_rays(theta, r, geom: FanBeamGeometry):
    """Rays of one fan firing: common source point and unit directions.

    Returns (source, directions) with source of shape (2,) and directions of
    shape (n_detectors, 2).  The fan is equiangular, symmetric about the
    source-to-origin axis, with the extreme rays tangent to the circle of
    radius sqrt(2)*domain_half_width.
    """
    half = fan_half_angle(r, geom.domain_half_width)
    t = math.radians(theta)
    source = np.array([r * math.cos(t), r * math.sin(t)])
    axis = t + math.pi  # points from the source towards the origin
    if geom.n_detectors == 1:
        offsets = np.array([0.0])
    else:
        offsets = np.linspace(-half, half, geom.n_detectors)
    angles = axis + offsets
    directions = np.column_stack([np.cos(angles), np.sin(angles)])
    return source, directions
