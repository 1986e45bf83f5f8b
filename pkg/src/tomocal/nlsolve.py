"""Bounded derivative-free minimization of the per-view geometry misfit.

Implicit-filtering style driver: difference gradients on a shrinking stencil,
projected gradient steps with an Armijo backtracking line search, advancing to
the next stencil scale on stencil failure (no stencil point improves) or when
the per-scale step budget is exhausted.  All decisions are made through
comparisons and normalized steps, so rescaling the objective by a positive
constant leaves the search path unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import SQRT2, FanBeamGeometry
from .projector import assemble_view

#: Stencil widths as fractions of each coordinate's box width: half the box
#: width, halved at every scale change.
DEFAULT_SCALES = tuple(0.5 * 0.5 ** k for k in range(7))

ARMIJO_C = 1e-4
MAX_BACKTRACKS = 10


@dataclass(frozen=True)
class BoxProblem2D:
    """Two-variable box-constrained problem: minimize objective(theta, r)."""

    objective: Callable[[float, float], float]
    lo: tuple
    hi: tuple
    start: tuple

    def __post_init__(self):
        lo, hi, st = (np.asarray(v, float) for v in (self.lo, self.hi, self.start))
        if lo.shape != (2,) or hi.shape != (2,) or st.shape != (2,):
            raise ValueError("lo, hi and start must be pairs")
        if np.any(lo > st) or np.any(st > hi):
            raise ValueError(f"start {st} outside box [{lo}, {hi}]")


def implicit_filter_2d(problem: BoxProblem2D, scales=None,
                       max_steps_per_scale=20):
    """Minimize over the box; returns (theta, r, objective_value).

    `scales` are stencil widths as fractions of each coordinate's box width,
    strictly decreasing.  Non-finite objective values are treated as +inf.
    The returned point never leaves the box and its value never exceeds the
    value at the start point.
    """
    if scales is None:
        scales = DEFAULT_SCALES
    scales = [float(s) for s in scales]
    if any(s <= 0 for s in scales) or any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be positive and strictly decreasing")
    if max_steps_per_scale < 1:
        raise ValueError("max_steps_per_scale must be >= 1")

    lo = np.asarray(problem.lo, float)
    hi = np.asarray(problem.hi, float)
    widths = hi - lo

    def feval(pt):
        v = problem.objective(pt[0], pt[1])
        return float(v) if np.isfinite(v) else np.inf

    x = np.asarray(problem.start, float).copy()
    fx = feval(x)
    best_x, best_f = x.copy(), fx

    for scale in scales:
        h = scale * widths
        for _ in range(max_steps_per_scale):
            # stencil evaluations, one-sided at the box boundary
            plus = np.minimum(x + h, hi)
            minus = np.maximum(x - h, lo)
            grad = np.zeros(2)
            stencil_best_f, stencil_best_x = np.inf, None
            for c in range(2):
                span = plus[c] - minus[c]
                if span <= 0:  # pinned coordinate
                    continue
                for coord, side in ((plus[c], 1.0), (minus[c], -1.0)):
                    if coord == x[c]:
                        f_val = fx
                    else:
                        pt = x.copy()
                        pt[c] = coord
                        f_val = feval(pt)
                        if f_val < stencil_best_f:
                            stencil_best_f, stencil_best_x = f_val, pt
                        if f_val < best_f:
                            best_f, best_x = f_val, pt
                    grad[c] += side * f_val / span
            if stencil_best_f >= fx:  # stencil failure: shrink the stencil
                break

            # projected gradient step, first trial moves one stencil width
            rel = np.abs(grad[h > 0]) / h[h > 0]
            step0 = 1.0 / rel.max() if rel.size and rel.max() > 0 else 0.0
            accepted = False
            if step0 > 0:
                step = step0
                for _ in range(MAX_BACKTRACKS):
                    cand = np.clip(x - step * grad, lo, hi)
                    move = cand - x
                    if np.any(move != 0):
                        f_cand = feval(cand)
                        if f_cand < best_f:
                            best_f, best_x = f_cand, cand.copy()
                        if f_cand <= fx + ARMIJO_C * (grad @ move):
                            x, fx = cand, f_cand
                            accepted = True
                            break
                    step *= 0.5
            if not accepted:  # fall back to the best stencil point (a decrease)
                x, fx = stencil_best_x, stencil_best_f
    return float(best_x[0]), float(best_x[1]), best_f


def solve_view_params(x, b_i, geom: FanBeamGeometry, start, bounds,
                      scales=None, max_steps_per_scale=20):
    """Fit one view's pose by minimizing ||A(theta, r) x - b_i||^2 over the box.

    `bounds` is ((theta_lo, theta_hi), (r_lo, r_hi)); the returned pose never
    leaves it and its misfit never exceeds the misfit at `start`.
    """
    (t_lo, t_hi), (r_lo, r_hi) = bounds
    if r_lo <= SQRT2:
        raise ValueError(f"r lower bound {r_lo} must exceed sqrt(2)")
    x = np.asarray(x, float)
    b_i = np.asarray(b_i, float)

    def misfit(theta, r):
        d = assemble_view(theta, r, geom).matrix @ x - b_i
        return d @ d

    problem = BoxProblem2D(objective=misfit, lo=(t_lo, r_lo), hi=(t_hi, r_hi),
                           start=start)
    theta, r, _ = implicit_filter_2d(problem, scales=scales,
                                     max_steps_per_scale=max_steps_per_scale)
    return theta, r
