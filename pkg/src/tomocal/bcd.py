"""Outer alternating-minimization driver for joint image/geometry recovery.

One outer cycle alternates a bounded per-view pose fit (dispatched serially
or over a process pool) with a regularized linear image solve.  The cycle,
viewed as a map on the image vector, is the fixed-point function `g`; the
accelerated variants extrapolate its iterates.  The `omega` target instead
accelerates the concatenated (image, poses) vector, kept in raw units.
"""

from __future__ import annotations

import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import linsolve
from .accel import (AndersonState, DeltaHistory, anderson_update,
                    crossed_secant_step, irons_tuck_step)
from .geometry import FanBeamGeometry, GeometryParams
from .nlsolve import DEFAULT_SCALES, solve_view_params
from .projector import assemble_stack
from .simulate import Sinogram

LIN_SOLVERS = ("hybrid_lsqr", "fista", "irn")
ACCEL_SCHEMES = ("none", "anderson", "crossed_secant", "irons_tuck")
ACCEL_TARGETS = ("x", "omega")
ORDERINGS = ("x_first", "p_first")


@dataclass
class BcdOptions:
    """Knobs of the outer driver and its sub-solvers."""

    max_outer: int = 20
    stop_tol: float = 0.03
    lin_solver: str = "hybrid_lsqr"
    accel: str = "none"
    accel_target: str = "x"
    ordering: str = "x_first"
    parallel_views: bool = False
    workers: int = 4
    anderson_window: int = 5
    cond_max: float = 1e8
    # pose boxes: half-widths around the initial guess; None keeps the
    # bounds already stored on the initial GeometryParams
    theta_bound: float | None = None
    r_bound: float | None = None
    # linear solver budgets
    lsqr_iters: int = 50
    alpha: float | None = None
    freeze_alpha: bool = False
    fista_iters: int = 200
    irn_outer: int = 5
    irn_inner: int = 30
    irn_lambda: float | None = None
    irn_eps: float = 1e-8
    # nonlinear (per-view) budgets
    imfil_scales: int = 7
    imfil_steps: int = 3

    def validate(self):
        if self.max_outer < 1:
            raise ValueError(f"max_outer must be >= 1, got {self.max_outer}")
        if not 0 < self.stop_tol < 1:
            raise ValueError(f"stop_tol must be in (0, 1), got {self.stop_tol}")
        if self.lin_solver not in LIN_SOLVERS:
            raise ValueError(f"unknown lin_solver {self.lin_solver!r}")
        if self.accel not in ACCEL_SCHEMES:
            raise ValueError(f"unknown accel scheme {self.accel!r}")
        if self.accel_target not in ACCEL_TARGETS:
            raise ValueError(f"unknown accel_target {self.accel_target!r}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        return self

    @property
    def imfil_scale_list(self):
        return DEFAULT_SCALES[:self.imfil_scales]


@dataclass
class BcdReport:
    """Per-iteration error/residual histories plus the final state.

    Row 0 describes the initial reconstruction at the starting poses; one row
    is appended per outer iteration.  Histories share one length.
    """

    image_errors: list = field(default_factory=list)
    angle_errors: list = field(default_factory=list)
    r_errors: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    relative_changes: list = field(default_factory=list)
    x: np.ndarray | None = None
    params: GeometryParams | None = None
    termination: str = "max_iterations"
    absolute_param_errors: bool = False
    accel_fallbacks: int = 0
    view_failures: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.image_errors) - 1

    def to_csv(self, path, include_seconds=True):
        """One row per recorded iteration (row 0 = initial reconstruction)."""
        cols = ["iter", "image_err", "angle_err", "r_err", "residual"]
        if include_seconds:
            cols.append("seconds")
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for i in range(len(self.image_errors)):
                row = [str(i)] + [
                    f"{v:.14e}" for v in (self.image_errors[i],
                                          self.angle_errors[i],
                                          self.r_errors[i],
                                          self.residuals[i])]
                if include_seconds:
                    row.append(f"{self.seconds[i]:.14e}")
                f.write(",".join(row) + "\n")


class RelativeErrors(NamedTuple):
    image: float
    angle: float
    r: float
    absolute: bool  # True when a zero-norm true perturbation forced absolute norms


def relative_errors(x, params, truth, initial: GeometryParams) -> RelativeErrors:
    """l2 relative errors of the image and of the pose perturbations.

    Pose errors compare estimated perturbations (estimate minus the
    unperturbed initial guess) against the true ones.  When a true
    perturbation has zero norm the corresponding error is the absolute norm
    of the estimate and the `absolute` flag is set.
    """
    x_true, params_true = truth
    x_true = np.asarray(getattr(x_true, "values", x_true), float)
    x = np.asarray(x, float)
    image = float(np.linalg.norm(x - x_true) / np.linalg.norm(x_true))

    if isinstance(params, GeometryParams):
        thetas, radii = params.thetas, params.radii
    else:
        thetas, radii = (np.asarray(v, float) for v in params)

    absolute = False
    errs = []
    for est, true_vals, init in ((thetas, params_true.thetas, initial.thetas),
                                 (radii, params_true.radii, initial.radii)):
        est_pert = est - init
        true_pert = true_vals - init
        denom = np.linalg.norm(true_pert)
        if denom == 0:
            absolute = True
            errs.append(float(np.linalg.norm(est_pert)))
        else:
            errs.append(float(np.linalg.norm(est_pert - true_pert) / denom))
    return RelativeErrors(image=image, angle=errs[0], r=errs[1], absolute=absolute)


# ---------------------------------------------------------------------------
# per-view pose updates (serial or process pool)

_WORKER: dict = {}


def _init_view_worker(x, b_values, rows_per_view, geom, scales, steps):
    _WORKER.update(x=x, b_values=b_values, rows_per_view=rows_per_view,
                   geom=geom, scales=scales, steps=steps)


def _solve_one_view(task):
    i, theta, r, t_lo, t_hi, r_lo, r_hi = task
    w = _WORKER
    rpv = w["rows_per_view"]
    b_i = w["b_values"][i * rpv:(i + 1) * rpv]
    try:
        theta_new, r_new = solve_view_params(
            w["x"], b_i, w["geom"], (theta, r), ((t_lo, t_hi), (r_lo, r_hi)),
            scales=w["scales"], max_steps_per_scale=w["steps"])
        return theta_new, r_new, False
    except Exception:
        return theta, r, True  # keep the previous pose, flag the view


def update_all_view_params(x, b: Sinogram, params: GeometryParams,
                           geom: FanBeamGeometry, opts: BcdOptions,
                           failures=None) -> GeometryParams:
    """Independently re-fit every view's pose at the current image.

    With `parallel_views` the views are dispatched to a fork-based process
    pool; outputs land in per-view slots in view order, so serial and
    parallel execution produce bit-identical results.  A view whose solve
    raises keeps its previous pose and its index is appended to `failures`.
    """
    x = np.asarray(x, float)
    tasks = [(i, params.thetas[i], params.radii[i],
              params.theta_bounds[i, 0], params.theta_bounds[i, 1],
              params.r_bounds[i, 0], params.r_bounds[i, 1])
             for i in range(params.n_views)]
    init_args = (x, b.values, b.rows_per_view, geom,
                 opts.imfil_scale_list, opts.imfil_steps)
    if opts.parallel_views and opts.workers > 1:
        ctx = multiprocessing.get_context("fork")
        chunk = max(1, len(tasks) // (opts.workers * 4))
        with ProcessPoolExecutor(max_workers=opts.workers, mp_context=ctx,
                                 initializer=_init_view_worker,
                                 initargs=init_args) as pool:
            results = list(pool.map(_solve_one_view, tasks, chunksize=chunk))
    else:
        _init_view_worker(*init_args)
        results = [_solve_one_view(t) for t in tasks]

    thetas = np.array([r[0] for r in results])
    radii = np.array([r[1] for r in results])
    if failures is not None:
        failures.extend(i for i, r in enumerate(results) if r[2])
    return params.with_values(thetas, radii)


# ---------------------------------------------------------------------------
# fixed-point cycle and outer driver

class _Context:
    """Mutable problem state threaded through the fixed-point cycle."""

    def __init__(self, b, geom, params, opts):
        self.b = b
        self.geom = geom
        self.params = params
        self.opts = opts
        self.operator = None
        self.frozen_alpha = None
        self.irn_lam = opts.irn_lambda
        self.view_failures = []

    def linear_solve(self):
        """Solve the image problem at the current poses; caches the operator."""
        opts = self.opts
        self.operator = assemble_stack(self.params, self.geom)
        if opts.lin_solver == "hybrid_lsqr":
            alpha = opts.alpha if opts.alpha is not None else self.frozen_alpha
            res = linsolve.hybrid_lsqr(self.operator, self.b.values,
                                       max_iter=opts.lsqr_iters, alpha=alpha)
            if opts.freeze_alpha and self.frozen_alpha is None:
                self.frozen_alpha = res.chosen_alpha
        elif opts.lin_solver == "fista":
            res = linsolve.fista_nonneg(self.operator, self.b.values,
                                        max_iter=opts.fista_iters)
        else:
            if self.irn_lam is None:
                rhs = self.operator.apply_adjoint(self.b.values)
                self.irn_lam = 1e-4 * np.max(np.abs(rhs))
            res = linsolve.irn(self.operator, self.b.values,
                               outer=opts.irn_outer, inner=opts.irn_inner,
                               lam=self.irn_lam, eps=opts.irn_eps)
        return res.x

    def update_params(self, x):
        self.params = update_all_view_params(x, self.b, self.params, self.geom,
                                             self.opts, failures=self.view_failures)


def fixed_point_g(x_k, ctx: _Context):
    """One cycle of the fixed-point map: pose update, then image solve."""
    ctx.update_params(x_k)
    return ctx.linear_solve()


def _omega_split(omega, n_cells, n_views):
    x = omega[:n_cells]
    thetas = omega[n_cells:n_cells + n_views]
    radii = omega[n_cells + n_views:]
    return x, thetas, radii


def _fixed_point_g_omega(omega, ctx: _Context):
    """Fixed-point cycle on the concatenated (image, poses) vector.

    The pose part is clamped into the per-view boxes before it seeds the
    bounded solves (an accelerated extrapolation may leave them); the raw
    accelerated values are still what the driver reports.
    """
    n_cells = ctx.geom.n_cells
    x, thetas, radii = _omega_split(omega, n_cells, ctx.params.n_views)
    thetas = np.clip(thetas, ctx.params.theta_bounds[:, 0],
                     ctx.params.theta_bounds[:, 1])
    radii = np.clip(radii, ctx.params.r_bounds[:, 0], ctx.params.r_bounds[:, 1])
    ctx.params = ctx.params.with_values(thetas, radii)
    ctx.update_params(x)
    x_new = ctx.linear_solve()
    return np.concatenate([x_new, ctx.params.thetas, ctx.params.radii])


def bcd_run(b: Sinogram, p0: GeometryParams, geom: FanBeamGeometry,
            truth=None, opts: BcdOptions | None = None) -> BcdReport:
    """Alternating minimization with optional fixed-point acceleration.

    `p0` is the unperturbed initial pose guess; when `opts` carries bound
    half-widths the per-view boxes are centered there.  `truth`, when given,
    is an (image, GeometryParams) pair used for the error histories.  Both
    orderings initialize the image with one linear solve at `p0`; any
    acceleration scheme operates on the pose-first cycle.  Iteration stops on
    the relative-change rule or at `max_outer`.
    """
    opts = (opts or BcdOptions()).validate()
    if opts.theta_bound is not None or opts.r_bound is not None:
        params = p0.with_bounds(opts.theta_bound or 0.0, opts.r_bound or 0.0)
    else:
        params = p0
    ctx = _Context(b=b, geom=geom, params=params, opts=opts)
    report = BcdReport()
    omega_mode = opts.accel != "none" and opts.accel_target == "omega"

    anderson = AndersonState(opts.anderson_window, opts.cond_max)
    hist = DeltaHistory()

    def record(x_iter, pose_view, t_start):
        if truth is not None:
            errs = relative_errors(x_iter, pose_view, truth, p0)
            report.absolute_param_errors |= errs.absolute
        else:
            errs = RelativeErrors(np.nan, np.nan, np.nan, False)
        report.image_errors.append(errs.image)
        report.angle_errors.append(errs.angle)
        report.r_errors.append(errs.r)
        resid = ctx.operator.apply(np.asarray(x_iter, float)) - b.values
        report.residuals.append(float(np.linalg.norm(resid)))
        report.seconds.append(time.perf_counter() - t_start)

    t0 = time.perf_counter()
    x = ctx.linear_solve()
    record(x, ctx.params, t0)

    if omega_mode:
        iterate = np.concatenate([x, ctx.params.thetas, ctx.params.radii])
    else:
        iterate = x

    def g(vec):
        if omega_mode:
            return _fixed_point_g_omega(vec, ctx)
        return fixed_point_g(vec, ctx)

    for k in range(1, opts.max_outer + 1):
        t_start = time.perf_counter()
        if opts.accel == "none" and not omega_mode and opts.ordering == "x_first":
            # image solve at current poses, then pose update; at k=1 the
            # solve would repeat the initialization exactly, so reuse it
            new_iterate = iterate if k == 1 else ctx.linear_solve()
            ctx.update_params(new_iterate)
        elif opts.accel == "none":
            new_iterate = g(iterate)
        elif opts.accel == "anderson":
            fx = g(iterate)
            new_iterate = anderson_update(anderson, iterate, fx)
        elif opts.accel == "crossed_secant":
            fx = g(iterate)
            delta = fx - iterate
            if hist.prev_fx is None:
                new_iterate = fx
            else:
                new_iterate, degen = crossed_secant_step(fx, hist.prev_fx,
                                                         delta, hist.prev_delta)
                report.accel_fallbacks += degen
            hist.prev_fx, hist.prev_delta = fx, delta
        else:  # irons_tuck: two cycle evaluations per outer iteration
            fx = g(iterate)
            ffx = g(fx)
            hist.prev_x = iterate
            new_iterate, degen = irons_tuck_step(fx, ffx, hist)
            report.accel_fallbacks += degen

        if omega_mode:
            x_new, est_thetas, est_radii = _omega_split(new_iterate,
                                                        geom.n_cells,
                                                        ctx.params.n_views)
            pose_view = (est_thetas, est_radii)
            x_prev = _omega_split(iterate, geom.n_cells, ctx.params.n_views)[0]
        else:
            x_new, pose_view, x_prev = new_iterate, ctx.params, iterate

        denom = np.linalg.norm(x_prev)
        rel = float(np.linalg.norm(x_new - x_prev) / (denom if denom > 0 else 1.0))
        report.relative_changes.append(rel)
        iterate = new_iterate
        record(x_new, pose_view, t_start)
        if rel <= opts.stop_tol:
            report.termination = "tolerance"
            break

    report.x = x_new
    report.params = ctx.params
    report.view_failures = sorted(set(ctx.view_failures))
    return report
