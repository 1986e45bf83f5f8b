"""Regularized linear least-squares solvers for the image update.

Three solvers with different regularization:

* hybrid_lsqr  -- Golub-Kahan bidiagonalization with Tikhonov regularization
  applied to the projected problem; the parameter is chosen per iteration by
  minimizing the GCV function of the projected problem unless fixed.
* fista_nonneg -- accelerated projected gradient with a nonnegativity
  constraint and no penalty term.
* irn          -- one-norm penalty approximated by iteratively re-weighted
  two-norm problems, each solved by conjugate gradients on the normal
  equations.

All solvers accept a dense ndarray or any operator exposing
apply/apply_adjoint (e.g. the projector's StackedOperator), and a right-hand
side given as an ndarray or a Sinogram.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LinSolveResult:
    x: np.ndarray
    iterations: int
    residual_history: list = field(default_factory=list)
    chosen_alpha: float | None = None
    breakdown: bool = False
    restarts: int = 0


class _DenseOperator:
    """Adapter giving a 2-D ndarray the operator interface."""

    def __init__(self, a):
        self.a = np.asarray(a, float)
        self.shape = self.a.shape

    def apply(self, x):
        return self.a @ x

    def apply_adjoint(self, y):
        return self.a.T @ y


def _as_operator(a):
    if hasattr(a, "apply") and hasattr(a, "apply_adjoint"):
        return a
    return _DenseOperator(a)


def _as_vector(b):
    return np.asarray(getattr(b, "values", b), float).ravel()


def _projected_tikhonov(svd, beta1, alpha):
    """Solve min ||B y - beta1*e1||^2 + alpha^2 ||y||^2 given the SVD of B."""
    p, sigma, qt = svd
    c_hat = beta1 * p[0, :]  # P^T (beta1 e1)
    cutoff = sigma[0] * 1e-14 if sigma.size else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        factors = np.where(sigma > cutoff, sigma / (sigma ** 2 + alpha ** 2), 0.0)
    return qt.T @ (factors * c_hat)


def _gcv_alpha(svd, beta1, n_grid=50):
    """Minimize the GCV function of the projected problem on a log grid."""
    p, sigma, _ = svd
    k = sigma.size
    c_hat = beta1 * p[0, :]
    out_of_range = max(beta1 ** 2 - c_hat @ c_hat, 0.0)
    grid = sigma[0] * np.logspace(-6.0, 2.0, n_grid)
    best_alpha, best_g = grid[0], np.inf
    for alpha in grid:
        phi = sigma ** 2 / (sigma ** 2 + alpha ** 2)
        resid2 = np.sum(((1.0 - phi) * c_hat) ** 2) + out_of_range
        denom = (k + 1) - np.sum(phi)
        g = (k + 1) * resid2 / denom ** 2
        if g < best_g:
            best_alpha, best_g = alpha, g
    return float(best_alpha)


def hybrid_lsqr(a, b, max_iter=50, alpha=None) -> LinSolveResult:
    """Hybrid bidiagonalization solver with automatic Tikhonov parameter.

    Runs Golub-Kahan bidiagonalization of (A, b) with full
    reorthogonalization of both Lanczos bases, and at every step solves the
    projected Tikhonov problem.  When `alpha` is None the parameter is
    re-selected each iteration by GCV on the projected problem; otherwise the
    given value is used throughout.  On bidiagonalization breakdown the
    current iterate is returned with the breakdown flag set.
    """
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    op = _as_operator(a)
    b = _as_vector(b)
    m, n = op.shape
    if b.shape != (m,):
        raise ValueError(f"b has shape {b.shape}, expected ({m},)")

    beta1 = np.linalg.norm(b)
    if beta1 == 0:
        return LinSolveResult(x=np.zeros(n), iterations=0, chosen_alpha=alpha,
                              breakdown=True)

    us = [b / beta1]
    v = op.apply_adjoint(us[0])
    alpha_gk = np.linalg.norm(v)
    if alpha_gk == 0:  # b orthogonal to the range of A
        return LinSolveResult(x=np.zeros(n), iterations=0, chosen_alpha=alpha,
                              breakdown=True)
    vs = [v / alpha_gk]
    diag = [alpha_gk]
    subdiag = []

    tiny = 1e-14 * beta1
    residuals = []
    y = np.zeros(0)
    chosen = alpha
    breakdown = False
    k = 0
    for k in range(1, max_iter + 1):
        # expand the bidiagonalization (with reorthogonalization)
        w = op.apply(vs[-1]) - diag[-1] * us[-1]
        for u in us:
            w -= (u @ w) * u
        beta = np.linalg.norm(w)
        if beta > tiny:
            us.append(w / beta)
            subdiag.append(beta)
            z = op.apply_adjoint(us[-1]) - beta * vs[-1]
            for vv in vs:
                z -= (vv @ z) * vv
            alpha_next = np.linalg.norm(z)
            if alpha_next > tiny:
                vs.append(z / alpha_next)
                diag.append(alpha_next)
            else:
                breakdown = True
        else:
            breakdown = True

        # projected (k+1) x k problem from the first k columns
        bk = np.zeros((k + 1, k))
        bk[np.arange(k), np.arange(k)] = diag[:k]
        bk[np.arange(1, k + 1), np.arange(k)] = (subdiag + [0.0])[:k]
        svd = np.linalg.svd(bk, full_matrices=False)
        if alpha is None:
            chosen = _gcv_alpha(svd, beta1)
        y = _projected_tikhonov(svd, beta1, chosen)
        resid = bk @ y
        resid[0] -= beta1
        residuals.append(float(np.linalg.norm(resid)))
        if breakdown:
            break

    x = np.column_stack(vs[:y.size]) @ y
    return LinSolveResult(x=x, iterations=k, residual_history=residuals,
                          chosen_alpha=chosen, breakdown=breakdown)


def estimate_lipschitz(op, n_iter=20, seed=0):
    """Largest eigenvalue of A^T A estimated by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.shape[1])
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(n_iter):
        w = op.apply_adjoint(op.apply(v))
        lam = np.linalg.norm(w)
        if lam == 0:
            return 1.0
        v = w / lam
    return float(lam)


def fista_nonneg(a, b, max_iter=200, lipschitz=None) -> LinSolveResult:
    """Accelerated projected gradient on 0.5||Ax-b||^2 with x >= 0.

    Step size 1/L; L is estimated by 20 power iterations on A^T A when not
    supplied (with a small safety margin).  When the objective increases the
    momentum is discarded and the step retaken from the last iterate, which
    keeps the objective monotone across restart events.
    """
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    op = _as_operator(a)
    b = _as_vector(b)
    m, n = op.shape
    if b.shape != (m,):
        raise ValueError(f"b has shape {b.shape}, expected ({m},)")
    if lipschitz is None:
        lipschitz = 1.02 * estimate_lipschitz(op)  # margin over the power estimate
    step = 1.0 / lipschitz

    def objective(x):
        r = op.apply(x) - b
        return 0.5 * (r @ r)

    x = np.zeros(n)
    y = x
    t = 1.0
    f_x = objective(x)
    residuals = []
    restarts = 0
    for _ in range(max_iter):
        grad = op.apply_adjoint(op.apply(y) - b)
        x_new = np.maximum(y - step * grad, 0.0)
        f_new = objective(x_new)
        if f_new > f_x:  # restart: drop momentum, step from x instead
            restarts += 1
            t = 1.0
            grad = op.apply_adjoint(op.apply(x) - b)
            x_new = np.maximum(x - step * grad, 0.0)
            f_new = objective(x_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t, f_x = x_new, t_new, f_new
        residuals.append(float(np.sqrt(2.0 * f_new)))
    return LinSolveResult(x=x, iterations=max_iter, residual_history=residuals,
                          restarts=restarts)


def irn(a, b, outer=5, inner=30, lam=1e-2, eps=1e-8) -> LinSolveResult:
    """One-norm regularization via iteratively re-weighted two-norm solves.

    Each outer step forms weights w_j = (x_j^2 + eps)^(-1/2) and applies
    `inner` conjugate-gradient iterations to the normal equations of
    min ||Ax-b||^2 + lam * ||W^(1/2) x||^2, warm-started at the current x.
    """
    if outer < 1 or inner < 1:
        raise ValueError("outer and inner iteration counts must be >= 1")
    if lam <= 0 or eps <= 0:
        raise ValueError("lam and eps must be positive")
    op = _as_operator(a)
    b = _as_vector(b)
    m, n = op.shape
    if b.shape != (m,):
        raise ValueError(f"b has shape {b.shape}, expected ({m},)")

    rhs = op.apply_adjoint(b)
    x = np.zeros(n)
    residuals = []
    for _ in range(outer):
        w = lam / np.sqrt(x * x + eps)

        def normal_matvec(v):
            return op.apply_adjoint(op.apply(v)) + w * v

        # conjugate gradients on (A^T A + lam W) x = A^T b
        r = rhs - normal_matvec(x)
        p = r.copy()
        rs = r @ r
        stop = max(1e-28 * (rhs @ rhs), 0.0)
        for _ in range(inner):
            if rs <= stop:
                break
            ap = normal_matvec(p)
            dd = p @ ap
            if dd <= 0:
                break
            gamma = rs / dd
            x = x + gamma * p
            r = r - gamma * ap
            rs_new = r @ r
            p = r + (rs_new / rs) * p
            rs = rs_new
        residuals.append(float(np.linalg.norm(op.apply(x) - b)))
    return LinSolveResult(x=x, iterations=outer, residual_history=residuals)
