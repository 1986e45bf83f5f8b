"""Fixed-point acceleration: scalar delta-squared extrapolation, its vector
generalizations (Irons-Tuck, crossed secant), and windowed residual mixing
(Anderson) with an incrementally maintained QR factorization.

Every scheme degrades gracefully at convergence: when the relevant
denominator vanishes (to relative precision) the unaccelerated value is
returned together with a degeneracy flag instead of dividing by ~0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEGEN_RTOL = 1e-15


@dataclass
class DeltaHistory:
    """Rolling buffers for the two-point extrapolation schemes.

    prev_x / prev_fx are the previous iterate and its map value; prev_delta is
    the previous residual F(x) - x.  Fields are None until populated.
    """

    prev_x: np.ndarray | None = None
    prev_fx: np.ndarray | None = None
    prev_delta: np.ndarray | None = None


def aitken_step(x, fx, ffx):
    """Scalar delta-squared extrapolation from x, f(x), f(f(x)).

    Returns (accelerated_value, degenerate).  With the second difference
    below relative precision (the situation at a fixed point) the plain value
    f(f(x)) is returned with the flag set.
    """
    d2 = ffx - 2.0 * fx + x
    if abs(d2) <= DEGEN_RTOL * abs(x):
        return ffx, True
    return ffx - (ffx - fx) ** 2 / d2, False


def irons_tuck_step(fx, ffx, hist: DeltaHistory):
    """Vector delta-squared extrapolation; needs two map evaluations.

    `hist.prev_x` must hold the iterate x at which fx = F(x) was evaluated.
    Reduces exactly to aitken_step in dimension one.  Returns
    (accelerated_vector, degenerate).
    """
    if hist.prev_x is None:
        raise ValueError("history must hold the iterate that produced fx")
    x = np.asarray(hist.prev_x, float)
    fx = np.asarray(fx, float)
    ffx = np.asarray(ffx, float)
    df = ffx - fx
    d2 = df - (fx - x)
    d2_norm2 = d2 @ d2
    if np.sqrt(d2_norm2) <= DEGEN_RTOL * (1.0 + np.linalg.norm(x)):
        return ffx.copy(), True
    return ffx - ((df @ d2) / d2_norm2) * df, False


def crossed_secant_step(fx_k, fx_km1, delta_k, delta_km1):
    """Secant-style extrapolation needing one map evaluation per step.

    delta_k and delta_km1 are the residuals F(x)-x at the current and previous
    iterates.  Returns (accelerated_vector, degenerate).
    """
    fx_k = np.asarray(fx_k, float)
    fx_km1 = np.asarray(fx_km1, float)
    delta_k = np.asarray(delta_k, float)
    delta_km1 = np.asarray(delta_km1, float)
    dd = delta_k - delta_km1
    dd_norm2 = dd @ dd
    if np.sqrt(dd_norm2) <= DEGEN_RTOL * (1.0 + np.linalg.norm(delta_k)):
        return fx_k.copy(), True
    coeff = ((fx_k - fx_km1) @ dd) / dd_norm2
    return fx_k - coeff * delta_k, False


class AndersonState:
    """History window and QR factors for Anderson mixing.

    Stores up to `window` residual-difference columns together with the
    matching differences of map values.  The thin QR factorization of the
    column matrix is updated when a column is appended; evicting the oldest
    column (window overflow) refactorizes the remaining columns, and columns
    are dropped newest-first while the triangular factor's condition estimate
    exceeds `cond_max`.
    """

    def __init__(self, window=5, cond_max=1e8):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.window = int(window)
        self.cond_max = float(cond_max)
        self.prev_x = None
        self.prev_fx = None
        self.prev_resid = None
        self.resid_cols = []   # residual differences (the mixing basis)
        self.fdiff_cols = []   # matching map-value differences
        self.q = None          # n x w orthonormal
        self.r = None          # w x w upper triangular

    @property
    def n_cols(self) -> int:
        return len(self.resid_cols)

    def _refactor(self):
        if self.resid_cols:
            self.q, self.r = np.linalg.qr(np.column_stack(self.resid_cols))
        else:
            self.q = self.r = None

    def _append(self, col):
        if self.q is None:
            rho = np.linalg.norm(col)
            self.q = (col / rho if rho > 0 else col)[:, None]
            self.r = np.array([[rho]])
            return
        c1 = self.q.T @ col
        w = col - self.q @ c1
        c2 = self.q.T @ w  # reorthogonalization pass
        w -= self.q @ c2
        rho = np.linalg.norm(w)
        qn = w / rho if rho > 0 else np.zeros_like(col)
        k = self.r.shape[0]
        r_new = np.zeros((k + 1, k + 1))
        r_new[:k, :k] = self.r
        r_new[:k, k] = c1 + c2
        r_new[k, k] = rho
        self.q = np.column_stack([self.q, qn])
        self.r = r_new

    def _drop_newest(self):
        self.resid_cols.pop()
        self.fdiff_cols.pop()
        self.q = self.q[:, :-1]
        self.r = self.r[:-1, :-1]

    def _cond(self):
        if self.r is None or self.r.shape[0] == 0:
            return 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.linalg.cond(self.r)  # nan/inf for singular R: dropped

    def push(self, resid_diff, fdiff):
        """Append a column pair and re-establish the window/conditioning rules."""
        self.resid_cols.append(resid_diff)
        self.fdiff_cols.append(fdiff)
        self._append(resid_diff)
        if self.n_cols > self.window:
            self.resid_cols.pop(0)
            self.fdiff_cols.pop(0)
            self._refactor()
        while self.n_cols > 0 and not self._cond() <= self.cond_max:
            self._drop_newest()


def anderson_update(state: AndersonState, x_k, fx_k):
    """One Anderson mixing step; mutates `state`, returns the next iterate.

    The combination weights solve the small least-squares fit of the current
    residual against the windowed residual differences, through the
    maintained QR factors.  The first call seeds the history and returns
    F(x_0) unchanged (a plain fixed-point step).
    """
    x_k = np.asarray(x_k, float)
    fx_k = np.asarray(fx_k, float)
    resid = fx_k - x_k
    if state.prev_x is None:
        state.prev_x, state.prev_fx, state.prev_resid = x_k, fx_k, resid
        return fx_k.copy()

    state.push(resid - state.prev_resid, fx_k - state.prev_fx)
    state.prev_x, state.prev_fx, state.prev_resid = x_k, fx_k, resid
    if state.n_cols == 0:  # everything dropped: plain step
        return fx_k.copy()
    rhs = state.q.T @ resid
    gamma = np.linalg.solve(state.r, rhs)
    return fx_k - np.column_stack(state.fdiff_cols) @ gamma
