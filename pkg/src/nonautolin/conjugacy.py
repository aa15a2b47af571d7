"""Construction of the conjugacies between the coupled and uncoupled systems.

The coupled-to-linear direction is the truncated series

    bar_h(n, xi, eta) = - sum_k  G(n, k+1) f_k(x2(k, n, xi, eta), y(k, n, eta)),
    bar_H(n, xi, eta) = (xi + bar_h(n, xi, eta), eta),

whose absolute truncation error over a window of halfwidth K is bounded by
sum_{|k-n|>K} |G(n,k+1)| mu_k; the window is enlarged until that bound drops
under `series_tol` (analytic envelope when the system has one, ratio
extrapolation otherwise; the bounding terms are state-free, so the window
depends only on n).

The inverse direction is obtained pointwise from the fixed-point relation

    h(n, xi, eta) = -bar_h(n, xi + h(n, xi, eta), eta),
    H(n, xi, eta) = (xi + h(n, xi, eta), eta),

solved by Picard iteration from 0.  The iteration contracts at the certified
first-variable bound c(n) = K_n + J_n + |G(n,n+1)| gamma_n, which must be
< 1; the inner series tolerance is tightened to fp_tol (1 - c(n)) / 2 so the
truncation bias stays below the fixed-point residual target.

Evaluations accept either a single state (dim,) or a column batch
(dim, batch); trajectories and fixed points are then shared across the batch.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractionViolation, NoConvergence, WindowExhausted
from .evolution import DEFAULT_SOLVE, SolveOptions, coupled_trajectory
from .hypotheses import (
    CONVERGED,
    DEFAULT_ESTIMATE,
    EstimateOptions,
    _ratio_tail,
    check_advanced_first,
)
from .system import SystemSpec, batch_vector_norm, green_norm, green_span, operator_norm


def _as_columns(v, dim: int, batch: Optional[int] = None) -> tuple[np.ndarray, bool]:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"expected vector of length {dim}, got shape {arr.shape}")
        b = batch or 1
        return np.repeat(arr.reshape(dim, 1), b, axis=1) if b > 1 else arr.reshape(dim, 1), True
    if arr.shape[0] != dim:
        raise ValueError(f"expected ({dim}, batch) array, got shape {arr.shape}")
    return arr, False


@dataclass
class SeriesWindow:
    halfwidth: int
    tail_bound: float
    value_bound: float  # sum of |G| mu over the window plus the tail


class ConjugacyEngine:
    """Shared caches and tolerances for conjugacy evaluations on one system."""

    def __init__(
        self,
        sys: SystemSpec,
        window_halfwidth: int = 128,
        series_tol: float = 1e-9,
        fp_tol: float = 1e-10,
        solve: SolveOptions = DEFAULT_SOLVE,
        estimate_opts: EstimateOptions = DEFAULT_ESTIMATE,
        advanced_halfwidth: Optional[int] = None,
    ):
        if window_halfwidth < 1:
            raise ValueError("window_halfwidth must be >= 1")
        if series_tol <= 0.0 or fp_tol <= 0.0:
            raise ValueError("series_tol and fp_tol must be positive")
        self.sys = sys
        self.window_halfwidth = int(window_halfwidth)
        self.series_tol = float(series_tol)
        self.fp_tol = float(fp_tol)
        self.solve = solve
        self.estimate_opts = estimate_opts
        self.advanced_halfwidth = int(advanced_halfwidth or window_halfwidth)
        self.contraction_estimate: dict[int, float] = {}
        self._green_rows: dict[int, tuple[int, dict[int, np.ndarray]]] = {}
        self._mu_windows: dict[tuple[int, float], SeriesWindow] = {}
        self._lock = threading.Lock()

    # -- caches ------------------------------------------------------------

    def green_row(self, n: int, halfwidth: int) -> dict[int, np.ndarray]:
        """G(n, k+1) for k in [n - halfwidth, n + halfwidth], cached per n."""
        with self._lock:
            cached = self._green_rows.get(n)
        if cached is not None and cached[0] >= halfwidth:
            return cached[1]
        span = green_span(self.sys, n, n - halfwidth + 1, n + halfwidth + 1)
        row = {q - 1: mat for q, mat in span.items()}
        with self._lock:
            prev = self._green_rows.get(n)
            if prev is None or prev[0] < halfwidth:
                self._green_rows[n] = (halfwidth, row)
            return self._green_rows[n][1]

    def _mu_terms(self, n: int, halfwidth: int) -> dict[int, float]:
        row = self.green_row(n, halfwidth)
        kind = self.sys.space.norm_kind
        return {
            k: operator_norm(row[k], kind) * self.sys.f.mu(k)
            for k in range(n - halfwidth, n + halfwidth + 1)
        }

    def series_window(self, n: int, tol: float) -> SeriesWindow:
        """Window halfwidth for bar_h at center n with truncation error <= tol."""
        key = (n, float(tol))
        with self._lock:
            if key in self._mu_windows:
                return self._mu_windows[key]
        win = self._build_series_window(n, tol)
        with self._lock:
            return self._mu_windows.setdefault(key, win)

    def _build_series_window(self, n: int, tol: float) -> SeriesWindow:
        cap = self.window_halfwidth
        env_fn = self.sys.envelopes.barh if self.sys.envelopes else None
        if env_fn is not None:
            env = env_fn(n)
            k = env.required_halfwidth(tol, sides=2)
            if k is None or k > cap:
                raise WindowExhausted(n, cap, tol, env.two_sided(cap))
            tail = env.two_sided(k)
            terms = self._mu_terms(n, k)
            return SeriesWindow(k, tail, sum(terms.values()) + tail)
        # no envelope: grow and extrapolate from the state-free terms
        k = min(8, cap)
        while True:
            terms = self._mu_terms(n, k)
            left = [terms[n - d] for d in range(1, k + 1)]
            right = [terms[n + d] for d in range(1, k + 1)]
            lt, lv = _ratio_tail(left, self.estimate_opts)
            rt, rv = _ratio_tail(right, self.estimate_opts)
            if lv == CONVERGED and rv == CONVERGED and (lt + rt) <= tol:
                tail = lt + rt
                return SeriesWindow(k, tail, sum(terms.values()) + tail)
            if k >= cap:
                reached = None if (lt is None or rt is None) else lt + rt
                raise WindowExhausted(n, cap, tol, reached)
            k = min(cap, k * 2)

    # -- contraction certificate --------------------------------------------

    def contraction(self, n: int) -> float:
        """Certified bound on the first-variable Lipschitz constant of bar_h
        (K_n + J_n + |G(n,n+1)| gamma_n including tails); must be < 1 for h/H."""
        with self._lock:
            if n in self.contraction_estimate:
                return self.contraction_estimate[n]
        w = self.advanced_halfwidth
        k_est, j_est, _ = check_advanced_first(self.sys, n, (n - w, n + w), self.estimate_opts)
        if k_est.verdict != CONVERGED or j_est.verdict != CONVERGED:
            raise ContractionViolation(n, math.inf, what="first-variable series bound")
        c = k_est.bound + j_est.bound + green_norm(self.sys, n, n + 1) * self.sys.f.gamma(n)
        if not c < 1.0:
            raise ContractionViolation(n, c, what="K + J + |G(n,n+1)|*gamma")
        with self._lock:
            return self.contraction_estimate.setdefault(n, c)

    # -- conjugacy evaluations ----------------------------------------------

    def bar_h_detailed(
        self, n: int, xi, eta=None, window: Optional[int] = None, tol: Optional[float] = None
    ) -> tuple[np.ndarray, float, int]:
        """Series value, truncation-error bound and window halfwidth."""
        sys = self.sys
        dx, dy = sys.space.dim_x, sys.space.dim_y
        xi_b, single = _as_columns(xi, dx)
        batch = xi_b.shape[1]
        if eta is None:
            eta_b = np.zeros((dy, batch))
        else:
            eta_b, _ = _as_columns(eta, dy, batch)
        if window is None:
            win = self.series_window(n, tol if tol is not None else self.series_tol)
            k_half, tail = win.halfwidth, win.tail_bound
        else:
            k_half = int(window)
            env_fn = sys.envelopes.barh if sys.envelopes else None
            tail = env_fn(n).two_sided(k_half) if env_fn else math.inf
        row = self.green_row(n, k_half)
        states = coupled_trajectory(sys, n, n - k_half, n + k_half, xi_b, eta_b, self.solve)
        acc = np.zeros((dx, batch))
        for k in range(n - k_half, n + k_half + 1):
            x, y = states[k]
            fval = np.asarray(sys.f.eval(k, x, y), dtype=float)
            if fval.ndim == 1:
                if batch != 1:
                    raise ValueError("coupling eval must broadcast column batches")
                fval = fval.reshape(dx, 1)
            acc += row[k] @ fval
        val = -acc
        return (val[:, 0] if single else val), tail, k_half

    def bar_h(self, n: int, xi, eta=None, window: Optional[int] = None) -> np.ndarray:
        return self.bar_h_detailed(n, xi, eta, window=window)[0]

    def bar_H(self, n: int, xi, eta=None) -> tuple[np.ndarray, np.ndarray]:
        xi_arr = np.asarray(xi, dtype=float)
        eta_arr = (
            np.asarray(eta, dtype=float)
            if eta is not None
            else np.zeros((self.sys.space.dim_y,) + xi_arr.shape[1:])
        )
        return xi_arr + self.bar_h(n, xi, eta), eta_arr.copy()

    def h_detailed(
        self,
        n: int,
        xi,
        eta=None,
        iters: Optional[int] = None,
        window: Optional[int] = None,
    ) -> tuple[np.ndarray, list, int, int]:
        """Fixed-point value, residual history, iterations used and window.

        With `iters` given, runs exactly that many Picard updates with no
        early stop (smooth in xi; used by the finite-difference harness).
        """
        sys = self.sys
        dx, dy = sys.space.dim_x, sys.space.dim_y
        c = self.contraction(n)
        eff_tol = min(self.series_tol, self.fp_tol * (1.0 - c) / 2.0)
        if window is None:
            win = self.series_window(n, eff_tol)
            k_half = win.halfwidth
            value_bound = win.value_bound
        else:
            k_half = int(window)
            value_bound = self.series_window(n, eff_tol).value_bound
        xi_b, single = _as_columns(xi, dx)
        batch = xi_b.shape[1]
        eta_b = np.zeros((dy, batch)) if eta is None else _as_columns(eta, dy, batch)[0]

        if iters is not None:
            u = np.zeros((dx, batch))
            for _ in range(iters):
                u = -self.bar_h(n, xi_b + u, eta_b, window=k_half)
            return (u[:, 0] if single else u), [], iters, k_half

        if c <= 0.0 or value_bound <= self.fp_tol:
            cap = 4
        else:
            cap = int(math.ceil(math.log(self.fp_tol / value_bound) / math.log(c))) + 16
        cap = max(cap, 8)
        u = np.zeros((dx, batch))
        residuals: list = []
        for it in range(cap):
            v = self.bar_h(n, xi_b + u, eta_b, window=k_half)
            res = float(np.max(batch_vector_norm(u + v, sys.space.norm_kind)))
            residuals.append(res)
            if res <= self.fp_tol:
                return (u[:, 0] if single else u), residuals, it, k_half
            u = -v
        raise NoConvergence(f"h fixed point at n={n}", cap, residuals[-1], self.fp_tol)

    def h(self, n: int, xi, eta=None, iters: Optional[int] = None,
          window: Optional[int] = None) -> np.ndarray:
        return self.h_detailed(n, xi, eta, iters=iters, window=window)[0]

    def H(self, n: int, xi, eta=None) -> tuple[np.ndarray, np.ndarray]:
        xi_arr = np.asarray(xi, dtype=float)
        eta_arr = (
            np.asarray(eta, dtype=float)
            if eta is not None
            else np.zeros((self.sys.space.dim_y,) + xi_arr.shape[1:])
        )
        return xi_arr + self.h(n, xi, eta), eta_arr.copy()

    # -- residual diagnostics -----------------------------------------------

    def equivariance_batch(self, n: int, xi, eta=None, steps: int = 10) -> tuple[np.ndarray, np.ndarray]:
        """Per-probe (forward, dual) equivariance residuals over `steps` steps.

        Forward: push the linear trajectory through H and step it with the
        coupled map; dual: push the coupled trajectory through bar_H and step
        it with the linear map.  Both are zero for exact conjugacies.
        Accepts column batches; returns arrays of shape (batch,).
        """
        sys = self.sys
        dx, dy = sys.space.dim_x, sys.space.dim_y
        kind = sys.space.norm_kind
        xi_b, _ = _as_columns(xi, dx)
        batch = xi_b.shape[1]
        eta_b = np.zeros((dy, batch)) if eta is None else _as_columns(eta, dy, batch)[0]

        def _f(j, x, y):
            out = np.asarray(sys.f.eval(j, x, y), dtype=float)
            if out.ndim == 1:
                if batch != 1:
                    raise ValueError("coupling eval must broadcast column batches")
                out = out.reshape(dx, 1)
            return out

        res_fwd = np.zeros(batch)
        x, y = xi_b, eta_b
        hx, hy = self.H(n, x, y)
        for j in range(n, n + steps):
            step_x = sys.a.matrix(j) @ hx + _f(j, hx, hy)
            step_y = np.asarray(sys.g.eval(j, hy), dtype=float) if dy else hy
            x = sys.a.matrix(j) @ x
            y = np.asarray(sys.g.eval(j, y), dtype=float) if dy else y
            hx, hy = self.H(j + 1, x, y)
            r = np.maximum(
                batch_vector_norm(step_x - hx, kind), batch_vector_norm(step_y - hy, kind)
            )
            res_fwd = np.maximum(res_fwd, r)

        res_dual = np.zeros(batch)
        u, v = xi_b, eta_b
        bx, by = self.bar_H(n, u, v)
        for j in range(n, n + steps):
            step_x = sys.a.matrix(j) @ bx
            step_y = np.asarray(sys.g.eval(j, by), dtype=float) if dy else by
            u = sys.a.matrix(j) @ u + _f(j, u, v)
            v = np.asarray(sys.g.eval(j, v), dtype=float) if dy else v
            bx, by = self.bar_H(j + 1, u, v)
            r = np.maximum(
                batch_vector_norm(step_x - bx, kind), batch_vector_norm(step_y - by, kind)
            )
            res_dual = np.maximum(res_dual, r)

        return res_fwd, res_dual

    def equivariance_detailed(self, n: int, xi, eta=None, steps: int = 10) -> tuple[float, float]:
        fwd, dual = self.equivariance_batch(n, xi, eta, steps)
        return float(np.max(fwd)), float(np.max(dual))

    def equivariance_residual(self, n: int, xi, eta=None, steps: int = 10) -> float:
        fwd, dual = self.equivariance_detailed(n, xi, eta, steps)
        return max(fwd, dual)

    def inverse_residual_batch(self, n: int, xi, eta=None) -> np.ndarray:
        """Per-probe max of |bar_H(H(p)) - p| and |H(bar_H(p)) - p| in the pair norm."""
        sys = self.sys
        dx, dy = sys.space.dim_x, sys.space.dim_y
        kind = sys.space.norm_kind
        xi_b, _ = _as_columns(xi, dx)
        batch = xi_b.shape[1]
        eta_b = np.zeros((dy, batch)) if eta is None else _as_columns(eta, dy, batch)[0]
        hx, hy = self.H(n, xi_b, eta_b)
        bx, by = self.bar_H(n, hx, hy)
        r1 = np.maximum(
            batch_vector_norm(bx - xi_b, kind), batch_vector_norm(by - eta_b, kind)
        )
        bx2, by2 = self.bar_H(n, xi_b, eta_b)
        hx2, hy2 = self.H(n, bx2, by2)
        r2 = np.maximum(
            batch_vector_norm(hx2 - xi_b, kind), batch_vector_norm(hy2 - eta_b, kind)
        )
        return np.maximum(r1, r2)

    def inverse_residual(self, n: int, xi, eta=None) -> float:
        return float(np.max(self.inverse_residual_batch(n, xi, eta)))
