"""Solution maps of the coupled and uncoupled systems.

Forward solutions step the recursions directly.  Backward solutions of the
coupled x-recursion solve, at each step j, the fixed-point equation

    T_j(xi, eta) = A_j^{-1} xi - A_j^{-1} f_j(T_j(xi, eta), eta)

by Picard iteration; the map is a contraction with rate |A_j^{-1}| gamma_j,
which must be < 1.  T_j inverts the step map F_j(x, eta) = A_j x + f_j(x, eta).

The module also evaluates the per-step Lipschitz products

    lip_C(k, n): stretch of xi -> x2(k, n, xi, eta)
    lip_D(k, n): stretch of eta -> y(k, n, eta)
    lip_M(k, n): stretch of eta -> x2(k, n, xi, eta)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractionViolation, NoConvergence
from .system import SystemSpec, batch_vector_norm, transition


@dataclass(frozen=True)
class SolveOptions:
    """Tolerances for the backward fixed-point steps."""

    fixed_point_tol: float = 1e-12
    max_iters: int = 200

    def __post_init__(self):
        if self.fixed_point_tol <= 0.0:
            raise ValueError("fixed_point_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


DEFAULT_SOLVE = SolveOptions()


def _as_batch(v, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"expected vector of length {dim}, got {arr.shape}")
        return arr.reshape(dim, 1), True
    if arr.shape[0] != dim:
        raise ValueError(f"expected ({dim}, batch) array, got {arr.shape}")
    return arr, False


def _coupling_value(sys: SystemSpec, j: int, x, y) -> np.ndarray:
    """f_j at a state or column batch, with the batch shape enforced."""
    out = np.asarray(sys.f.eval(j, x, y), dtype=float)
    x_arr = np.asarray(x)
    if x_arr.ndim == 2 and out.ndim == 1:
        if x_arr.shape[1] != 1:
            raise ValueError("coupling eval must broadcast column batches")
        out = out.reshape(-1, 1)
    return out


def evolve_driver(sys: SystemSpec, k: int, n: int, eta) -> np.ndarray:
    """Driver solution y(k, n, eta): composed g_j forward, composed g_j^{-1} backward."""
    y = np.asarray(eta, dtype=float)
    if sys.space.dim_y == 0:
        return y.copy()
    if k >= n:
        for j in range(n, k):
            y = np.asarray(sys.g.eval(j, y), dtype=float)
    else:
        for j in range(n - 1, k - 1, -1):
            y = np.asarray(sys.g.eval_inv(j, y), dtype=float)
    return y


def evolve_linear(sys: SystemSpec, k: int, n: int, xi) -> np.ndarray:
    """Solution of the uncoupled x-recursion: transition(k, n) @ xi."""
    return transition(sys, k, n) @ np.asarray(xi, dtype=float)


@dataclass
class BackwardStepResult:
    value: np.ndarray
    iterations: int
    residual: float
    step_norms: list = field(default_factory=list)


def backward_step_detailed(
    sys: SystemSpec, j: int, xi, eta, opts: Optional[SolveOptions] = None
) -> BackwardStepResult:
    """Solve F_j(u, eta) = xi for u, i.e. evaluate T_j(xi, eta).

    Picard iteration from the initial guess A_j^{-1} xi (exact when f == 0).
    The residual is the defect |A_j u + f_j(u, eta) - xi| in the space norm,
    measured relative to max(1, |xi|): backward trajectories can grow
    exponentially, and the achievable defect scales with the data.  Step
    sizes contract at rate <= |A_j^{-1}| gamma_j.
    """
    opts = opts or DEFAULT_SOLVE
    sys.require_backward_margin(j)
    kind = sys.space.norm_kind
    a = sys.a.matrix(j)
    a_inv = sys.a.inverse(j)
    x, single = _as_batch(xi, sys.space.dim_x)
    scale = np.maximum(1.0, batch_vector_norm(x, kind))
    base = a_inv @ x
    u = base
    steps: list = []
    tol = opts.fixed_point_tol
    for it in range(opts.max_iters + 1):
        fu = np.asarray(sys.f.eval(j, u if not single else u[:, 0], eta), dtype=float)
        if fu.ndim == 1:
            if not single:
                raise ValueError("coupling eval must broadcast column batches")
            fu = fu.reshape(-1, 1)
        residual = float(np.max(batch_vector_norm(a @ u + fu - x, kind) / scale))
        if residual <= tol:
            value = u[:, 0] if single else u
            return BackwardStepResult(value, it, residual, steps)
        new = base - a_inv @ fu
        steps.append(float(np.max(batch_vector_norm(new - u, kind))))
        u = new
    raise NoConvergence(f"backward step at j={j}", opts.max_iters, residual, tol)


def backward_step(sys: SystemSpec, j: int, xi, eta, opts: Optional[SolveOptions] = None) -> np.ndarray:
    return backward_step_detailed(sys, j, xi, eta, opts).value


def evolve_coupled(
    sys: SystemSpec, k: int, n: int, xi, eta, opts: Optional[SolveOptions] = None
) -> np.ndarray:
    """Solution x2(k, n, xi, eta) of the coupled x-recursion.

    Forward: step x_{j+1} = A_j x_j + f_j(x_j, y_j) alongside the driver.
    Backward: chain T_j with the driver pulled back, splitting the caller's
    fixed-point tolerance across the n - k steps.
    """
    opts = opts or DEFAULT_SOLVE
    x = np.asarray(xi, dtype=float)
    y = np.asarray(eta, dtype=float)
    if k == n:
        return x.copy()
    if k > n:
        for j in range(n, k):
            x = sys.a.matrix(j) @ x + _coupling_value(sys, j, x, y)
            if sys.space.dim_y:
                y = np.asarray(sys.g.eval(j, y), dtype=float)
        return x
    per_step = SolveOptions(
        fixed_point_tol=opts.fixed_point_tol / (n - k), max_iters=opts.max_iters
    )
    for j in range(n - 1, k - 1, -1):
        if sys.space.dim_y:
            y = np.asarray(sys.g.eval_inv(j, y), dtype=float)
        x = backward_step(sys, j, x, y, per_step)
    return x


def coupled_trajectory(
    sys: SystemSpec, n: int, lo: int, hi: int, xi, eta, opts: Optional[SolveOptions] = None
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """All coupled states (x_k, y_k) for k in [lo, hi] through (xi, eta) at time n.

    Batch-ready: xi may be (dim_x, batch) with eta (dim_y, batch).  One
    backward fixed-point solve per step, shared across the batch.
    """
    opts = opts or DEFAULT_SOLVE
    x0 = np.asarray(xi, dtype=float)
    y0 = np.asarray(eta, dtype=float)
    states: dict[int, tuple[np.ndarray, np.ndarray]] = {n: (x0, y0)}
    x, y = x0, y0
    for j in range(n, hi):
        x = sys.a.matrix(j) @ x + _coupling_value(sys, j, x, y)
        y = np.asarray(sys.g.eval(j, y), dtype=float) if sys.space.dim_y else y
        states[j + 1] = (x, y)
    x, y = x0, y0
    if lo < n:
        per_step = SolveOptions(
            fixed_point_tol=opts.fixed_point_tol / (n - lo), max_iters=opts.max_iters
        )
        for j in range(n - 1, lo - 1, -1):
            y = np.asarray(sys.g.eval_inv(j, y), dtype=float) if sys.space.dim_y else y
            x = backward_step(sys, j, x, y, per_step)
            states[j] = (x, y)
    return states


def _backward_factor(sys: SystemSpec, j: int) -> float:
    inv_norm = sys.a_inv_norm(j)
    denom = 1.0 - sys.f.gamma(j) * inv_norm
    if denom <= 0.0:
        raise ContractionViolation(j, sys.f.gamma(j) * inv_norm)
    return inv_norm / denom


def lip_C(sys: SystemSpec, k: int, n: int) -> float:
    """First-variable Lipschitz product of x2(k, n, ., eta)."""
    if k == n:
        return 1.0
    prod = 1.0
    if k > n:
        for j in range(n, k):
            prod *= sys.a_norm(j) + sys.f.gamma(j)
    else:
        for j in range(k, n):
            prod *= _backward_factor(sys, j)
    return prod


def lip_D(sys: SystemSpec, k: int, n: int) -> float:
    """Lipschitz product of eta -> y(k, n, eta)."""
    if k == n:
        return 1.0
    prod = 1.0
    if k > n:
        for j in range(n, k):
            prod *= sys.g.tau(j)
    else:
        for j in range(k, n):
            prod *= sys.g.sigma(j)
    return prod


def lip_M(sys: SystemSpec, k: int, n: int) -> float:
    """Second-variable Lipschitz product of x2(k, n, xi, .)."""
    if k == n:
        return 1.0
    prod = 1.0
    if k > n:
        for j in range(n, k):
            prod *= sys.a_norm(j) + sys.f.gamma(j) + max(sys.f.rho(j), sys.g.tau(j))
    else:
        for j in range(k, n):
            prod *= _backward_factor(sys, j) + sys.g.sigma(j)
    return prod
