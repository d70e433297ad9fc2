"""Quasi-Newton minimization and finite-difference gradients.

BFGS with the inverse-Hessian update, an Armijo backtracking line
search, and optional box bounds handled by projecting trial points onto
the box and skipping the Hessian update when the curvature condition
fails.  Small and re-entrant; several instances may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
MIN_STEP = 1e-16


@dataclass
class OptProblem:
    objective: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    x0: np.ndarray = None
    bounds: Optional[np.ndarray] = None  # (d, 2) array of [low, high]


@dataclass
class OptResult:
    x_best: np.ndarray
    f_best: float
    iterations: int
    converged: bool
    reason: str


def finite_diff_grad(f: Callable, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = eps
        g[i] = (f(x + step) - f(x - step)) / (2.0 * eps)
    return g


def fd_gradient(f: Callable, eps: float = 1e-6) -> Callable:
    """Wrap an objective as a gradient callable using central differences."""

    def grad(x):
        return finite_diff_grad(f, x, eps)

    return grad


def _project(x, bounds):
    if bounds is None:
        return x
    return np.clip(x, bounds[:, 0], bounds[:, 1])


def _projected_grad(x, g, bounds):
    """Zero out gradient components that push against an active bound."""
    if bounds is None:
        return g
    pg = g.copy()
    at_lo = x <= bounds[:, 0] + 1e-14
    at_hi = x >= bounds[:, 1] - 1e-14
    pg[at_lo & (g > 0)] = 0.0
    pg[at_hi & (g < 0)] = 0.0
    return pg


def bfgs_minimize(
    p: OptProblem,
    tol_grad: float = 1e-8,
    max_iter: int = 500,
    stop_when: Optional[Callable[[np.ndarray, float], bool]] = None,
) -> OptResult:
    """Minimize p.objective from p.x0.

    Terminates when the (projected) gradient infinity norm drops below
    tol_grad, when max_iter is reached, or when stop_when(x, f) returns
    true at an accepted iterate.  A non-finite objective value aborts
    with the last good iterate.
    """
    f = p.objective
    grad = p.gradient if p.gradient is not None else fd_gradient(f)
    bounds = None if p.bounds is None else np.asarray(p.bounds, dtype=float)
    x = _project(np.asarray(p.x0, dtype=float).copy(), bounds)
    fx = f(x)
    if not np.isfinite(fx):
        raise ValueError("objective not finite at the start point")
    g = np.asarray(grad(x), dtype=float)
    d = x.size
    H = np.eye(d)
    first_update = True

    for it in range(1, max_iter + 1):
        pg = _projected_grad(x, g, bounds)
        if np.max(np.abs(pg)) < tol_grad:
            return OptResult(x, fx, it - 1, True, "gradient")

        direction = -H @ g
        if direction @ g >= 0.0:  # not a descent direction; reset
            direction = -pg
            H = np.eye(d)
            first_update = True
        alpha = 1.0
        x_new = None
        while alpha >= MIN_STEP:
            trial = _project(x + alpha * direction, bounds)
            step = trial - x
            if np.max(np.abs(step)) == 0.0:
                break
            f_trial = f(trial)
            if not np.isfinite(f_trial):
                alpha *= ARMIJO_SHRINK
                continue
            if f_trial <= fx + ARMIJO_C * (g @ step):
                x_new = trial
                f_new = f_trial
                break
            alpha *= ARMIJO_SHRINK
        if x_new is None:
            return OptResult(x, fx, it, False, "line_search_failure")

        g_new = np.asarray(grad(x_new), dtype=float)

        # Curvature refinement: if the accepted point badly violates the
        # Wolfe curvature condition, jump to the secant estimate of the
        # line minimum (exact for a quadratic slice) when that improves.
        # Steps that already satisfy the condition are left alone so
        # quasi-Newton unit steps stay intact.
        gd = g @ direction
        gnd = g_new @ direction
        if (alpha == 1.0 and gd < 0.0 and abs(gnd) > 0.1 * abs(gd)
                and gnd > gd
                and np.array_equal(x_new, x + alpha * direction)):
            alpha_s = min(alpha * gd / (gd - gnd), 10.0 * alpha)
            if np.isfinite(alpha_s) and alpha_s > 0.0:
                trial_q = _project(x + alpha_s * direction, bounds)
                step_q = trial_q - x
                if np.max(np.abs(step_q)) > 0.0:
                    f_q = f(trial_q)
                    if (np.isfinite(f_q) and f_q < f_new
                            and f_q <= fx + ARMIJO_C * (g @ step_q)):
                        x_new = trial_q
                        f_new = f_q
                        g_new = np.asarray(grad(x_new), dtype=float)
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if first_update:
                H = (sy / (y @ y)) * np.eye(d)
                first_update = False
            rho = 1.0 / sy
            Hy = H @ y
            H = H - np.outer(Hy, s) * rho - np.outer(s, Hy) * rho \
                + np.outer(s, s) * (rho * rho * (y @ Hy)) + np.outer(s, s) * rho
        # else: curvature violated (e.g. projection onto a bound); keep H

        x, fx, g = x_new, f_new, g_new
        if stop_when is not None and stop_when(x, fx):
            return OptResult(x, fx, it, True, "stop_condition")

    return OptResult(x, fx, max_iter, False, "max_iter")
