"""Levenberg-Marquardt for small dense least-squares problems."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LmConfig:
    lam0: float = 1e-3
    lam_up: float = 10.0
    lam_down: float = 10.0
    lam_max: float = 1e16
    max_iter: int = 200
    cost_tol: float = 1e-10
    step_tol: float = 1e-8
    grad_tol: float = 1e-14

    def __post_init__(self):
        if not self.lam0 > 0:
            raise ValueError("lam0 must be positive")
        if not (self.lam_up > 1 and self.lam_down > 1):
            raise ValueError("damping factors must exceed 1")


@dataclass
class LmResult:
    x: np.ndarray
    cost: float  # sum of squared residuals
    iterations: int
    success: bool
    message: str
    history: list[float] = field(default_factory=list)  # accepted costs, starting with the initial one


def lm_optimize(residual_fn: Callable[[np.ndarray], np.ndarray],
                jacobian_fn: Callable[[np.ndarray], np.ndarray],
                x0, cfg: LmConfig = LmConfig(),
                project: Callable[[np.ndarray], np.ndarray] | None = None) -> LmResult:
    """Minimize ``sum(residual_fn(x) ** 2)``.

    Each iteration solves ``(J^T J + lam * diag(J^T J)) dx = -J^T r``.  A step
    is accepted only if the cost drops (then ``lam /= lam_down``); otherwise
    ``lam *= lam_up`` and the step is retried.  ``project`` maps a trial point
    back into the feasible box.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    if project is not None:
        x = project(x)
    r = np.asarray(residual_fn(x), dtype=np.float64)
    cost = float(r @ r)
    history = [cost]
    lam = cfg.lam0
    if not np.isfinite(cost):
        return LmResult(x, cost, 0, False, "non-finite initial cost", history)

    for it in range(1, cfg.max_iter + 1):
        if cost <= cfg.cost_tol:
            return LmResult(x, cost, it - 1, True, "cost below tolerance", history)
        jac = np.asarray(jacobian_fn(x), dtype=np.float64)
        a = jac.T @ jac
        g = jac.T @ r
        if np.max(np.abs(g)) <= cfg.grad_tol * max(1.0, cost):
            return LmResult(x, cost, it - 1, True, "gradient below tolerance", history)
        diag = np.diag(a).copy()
        diag[diag <= 0] = 1e-12 * max(float(diag.max()), 1.0)
        solved_any = False
        while lam <= cfg.lam_max:
            try:
                dx = np.linalg.solve(a + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                dx = None
            if dx is None or not np.all(np.isfinite(dx)):
                lam *= cfg.lam_up
                continue
            solved_any = True
            x_new = x + dx
            if project is not None:
                x_new = project(x_new)
            r_new = np.asarray(residual_fn(x_new), dtype=np.float64)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                break
            lam *= cfg.lam_up
        else:
            if not solved_any:
                return LmResult(x, cost, it, False, "normal equations singular at every damping level", history)
            return LmResult(x, cost, it, True, "no step decreases the cost", history)

        step = float(np.linalg.norm(x_new - x))
        decrease = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / cfg.lam_down, 1e-15)
        if step <= cfg.step_tol * (float(np.linalg.norm(x)) + cfg.step_tol):
            return LmResult(x, cost, it, True, "step below tolerance", history)
        if decrease <= cfg.cost_tol * max(cost, 1e-300) or cost <= cfg.cost_tol:
            return LmResult(x, cost, it, True, "cost converged", history)

    return LmResult(x, cost, cfg.max_iter, True, "iteration limit", history)
