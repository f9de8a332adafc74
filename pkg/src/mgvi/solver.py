"""Conjugate gradients for self-adjoint positive-definite implicit systems."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linop import LinearOperator, ShapeError


@dataclass(frozen=True)
class CGConfig:
    """Stopping rules for a CG solve.

    The iteration cap is always active; the residual tolerances may both be
    zero, in which case the solver simply runs the requested number of
    steps.  Iteration counts rather than tolerances are the knob the
    shipped experiment presets use.
    """

    max_iterations: int
    relative_residual_tolerance: float = 0.0
    absolute_residual_tolerance: float = 0.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.relative_residual_tolerance < 0 or self.absolute_residual_tolerance < 0:
            raise ValueError("tolerances must be non-negative")


@dataclass
class CGResult:
    solution: np.ndarray
    iterations_used: int
    final_residual_norm: float
    converged: bool


class CGBreakdownError(RuntimeError):
    """Non-finite values or loss of positive definiteness during CG."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


def cg_solve(
    op: LinearOperator,
    b,
    x0=None,
    config: CGConfig | None = None,
    callback: Callable[[np.ndarray], None] | None = None,
) -> CGResult:
    """Solve op x = b with plain (unpreconditioned) conjugate gradients.

    ``op`` must be self-adjoint positive definite.  ``x0`` is an optional
    warm start (default: zero).  The reported residual norm is recomputed
    from scratch at exit, so ``converged`` always reflects the true
    residual, not the recurrence value.
    """
    if config is None:
        config = CGConfig(max_iterations=op.domain_dim)
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1 or b.size != op.domain_dim:
        raise ShapeError(f"rhs must have length {op.domain_dim}, got shape {b.shape}")
    if op.domain_dim != op.codomain_dim:
        raise ShapeError("cg_solve needs a square operator")

    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=np.float64)
        if x.shape != b.shape:
            raise ShapeError("x0 must match the rhs shape")
        r = b - op.apply(x)

    threshold = max(
        config.absolute_residual_tolerance,
        config.relative_residual_tolerance * float(np.linalg.norm(b)),
    )
    rs = float(r @ r)
    if not np.isfinite(rs):
        raise CGBreakdownError("non-finite initial residual", 0)

    iterations = 0
    if np.sqrt(rs) > threshold:
        p = r.copy()
        for k in range(1, config.max_iterations + 1):
            ap = op.apply(p)
            pap = float(p @ ap)
            if not np.isfinite(pap):
                raise CGBreakdownError("non-finite curvature p^T A p", k)
            if pap <= 0.0:
                raise CGBreakdownError(
                    f"operator not positive definite (p^T A p = {pap})", k
                )
            alpha = rs / pap
            x += alpha * p
            r -= alpha * ap
            rs_new = float(r @ r)
            if not np.isfinite(rs_new):
                raise CGBreakdownError("non-finite residual", k)
            iterations = k
            if callback is not None:
                callback(x.copy())
            if np.sqrt(rs_new) <= threshold:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new

    final_residual = float(np.linalg.norm(b - op.apply(x)))
    return CGResult(
        solution=x,
        iterations_used=iterations,
        final_residual_norm=final_residual,
        converged=final_residual <= threshold,
    )
