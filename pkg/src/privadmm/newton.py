"""Damped Newton minimizer for smooth strongly convex functions.

Used as the inner solver for non-quadratic subproblems and as the
high-accuracy centralized oracle.  The Hessian is approximated by central
finite differences of the analytic gradient; dimensions here are small.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["InnerSolveFailure", "damped_newton"]


class InnerSolveFailure(RuntimeError):
    """Inner minimization failed to reach the gradient tolerance."""


def _fd_jacobian(grad: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    n = x.size
    jac = np.empty((n, n))
    for i in range(n):
        h = 1e-6 * (1.0 + abs(x[i]))
        e = np.zeros(n)
        e[i] = h
        jac[:, i] = (grad(x + e) - grad(x - e)) / (2.0 * h)
    return 0.5 * (jac + jac.T)


def damped_newton(
    grad: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float = 1e-10,
    max_iters: int = 100,
    hess: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Minimize a strongly convex function given its gradient.

    Backtracks on the gradient norm, which is a valid merit function for
    strongly monotone gradients.  Raises InnerSolveFailure if the gradient
    norm does not fall below `tol` within `max_iters` Newton steps.
    """
    x = np.array(x0, dtype=float)
    g = grad(x)
    for _ in range(max_iters):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return x
        h = hess(x) if hess is not None else _fd_jacobian(grad, x)
        try:
            step = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            # FD Hessian can be singular far from the minimum; fall back to
            # a gradient step scaled by the local curvature estimate.
            step = -g / max(float(np.abs(h).max()), 1.0)
        t = 1.0
        for _ in range(60):
            x_new = x + t * step
            g_new = grad(x_new)
            if float(np.linalg.norm(g_new)) <= (1.0 - 0.25 * t) * gnorm:
                break
            t *= 0.5
        else:
            raise InnerSolveFailure("line search stalled")
        x, g = x_new, g_new
    if float(np.linalg.norm(g)) <= tol:
        return x
    raise InnerSolveFailure(
        f"gradient norm {float(np.linalg.norm(g)):.3e} above tolerance {tol:.1e} "
        f"after {max_iters} iterations"
    )
