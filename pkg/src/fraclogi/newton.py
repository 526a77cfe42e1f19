"""Damped Newton minimization of smooth convex functionals on small dense systems."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    iterations: int
    decrement: float
    converged: bool


def spd_solve(hess, g: np.ndarray) -> np.ndarray:
    """Solve ``hess x = g`` with a positive definite matrix.

    ``hess`` may be a sequence of candidate matrices tried in order (e.g. the
    true Hessian, then its convex part); the last one gets a growing diagonal
    shift if Cholesky still fails.
    """
    if isinstance(hess, (list, tuple)):
        for cand in hess[:-1]:
            try:
                factor = cho_factor(cand, lower=True, check_finite=False)
                return cho_solve(factor, g, check_finite=False)
            except LinAlgError:
                pass
        hess = hess[-1]
    shift = 0.0
    scale = float(np.max(np.abs(np.diag(hess)), initial=1.0))
    for _ in range(30):
        try:
            factor = cho_factor(hess + shift * np.eye(hess.shape[0]), lower=True, check_finite=False)
            return cho_solve(factor, g, check_finite=False)
        except LinAlgError:
            shift = max(1e-12 * scale, 10.0 * shift)
    raise LinAlgError("could not regularize Hessian to positive definite")


def newton_minimize(
    fun: Callable[[np.ndarray], float],
    grad_hess: Callable[[np.ndarray], tuple],
    x0: np.ndarray,
    rtol: float = 1e-15,
    atol: float = 0.0,
    max_iter: int = 200,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    stop: Callable[[np.ndarray, np.ndarray], bool] | None = None,
    grad: Callable[[np.ndarray], np.ndarray] | None = None,
) -> NewtonResult:
    """Minimize ``fun`` from ``x0`` with Armijo-damped Newton steps.

    Stops when half the squared Newton decrement ``g . H^-1 g / 2`` (the
    predicted decrease) drops below ``atol + rtol |f|``, i.e. below what
    rounding in ``f`` can resolve.  ``project`` is applied to every trial
    point (e.g. clamping to the nonnegative cone).  ``stop(x, g)`` is an
    optional extra convergence test on the current point and gradient.

    Near the minimizer the decrease of ``f`` drowns in rounding noise; if
    ``grad`` is given, a full step that halves the gradient max-norm is
    accepted even when the value test cannot confirm it.
    """
    x = np.array(x0, dtype=float)
    f = fun(x)
    dec = np.inf
    for it in range(max_iter):
        g, hess = grad_hess(x)
        if stop is not None and stop(x, g):
            return NewtonResult(x, f, it, 0.0, True)
        step = spd_solve(hess, g)
        dec = 0.5 * float(g @ step)
        tol = atol + rtol * abs(f)
        if dec <= tol:
            return NewtonResult(x, f, it, dec, True)
        t = 1.0
        for _ in range(40):
            trial = x - t * step
            if project is not None:
                trial = project(trial)
            f_new = fun(trial)
            # the slack lets quadratically convergent steps through once the
            # predicted decrease is below the rounding level of f
            if f_new <= f - 1e-4 * t * dec + 1e-14 * abs(f):
                break
            if t == 1.0 and grad is not None:
                if np.max(np.abs(grad(trial))) <= 0.5 * np.max(np.abs(g)):
                    break
            t *= 0.5
        else:
            # no decrease resolvable in floating point
            return NewtonResult(x, f, it, dec, dec <= 1e3 * tol)
        x, f = trial, f_new
    return NewtonResult(x, f, max_iter, dec, False)
