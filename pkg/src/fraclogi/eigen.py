"""First eigenpairs by Rayleigh-quotient minimization.

All solvers here minimize a scale-invariant quotient

    Q(v) = (||v||^p + mu * int b |v|^p) / ||v||_{L^m}^p

over nonnegative fields supported on a node mask, by projected gradient
descent on the sphere ``||v||_{L^m} = 1`` with Barzilai-Borwein steps in the
metric of the operator diagonal.  m = p gives lambda_1 (mu = 0) and the
weighted eigenvalue lambda_mu; m = q + 1 gives the Sobolev-type constant used
for the mountain-pass level.  For p < 2 and m = p a nonlinear inverse power
iteration is used instead, since first-order descent stalls there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fraclogi.grid import distance_profile
from fraclogi.newton import newton_minimize
from fraclogi.nonlocal_op import NonlocalOperator, phi


@dataclass(frozen=True)
class EigenOptions:
    rtol: float = 1e-8
    max_iter: int = 50_000
    memory: int = 10
    # p < 2 only: stop once the quotient has not improved (relatively) by more
    # than stall_rtol over stall_window iterations
    stall_window: int = 400
    stall_rtol: float = 1e-13


@dataclass(frozen=True)
class EigenResult:
    lam: float
    eigenfield: np.ndarray
    iterations: int
    residual: float
    mu: float | None = None
    status: str = "residual"

    def to_dict(self) -> dict:
        out = {
            "lambda": self.lam,
            "iterations": self.iterations,
            "residual": self.residual,
            "status": self.status,
        }
        if self.mu is not None:
            out["mu"] = self.mu
        return out


class EigenConvergenceError(RuntimeError):
    def __init__(self, message, iterate, residual):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


def _normalize(v, m, h):
    return v / (h * np.sum(v**m)) ** (1.0 / m)


def minimize_quotient(
    op: NonlocalOperator,
    m: float,
    v0: np.ndarray,
    weight: np.ndarray | None = None,
    opts: EigenOptions = EigenOptions(),
):
    """Minimize the quotient over nonnegative local vectors of ``op``.

    Returns ``(Q, v, iterations, residual, status)`` with ``v`` normalized
    in ``L^m``; ``residual`` is the max-norm of the projected Euler-Lagrange
    residual ``Lv + weight Phi_p(v) - Q Phi_m(v)``.

    For p < 2, Phi_p is not Lipschitz at 0 and the strong residual near flat
    parts of the minimizer cannot drop below roughly sqrt(machine eps), so
    there the loop also stops when the quotient stagnates.
    """
    p = op.p
    h = op.cell_volume
    wt = np.zeros(op.n) if weight is None else np.asarray(weight, dtype=float)
    metric = 2.0 * (op.row_sum + op.zeta) + wt

    def evaluate(v):
        lv = op.apply_local(v)
        num = op.energy_local(v) + h * float(wt @ (v**p))
        q = num  # v is normalized
        r = lv + wt * phi(v, p) - q * phi(v, m)
        return q, r

    def kkt(v, r):
        # at clamped nodes only a negative residual (pointing inward) counts
        active = (v > 0) | (r < 0)
        return float(np.max(np.abs(r[active]), initial=0.0))

    v = _normalize(np.maximum(np.asarray(v0, dtype=float), 0.0), m, h)
    q, r = evaluate(v)
    recent = [q]
    alpha = 1.0
    best, best_it = q, 0
    for it in range(1, opts.max_iter + 1):
        res = kkt(v, r)
        scale = q * np.max(v) ** (p - 1.0)
        if res <= opts.rtol * scale:
            return q, v, it - 1, res, "residual"
        if q < best * (1.0 - opts.stall_rtol):
            best, best_it = q, it
        elif p < 2.0 and it - best_it >= opts.stall_window:
            return q, v, it - 1, res, "stagnation"
        d = -r / metric
        ref = max(recent)
        decrease = float(r @ (r / metric))
        while True:
            trial = np.maximum(v + alpha * d, 0.0)
            if not trial.any():
                alpha *= 0.5
                continue
            trial = _normalize(trial, m, h)
            q_new, r_new = evaluate(trial)
            if q_new <= ref - 1e-4 * alpha * decrease * h or alpha < 1e-14:
                break
            alpha *= 0.5
        s = trial - v
        y = r_new - r
        sy = float(s @ y)
        alpha = float(s @ (metric * s)) / sy if sy > 0 else 10.0 * alpha
        alpha = min(max(alpha, 1e-10), 1e6)
        v, q, r = trial, q_new, r_new
        recent.append(q)
        if len(recent) > opts.memory:
            recent.pop(0)
    raise EigenConvergenceError(
        f"quotient minimization did not converge in {opts.max_iter} iterations", v, kkt(v, r)
    )


def inverse_iteration(
    op: NonlocalOperator,
    v0: np.ndarray,
    weight: np.ndarray | None = None,
    opts: EigenOptions = EigenOptions(),
):
    """Nonlinear inverse power iteration for the m = p quotient.

    Each step solves the convex problem ``Lw + weight Phi_p(w) = Phi_p(v)``
    by damped Newton and renormalizes.  The quotient decreases monotonically.
    Used for p < 2, where first-order descent crawls near flat parts of the
    minimizer.  Returns the same tuple as :func:`minimize_quotient`.
    """
    p = op.p
    h = op.cell_volume
    wt = np.zeros(op.n) if weight is None else np.asarray(weight, dtype=float)

    def quotient(v):
        return op.energy_local(v) + h * float(wt @ (v**p))

    def residual(v, q):
        r = op.apply_local(v) + wt * phi(v, p) - q * phi(v, p)
        active = (v > 0) | (r < 0)
        return float(np.max(np.abs(r[active]), initial=0.0))

    v = _normalize(np.maximum(np.asarray(v0, dtype=float), 0.0), p, h)
    q = quotient(v)
    for it in range(1, opts.max_iter + 1):
        f = phi(v, p)

        def fun(w):
            return (op.energy_local(w) / p + h * float(wt @ (np.abs(w) ** p)) / p) - h * float(f @ w)

        def grad_hess(w):
            g = h * (op.apply_local(w) + wt * phi(w, p) - f)
            hess = op.jacobian_local(w)
            if wt.any():
                eps = 1e-12 * max(1.0, float(np.max(np.abs(w))))
                hess[np.diag_indices(op.n)] += (p - 1.0) * wt * (w * w + eps * eps) ** ((p - 2.0) / 2.0)
            return g, h * hess

        w0 = v / q ** (1.0 / (p - 1.0))
        inner = newton_minimize(fun, grad_hess, w0, project=lambda w: np.maximum(w, 0.0))
        w = _normalize(inner.x, p, h)
        q_new = quotient(w)
        change = float(np.max(np.abs(w - v)))
        v, q_old, q = w, q, q_new
        if abs(q_old - q) <= opts.stall_rtol * q and change <= np.sqrt(opts.rtol) * np.max(v):
            return q, v, it, residual(v, q), "inverse_iteration"
    raise EigenConvergenceError(
        f"inverse iteration did not converge in {opts.max_iter} steps", v, residual(v, q)
    )


def _solve(op, v0, weight, opts):
    if op.p < 2.0:
        return inverse_iteration(op, v0, weight, opts)
    return minimize_quotient(op, op.p, v0, weight, opts)


def _start(op: NonlocalOperator, mask: np.ndarray) -> np.ndarray:
    return op.local(distance_profile(op.grid, mask, op.s))


def first_eigen(op: NonlocalOperator, domain_mask=None, opts: EigenOptions = EigenOptions()) -> EigenResult:
    """lambda_1 of the sub-domain ``domain_mask`` (default: the operator's own mask)."""
    mask = op.mask if domain_mask is None else np.asarray(domain_mask, dtype=bool)
    sub = op if np.array_equal(mask, op.mask) else op.restrict(mask)
    lam, v, its, res, status = _solve(sub, _start(sub, mask), None, opts)
    return EigenResult(lam, sub.extend(v), its, res, status=status)


def weighted_eigen(
    op: NonlocalOperator, b: np.ndarray, mu: float, opts: EigenOptions = EigenOptions()
) -> EigenResult:
    """Minimize ``||w||^p + mu int b |w|^p`` over ``||w||_{L^p} = 1`` on the full mask."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    weight = mu * op.local(b)
    lam, v, its, res, status = _solve(op, _start(op, op.mask), weight, opts)
    return EigenResult(lam, op.extend(v), its, res, mu=mu, status=status)


def rayleigh_quotient(op: NonlocalOperator, u: np.ndarray, b=None, mu: float = 0.0) -> float:
    v = op.local(u)
    h = op.cell_volume
    num = op.energy_local(v)
    if b is not None and mu:
        num += mu * h * float(op.local(b) @ (np.abs(v) ** op.p))
    return num / (h * float(np.sum(np.abs(v) ** op.p)))
