"""Steady states of the logistic problem  L u = lam u^q - b u^r  in Omega.

``L`` is the discrete fractional p-Laplacian of a :class:`NonlocalOperator`.
The energy

    J(v) = ||v||^p / p - lam/(q+1) int |v|^(q+1) + int b |v|^(r+1) / (r+1)

has gradient ``h (Lv - lam Phi_{q+1}(v) + b Phi_{r+1}(v))``.  For q <= p-1 it
is coercive and its positive minimizer is the unique positive solution; for
q > p-1 solutions are saddle points, found by minimizing J over the Nehari
set (the ray maxima) and polishing with Newton's method.

Residuals reported here are max-norms of the nodal residual
``Lv - lam v^q + b v^r``, i.e. the weak residual tested against each nodal
indicator and divided by the cell volume.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, lu_factor, lu_solve
from scipy.optimize import brentq

from fraclogi.eigen import EigenOptions, first_eigen
from fraclogi.grid import distance_profile
from fraclogi.newton import newton_minimize
from fraclogi.nonlocal_op import NonlocalOperator, phi

NO_POSITIVE_SOLUTION = "no positive solution"


class SolverError(RuntimeError):
    """A steady-state solve failed to reach its tolerance."""

    def __init__(self, message, iterate=None, residual=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


@dataclass(frozen=True, eq=False)
class Problem:
    op: NonlocalOperator
    b: np.ndarray
    lam: float
    q: float
    r: float

    def __post_init__(self):
        p = self.op.p
        if not self.q > 0:
            raise ValueError("q must be positive")
        if not self.r > p - 1:
            raise ValueError("r must exceed p - 1")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        b = np.asarray(self.b, dtype=float)
        if b.shape != (self.op.grid.n_nodes,) or not np.all(np.isfinite(b)):
            raise ValueError("b must be a finite field on the grid")
        if np.any(b < 0):
            raise ValueError("b must be nonnegative")
        if np.any(b[~self.op.grid.interior] != 0):
            raise ValueError("b must vanish outside Omega")
        # The threshold interval for q = p-1 needs b > 0 somewhere.  Other
        # regimes accept b = 0, e.g. the problem posed on the refuge alone.
        if self.q == p - 1 and not np.any(b[self.op.mask] > 0):
            raise ValueError("b vanishes identically; the admissible lambda range is undefined")
        object.__setattr__(self, "b", b)

    @property
    def p(self) -> float:
        return self.op.p

    @property
    def b_local(self) -> np.ndarray:
        return self.op.local(self.b)

    def with_lambda(self, lam: float) -> "Problem":
        return replace(self, lam=float(lam))

    def on(self, mask: np.ndarray) -> "Problem":
        """The same equation posed on the sub-domain ``mask`` (zero outside it)."""
        mask = np.asarray(mask, dtype=bool)
        b = np.where(mask, self.b, 0.0)
        return replace(self, op=self.op.restrict(mask), b=b)


@dataclass(frozen=True)
class LambdaRange:
    q_class: str
    lower: float
    upper: float
    guard: float = 0.0
    # first eigenfunctions of Omega and the refuge (q = p-1 only), used as solver seeds
    omega_shape: np.ndarray | None = field(default=None, repr=False, compare=False)
    refuge_shape: np.ndarray | None = field(default=None, repr=False, compare=False)

    def contains(self, lam: float) -> bool:
        """Strict membership with the guard band applied at finite endpoints."""
        return self.lower + self.guard <= lam <= self.upper - self.guard and lam > 0

    def to_dict(self) -> dict:
        return {"q_class": self.q_class, "lower": self.lower, "upper": self.upper, "guard": self.guard}


@dataclass(frozen=True)
class SteadyState:
    field: np.ndarray
    residual: float
    energy_J: float
    positivity_floor: float
    lam: float
    tag: str = "positive"
    iterations: int = 0
    info: dict = field(default_factory=dict, compare=False)

    @property
    def positive(self) -> bool:
        return self.tag == "positive"


def q_class(p: float, q: float) -> str:
    if math.isclose(q, p - 1.0, rel_tol=0.0, abs_tol=1e-12):
        return "homogeneous"
    return "subhomogeneous" if q < p - 1 else "superlinear"


def critical_exponent(op: NonlocalOperator) -> float:
    """Fractional Sobolev exponent p* = dp/(d - sp), infinite when sp >= d."""
    d = op.grid.dimension
    sp = op.params.sp
    return math.inf if sp >= d else d * op.p / (d - sp)


def lambda_range(op: NonlocalOperator, q: float, opts: EigenOptions = EigenOptions()) -> LambdaRange:
    """Admissible lambda interval for positive steady states."""
    cls = q_class(op.p, q)
    if cls != "homogeneous":
        return LambdaRange(cls, 0.0, math.inf)
    refuge = op.grid.refuge & op.mask
    full = first_eigen(op, opts=opts)
    ref = first_eigen(op, refuge, opts=opts)
    if not ref.lam > full.lam:
        raise ValueError("refuge eigenvalue does not exceed the domain eigenvalue")
    return LambdaRange(
        cls,
        full.lam,
        ref.lam,
        1e-3 * (ref.lam - full.lam),
        full.eigenfield / np.max(full.eigenfield),
        ref.eigenfield / np.max(ref.eigenfield),
    )


# -- energy ---------------------------------------------------------------------------


def _energy_local(pb: Problem, v: np.ndarray) -> float:
    h = pb.op.cell_volume
    av = np.abs(v)
    return (
        pb.op.energy_local(v) / pb.p
        - pb.lam * h * float(np.sum(av ** (pb.q + 1.0))) / (pb.q + 1.0)
        + h * float(pb.b_local @ av ** (pb.r + 1.0)) / (pb.r + 1.0)
    )


def _residual_local(pb: Problem, v: np.ndarray) -> np.ndarray:
    return pb.op.apply_local(v) - pb.lam * phi(v, pb.q + 1.0) + pb.b_local * phi(v, pb.r + 1.0)


def energy_J(pb: Problem, v: np.ndarray) -> float:
    return _energy_local(pb, pb.op.local(v))


def grad_J(pb: Problem, v: np.ndarray) -> np.ndarray:
    return pb.op.extend(pb.op.cell_volume * _residual_local(pb, pb.op.local(v)))


def residual_field(pb: Problem, v: np.ndarray) -> np.ndarray:
    """Nodal residual ``Lv - lam Phi_{q+1}(v) + b Phi_{r+1}(v)`` as a field."""
    return pb.op.extend(_residual_local(pb, pb.op.local(v)))


def residual_norm(pb: Problem, v: np.ndarray) -> float:
    return float(np.max(np.abs(_residual_local(pb, pb.op.local(v))), initial=0.0))


def _hessians(pb: Problem, v: np.ndarray):
    """Full Hessian of J/h at ``v >= 0`` and its convex part (source term dropped)."""
    n = pb.op.n
    jac = pb.op.jacobian_local(v)
    vpos = np.maximum(v, 1e-300)
    absorb = pb.r * pb.b_local * vpos ** (pb.r - 1.0)
    convex = jac.copy()
    convex[np.diag_indices(n)] += absorb
    full = convex.copy()
    full[np.diag_indices(n)] -= pb.lam * pb.q * vpos ** (pb.q - 1.0)
    return full, convex


def _state(pb: Problem, v_local, iterations, floor_mask, tag="positive", info=None) -> SteadyState:
    u = pb.op.extend(v_local)
    mask = pb.op.mask if floor_mask is None else np.asarray(floor_mask, dtype=bool)
    return SteadyState(
        field=u,
        residual=residual_norm(pb, u),
        energy_J=energy_J(pb, u),
        positivity_floor=float(np.min(u[mask])) if mask.any() else 0.0,
        lam=pb.lam,
        tag=tag,
        iterations=iterations,
        info=info or {},
    )


def _residual_scale(pb: Problem, v: np.ndarray) -> float:
    return max(1.0, pb.lam * float(np.max(np.abs(v), initial=0.0)) ** pb.q)


# -- q <= p-1 --------------------------------------------------------------------------


def solve_subhomogeneous(
    pb: Problem,
    init: np.ndarray | None = None,
    tol: float = 1e-8,
    floor_mask: np.ndarray | None = None,
    admissible: LambdaRange | None = None,
) -> SteadyState:
    """Unique positive solution for q <= p-1 by minimizing J over v >= 0.

    Returns the zero field tagged ``"no positive solution"`` when lambda is
    not strictly inside the admissible range.  ``tol`` bounds the nodal
    residual relative to ``max(1, lam ||u||_inf^q)``.
    """
    p, q = pb.p, pb.q
    if q > p - 1 + 1e-12:
        raise ValueError("solve_subhomogeneous needs q <= p - 1")
    rng = admissible if admissible is not None else lambda_range(pb.op, q)
    if not rng.contains(pb.lam):
        zero = np.zeros(pb.op.n)
        return _state(pb, zero, 0, floor_mask, tag=NO_POSITIVE_SOLUTION, info={"range": rng.to_dict()})

    op = pb.op
    h = op.cell_volume
    seeds = [] if init is None else [np.maximum(op.local(init), 0.0)]
    seeds.append(op.local(_default_seed(pb, rng)))

    def grad_hess(v):
        return h * _residual_local(pb, v), tuple(h * m for m in _hessians(pb, v))

    def small(v, g):
        return float(np.max(np.abs(g))) <= 0.01 * tol * _residual_scale(pb, v) * h

    # a continuation seed may be poor (e.g. far from a much larger solution);
    # the default seed is the fallback
    failure = None
    for seed in seeds:
        if not np.any(seed > 0):
            continue
        try:
            v0 = ray_minimizer(pb, seed) * seed
        except ValueError as exc:
            failure = SolverError(str(exc))
            continue
        res = newton_minimize(
            lambda v: _energy_local(pb, v),
            grad_hess,
            v0,
            rtol=0.0,
            max_iter=500,
            project=lambda v: np.maximum(v, 0.0),
            stop=small,
            grad=lambda v: h * _residual_local(pb, v),
        )
        v = res.x
        resid = float(np.max(np.abs(_residual_local(pb, v))))
        if resid > tol * _residual_scale(pb, v):
            failure = SolverError(f"descent stalled at residual {resid:.3e}", op.extend(v), resid)
        elif not np.any(v > 0):
            failure = SolverError("descent collapsed to the zero field", op.extend(v), resid)
        else:
            break
    else:
        raise failure if failure is not None else ValueError("initial guess must be positive somewhere")
    return _state(pb, v, res.iterations, floor_mask, info={"range": rng.to_dict()})


def _default_seed(pb: Problem, rng: LambdaRange) -> np.ndarray:
    if rng.omega_shape is None:
        return distance_profile(pb.op.grid, pb.op.mask, pb.op.s)
    # q = p-1: the solution looks like the Omega eigenfunction near the lower
    # end and concentrates on the refuge towards the upper end
    w = (pb.lam - rng.lower) / (rng.upper - rng.lower)
    seed = (1.0 - w) * rng.omega_shape + w * rng.refuge_shape
    a, bq, _ = _ray_coefficients(pb, pb.op.local(seed))
    return seed if a < bq else rng.omega_shape


def ray_minimizer(pb: Problem, v: np.ndarray) -> float:
    """t > 0 minimizing J(t v) for q <= p-1.

    Solves ``A t^(p-1-q) + C t^(r-q) = lam B``; the left side increases in t.
    """
    p, q, r = pb.p, pb.q, pb.r
    a, bq, c = _ray_coefficients(pb, v)
    if q_class(p, q) == "homogeneous" and a >= bq:
        raise ValueError("initial shape has Rayleigh quotient above lambda; J has no negative values on its ray")

    def g(t):
        return a * t ** (p - 1.0 - q) + c * t ** (r - q) - bq

    hi = 1.0
    while g(hi) < 0:
        hi *= 2.0
    lo = 0.5
    while g(lo) > 0:
        lo *= 0.5
    return brentq(g, lo, hi, xtol=1e-300, rtol=1e-14)


def _ray_coefficients(pb: Problem, v: np.ndarray):
    h = pb.op.cell_volume
    a = pb.op.energy_local(v)
    bq = pb.lam * h * float(np.sum(np.abs(v) ** (pb.q + 1.0)))
    c = h * float(pb.b_local @ np.abs(v) ** (pb.r + 1.0))
    return a, bq, c


# -- q > p-1 ---------------------------------------------------------------------------


def ray_maximizer(pb: Problem, v: np.ndarray) -> float:
    """t > 0 maximizing J(t v) for a nonnegative local vector ``v`` (q > p-1, r < q).

    Solves ``A - lam B t^(q+1-p) + C t^(r+1-p) = 0``, whose positive root is
    unique when p-1 < r < q.
    """
    p, q, r = pb.p, pb.q, pb.r
    a, bq, c = _ray_coefficients(pb, v)
    if bq <= 0:
        raise ValueError("ray does not meet the source term")

    def g(t):
        return a - bq * t ** (q + 1.0 - p) + c * t ** (r + 1.0 - p)

    hi = 1.0
    while g(hi) > 0:
        hi *= 2.0
    lo = hi / 2.0 if hi > 1.0 else 1.0
    while g(lo) < 0:
        lo /= 2.0
    return brentq(g, lo, hi, xtol=1e-15, rtol=1e-15)


def _nehari_descent(pb: Problem, v0: np.ndarray, tol: float, max_iter: int):
    """Minimize J(t*(v) v) over nonnegative v by projected BB descent.

    The reduced functional is 0-homogeneous; v is kept at unit L^(q+1) norm.
    Returns ``(t* v, iterations)`` once the relative gradient is below ``tol``.
    """
    op = pb.op
    h = op.cell_volume
    m = pb.q + 1.0
    metric = 2.0 * (op.row_sum + op.zeta)

    def normalize(v):
        return v / (h * np.sum(v**m)) ** (1.0 / m)

    def evaluate(v):
        t = ray_maximizer(pb, v)
        u = t * v
        # envelope theorem: d/dv J(t*(v) v) = t* grad J(t* v)
        return _energy_local(pb, u), t * _residual_local(pb, u), t

    v = normalize(np.maximum(v0, 0.0))
    f, g, t = evaluate(v)
    alpha = 1.0
    recent = [f]
    for it in range(max_iter):
        active = (v > 0) | (g < 0)
        gnorm = float(np.max(np.abs(g[active]), initial=0.0))
        if gnorm <= tol * _residual_scale(pb, t * v) * t:
            return t * v, it
        d = -g / metric
        ref = max(recent)
        dec = float(g @ (g / metric)) * h
        while True:
            trial = np.maximum(v + alpha * d, 0.0)
            if trial.any():
                trial = normalize(trial)
                f_new, g_new, t_new = evaluate(trial)
                if f_new <= ref - 1e-4 * alpha * dec or alpha < 1e-14:
                    break
            alpha *= 0.5
        s = trial - v
        y = g_new - g
        sy = float(s @ y)
        alpha = float(s @ (metric * s)) / sy if sy > 0 else 10.0 * alpha
        alpha = min(max(alpha, 1e-10), 1e6)
        v, f, g, t = trial, f_new, g_new, t_new
        recent = (recent + [f])[-10:]
    return t * v, max_iter


def _newton_root(pb: Problem, u: np.ndarray, tol: float, max_iter: int = 50):
    """Newton's method on grad J = 0 with the residual norm as merit function."""
    res = _residual_local(pb, u)
    merit = float(res @ res)
    for it in range(max_iter):
        if np.max(np.abs(res)) <= tol * _residual_scale(pb, u):
            return u, it
        full, _ = _hessians(pb, u)
        try:
            step = lu_solve(lu_factor(full, check_finite=False), res, check_finite=False)
        except (LinAlgError, ValueError):
            break
        t = 1.0
        while t > 1e-8:
            trial = np.maximum(u - t * step, 0.0)
            r_new = _residual_local(pb, trial)
            m_new = float(r_new @ r_new)
            if m_new < (1.0 - 1e-4 * t) * merit:
                break
            t *= 0.5
        else:
            break
        u, res, merit = trial, r_new, m_new
    return u, max_iter


def solve_superlinear(
    pb: Problem,
    init: np.ndarray,
    tol: float = 1e-9,
    floor_mask: np.ndarray | None = None,
    max_iter: int = 20_000,
    cap: float = 1e8,
) -> SteadyState:
    """Positive critical point of J for p-1 < q < p*-1 and r < q (experimental).

    Minimizes J over the Nehari set starting from ``init`` and polishes with
    Newton steps.  Only criticality is certified (by the residual); the
    mountain-pass level of the result is not checked.
    """
    p, q, r = pb.p, pb.q, pb.r
    if not q > p - 1:
        raise ValueError("solve_superlinear needs q > p - 1")
    if not q < critical_exponent(pb.op) - 1:
        raise ValueError("q must be below the critical Sobolev exponent minus one")
    if not r < q:
        raise ValueError("solve_superlinear needs r < q")
    v0 = np.maximum(pb.op.local(init), 0.0)
    if not np.any(v0 > 0):
        raise ValueError("initial guess must be positive somewhere")
    u, its = _nehari_descent(pb, v0, 1e-6, max_iter)
    if not np.all(np.isfinite(u)) or np.max(u) > cap:
        raise SolverError("flow diverged; try a smaller lambda or another initial guess", pb.op.extend(u))
    u, newton_its = _newton_root(pb, u, tol)
    resid = float(np.max(np.abs(_residual_local(pb, u))))
    if np.max(u) > cap:
        raise SolverError("flow diverged; try a smaller lambda or another initial guess", pb.op.extend(u), resid)
    if resid > tol * _residual_scale(pb, u) or not np.any(u > 0):
        raise SolverError(f"superlinear solve stalled at residual {resid:.3e}", pb.op.extend(u), resid)
    return _state(
        pb, u, its + newton_its, floor_mask, info={"experimental": True, "nehari_iterations": its}
    )


# -- comparison and sweeps -------------------------------------------------------------


def check_comparison(u: np.ndarray, v: np.ndarray, pb: Problem, tol: float = 1e-8) -> dict:
    """Check that a supersolution ``u`` lies above a subsolution ``v``.

    Residuals are tested against every nodal indicator (which spans the
    nonnegative test fields).  ``tol`` is relative to the residual scale.
    """
    ru = _residual_local(pb, pb.op.local(u))
    rv = _residual_local(pb, pb.op.local(v))
    scale = max(_residual_scale(pb, pb.op.local(u)), _residual_scale(pb, pb.op.local(v)))
    is_super = bool(np.all(ru >= -tol * scale))
    is_sub = bool(np.all(rv <= tol * scale))
    diff = pb.op.local(u) - pb.op.local(v)
    bad = np.flatnonzero(diff < -tol * max(1.0, float(np.max(np.abs(pb.op.local(u))))))
    return {
        "supersolution": is_super,
        "subsolution": is_sub,
        "applicable": is_super and is_sub,
        "ordered": bad.size == 0,
        "violations": pb.op.index[bad].tolist(),
        "min_gap": float(np.min(diff, initial=np.inf)),
    }


def lambda_sweep(
    pb: Problem,
    lambdas,
    compact_masks=(),
    admissible: LambdaRange | None = None,
    init: np.ndarray | None = None,
) -> list[dict]:
    """Solve along ``lambdas`` (continuing from the previous solution).

    Returns one row per lambda with the residual, norms, J, the minimum over
    each compact mask and the boundary ratio ``min u / d^s``.  Failures are
    recorded in the ``status`` column and the sweep goes on.
    """
    superlinear = q_class(pb.p, pb.q) == "superlinear"
    if not superlinear and admissible is None:
        admissible = lambda_range(pb.op, pb.q)
    grid = pb.op.grid
    dist = distance_profile(grid, pb.op.mask, pb.op.s)
    rows = []
    prev = init
    for lam in lambdas:
        case = pb.with_lambda(lam)
        row = {"lambda": float(lam)}
        try:
            if superlinear:
                start = prev if prev is not None else dist
                st = solve_superlinear(case, start)
            else:
                st = solve_subhomogeneous(case, init=prev, admissible=admissible)
        except (SolverError, ValueError) as exc:
            row.update(status=f"failed: {exc}")
            rows.append(row)
            continue
        u = st.field
        inside = pb.op.mask & (dist > 0)
        row.update(
            status=st.tag,
            residual=st.residual,
            linf=float(np.max(u)),
            l2=grid.lp_norm(u, 2.0, pb.op.mask),
            J=st.energy_J,
            boundary_ratio=float(np.min(u[inside] / dist[inside])) if st.positive else 0.0,
        )
        for k, mask in enumerate(compact_masks, start=1):
            row[f"min_K{k}"] = float(np.min(u[np.asarray(mask, dtype=bool)]))
        rows.append(row)
        if st.positive:
            prev = u
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    keys: list[str] = []
    for row in rows:
        keys.extend(k for k in row if k not in keys)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})
