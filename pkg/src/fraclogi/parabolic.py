"""Semi-implicit time stepping for  u_t + L u + b u^r = lam min(R, u)^q.

Each step solves the strictly convex problem

    min_v  1/2 int (v - g)^2 + dt [ ||v||^p / p + int b |v|^(r+1) / (r+1) ]
    g = u_prev + dt lam min(R, u_prev)^q

by damped Newton, so the step is a resolvent of the accretive operator
``A u = L u + b |u|^(r-1) u`` applied to an explicit source update.  The
truncation level R is doubled whenever the solution passes R/2, and the
step size follows the guaranteed horizon of the current window.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from fraclogi.diagnostics import WellFunctionals
from fraclogi.elliptic import Problem, _energy_local
from fraclogi.newton import newton_minimize
from fraclogi.nonlocal_op import NonlocalOperator, phi

SERIES_COLUMNS = (
    "t",
    "dt",
    "R",
    "linf",
    "l2_omega",
    "l2_refuge",
    "E",
    "E_refuge",
    "I_refuge",
    "step_increment_l2",
    "dE_defect",
    "truncated",
)


class StepError(RuntimeError):
    """An implicit step failed (inner solver or sign check)."""


class NegativityError(StepError):
    """The step produced values below -tol: the comparison principle was violated."""


class EvolveError(RuntimeError):
    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class HorizonPolicy:
    T_star: float
    R: float | None

    def to_dict(self) -> dict:
        return {"T_star": self.T_star, "R": self.R}


def horizon_policy(pb: Problem, u0: np.ndarray, T: float | None = None) -> HorizonPolicy:
    """Guaranteed horizon T* and truncation level R from ||u0|| + lam T R^q < R.

    q < 1: T* is infinite and R solves R - lam T R^q = ||u0|| for the
    requested horizon T.  q = 1: T* = 1/lam and R = ||u0|| / (1 - lam T) for
    T < T*.  q > 1: R = q ||u0|| / (q - 1) maximizes (R - ||u0||) / (lam R^q),
    whose maximum is T*.
    """
    a = float(np.max(np.abs(u0)))
    lam, q = pb.lam, pb.q
    if q < 1.0:
        if T is None or a == 0.0:
            return HorizonPolicy(math.inf, None)

        def f(R):
            return R - lam * T * R**q - a

        hi = max(a, 1.0)
        while f(hi) <= 0:
            hi *= 2.0
        return HorizonPolicy(math.inf, brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-15))
    if q == 1.0:
        t_star = 1.0 / lam
        if T is None or T >= t_star or a == 0.0:
            return HorizonPolicy(t_star, None)
        return HorizonPolicy(t_star, a / (1.0 - lam * T))
    if a == 0.0:
        return HorizonPolicy(math.inf, None)
    R = q * a / (q - 1.0)
    return HorizonPolicy((R - a) / (lam * R**q), R)


def window_horizon(lam: float, q: float, a: float, R: float) -> float:
    """Time for which ||u|| stays below R starting from ||u|| = a (bound telescoping)."""
    return (R - a) / (lam * R**q)


# -- single step -----------------------------------------------------------------------


def resolvent(
    op: NonlocalOperator,
    b_local: np.ndarray,
    r: float,
    f: np.ndarray,
    delta: float,
    tol: float = 1e-12,
    warm: np.ndarray | None = None,
) -> np.ndarray:
    """Solve ``u + delta (L u + b Phi_{r+1}(u)) = f`` on the operator's nodes.

    Works on local vectors; ``f`` may have any sign.  Raises StepError if
    the optimality residual exceeds ``tol * max(1, ||f||_inf)``.
    """
    h = op.cell_volume
    f = np.asarray(f, dtype=float)
    n = op.n
    lin = op.linear_matrix() if op.p == 2.0 else None

    def fun(v):
        return (
            0.5 * h * float((v - f) @ (v - f))
            + delta * (op.energy_local(v) / op.p + h * float(b_local @ np.abs(v) ** (r + 1.0)) / (r + 1.0))
        )

    def grad(v):
        return (v - f) + delta * (op.apply_local(v) + b_local * phi(v, r + 1.0))

    def grad_hess(v):
        jac = np.array(lin) if lin is not None else op.jacobian_local(v)
        jac *= delta
        diag = 1.0 + delta * r * b_local * np.abs(v) ** (r - 1.0)
        jac[np.diag_indices(n)] += diag
        return h * grad(v), h * jac

    scale = max(1.0, float(np.max(np.abs(f), initial=0.0)))
    target = 0.01 * tol * scale * h

    start = f.copy() if warm is None else np.array(warm, dtype=float)
    res = newton_minimize(
        fun,
        grad_hess,
        start,
        rtol=0.0,
        max_iter=100,
        stop=lambda v, g: float(np.max(np.abs(g), initial=0.0)) <= target,
        grad=lambda v: h * grad(v),
    )
    v = res.x
    err = float(np.max(np.abs(grad(v)), initial=0.0))
    if err > tol * scale and op.p >= 2.0:
        raise StepError(f"inner solve residual {err:.3e} above {tol * scale:.3e}")
    return v


def step_local(pb: Problem, v_prev: np.ndarray, dt: float, R: float, tol: float = 1e-12) -> np.ndarray:
    g = v_prev + dt * pb.lam * np.minimum(R, v_prev) ** pb.q
    v = resolvent(pb.op, pb.b_local, pb.r, g, dt, tol=tol, warm=v_prev)
    floor = tol * max(1.0, float(np.max(g)))
    if np.any(v < -floor):
        raise NegativityError(f"step produced {float(np.min(v)):.3e} below -{floor:.1e}")
    return np.maximum(v, 0.0)


def implicit_step(pb: Problem, u_prev: np.ndarray, dt: float, R: float, tol: float = 1e-12) -> np.ndarray:
    """One truncated semi-implicit step from a nonnegative field ``u_prev``."""
    v_prev = pb.op.local(u_prev)
    if np.any(v_prev < 0):
        raise ValueError("u_prev must be nonnegative")
    return pb.op.extend(step_local(pb, v_prev, dt, R, tol))


# -- trajectories ----------------------------------------------------------------------


@dataclass(frozen=True)
class SchemeConfig:
    T: float
    dt: float | None = None
    R: float | None = None
    blowup_cap: float = 1e6
    tol: float = 1e-12
    extinction_tol: float = 1e-12
    snapshot_stride: int = 10
    dt_max: float = 0.01
    adaptive: bool = True
    max_halvings: int = 6
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.dt is not None and not 0 < self.dt <= self.T:
            raise ValueError("dt must lie in (0, T]")
        if self.R is not None and not self.R > 0:
            raise ValueError("R must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be at least 1")


@dataclass
class Trajectory:
    series: dict = field(default_factory=lambda: {k: [] for k in SERIES_COLUMNS})
    snapshot_steps: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    classification: str = "running"
    t_max_estimate: float | None = None
    R_events: list = field(default_factory=list)
    dt_history: list = field(default_factory=list)
    policy: dict = field(default_factory=dict)
    evidence: dict = field(default_factory=dict)
    final: np.ndarray | None = None
    wall_time: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.series["t"])

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.series[name])

    def summary(self) -> dict:
        return {
            "classification": self.classification,
            "t_max_estimate": self.t_max_estimate,
            "R_events": self.R_events,
            "dt_history": self.dt_history,
            "policy": self.policy,
            "evidence": self.evidence,
            "steps": len(self.series["t"]) - 1,
            "final_time": self.series["t"][-1] if self.series["t"] else 0.0,
        }


class _Recorder:
    def __init__(self, pb: Problem):
        self.pb = pb
        grid = pb.op.grid
        self.h = pb.op.cell_volume
        refuge = grid.refuge & pb.op.mask
        self.refuge_local = refuge[pb.op.mask]
        self.wells = WellFunctionals(pb.op, refuge, pb.lam, pb.q)

    def record(self, traj: Trajectory, t, dt, R, v, v_prev, e_prev, truncated):
        pb = self.pb
        e = _energy_local(pb, v)
        wells = self.wells(pb.op.extend(v))
        if v_prev is None:
            inc, defect = 0.0, 0.0
        else:
            d = v - v_prev
            inc = math.sqrt(self.h * float(d @ d))
            defect = e - e_prev + self.h * float(d @ d) / dt
        s = traj.series
        s["t"].append(t)
        s["dt"].append(dt)
        s["R"].append(R)
        s["linf"].append(float(np.max(np.abs(v), initial=0.0)))
        s["l2_omega"].append(math.sqrt(self.h * float(v @ v)))
        vr = v[self.refuge_local]
        s["l2_refuge"].append(math.sqrt(self.h * float(vr @ vr)))
        s["E"].append(e)
        s["E_refuge"].append(wells["E"])
        s["I_refuge"].append(wells["I"])
        s["step_increment_l2"].append(inc)
        s["dE_defect"].append(defect)
        s["truncated"].append(int(truncated))
        return e


def evolve(pb: Problem, u0: np.ndarray, cfg: SchemeConfig) -> Trajectory:
    """Run the scheme from ``u0`` up to ``cfg.T``, the blow-up cap, or extinction."""
    start_wall = time.perf_counter()
    op = pb.op
    grid = op.grid
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (grid.n_nodes,) or not np.all(np.isfinite(u0)):
        raise ValueError("u0 must be a finite field on the grid")
    if np.any(u0 < 0):
        raise ValueError("u0 must be nonnegative")
    if np.any(u0[~op.mask] != 0):
        raise ValueError("u0 must vanish outside the problem's domain")
    a0 = float(np.max(u0))
    if not cfg.blowup_cap > a0:
        raise ValueError("blowup_cap must exceed ||u0||_inf")

    policy = horizon_policy(pb, u0, cfg.T)
    traj = Trajectory()
    traj.policy = {**policy.to_dict(), "R_override": cfg.R, "dt_override": cfg.dt}
    if cfg.R is not None:
        R = cfg.R
    elif policy.R is not None and math.isfinite(policy.R):
        R = max(policy.R, 2.0 * a0) if pb.q < 1.0 else policy.R
    else:
        R = max(2.0 * a0, 1.0)

    def choose_dt(a, R):
        if cfg.dt is not None and not cfg.adaptive:
            return cfg.dt
        base = cfg.dt if cfg.dt is not None else cfg.dt_max
        return min(base, window_horizon(pb.lam, pb.q, a, R) / 100.0)

    rec = _Recorder(pb)
    v = op.local(u0)
    t = 0.0
    dt = choose_dt(a0, R)
    traj.dt_history.append({"t": 0.0, "dt": dt, "reason": "initial"})
    e = rec.record(traj, t, dt, R, v, None, None, False)
    traj.snapshot_steps.append(0)
    traj.snapshots.append(op.extend(v))

    n = 0
    halvings = 0
    while t < cfg.T * (1.0 - 1e-12):
        if n >= cfg.max_steps:
            break
        a = float(np.max(v, initial=0.0))
        if a > R / 2.0 and cfg.R is None:
            while a > R / 2.0:
                R *= 2.0
            traj.R_events.append({"t": float(t), "R": float(R), "linf": a})
            new_dt = choose_dt(a, R)
            if new_dt != dt:
                dt = new_dt
                traj.dt_history.append({"t": float(t), "dt": float(dt), "reason": "R doubled"})
        step = min(dt, cfg.T - t)
        try:
            v_new = step_local(pb, v, step, R, cfg.tol)
        except NegativityError as exc:
            traj.final = op.extend(v)
            traj.classification = "failed"
            traj.wall_time = time.perf_counter() - start_wall
            raise EvolveError(str(exc), traj) from exc
        except StepError as exc:
            if halvings >= cfg.max_halvings:
                traj.final = op.extend(v)
                traj.classification = "failed"
                traj.wall_time = time.perf_counter() - start_wall
                raise EvolveError(f"inner solver failed after {halvings} halvings: {exc}", traj) from exc
            halvings += 1
            dt *= 0.5
            traj.dt_history.append({"t": float(t), "dt": float(dt), "reason": "inner solver failure"})
            continue
        truncated = bool(np.any(v > R))
        n += 1
        t = float(t + step)
        e = rec.record(traj, t, step, R, v_new, v, e, truncated)
        v = v_new
        if n % cfg.snapshot_stride == 0:
            traj.snapshot_steps.append(n)
            traj.snapshots.append(op.extend(v))
        linf = traj.series["linf"][-1]
        if not np.all(np.isfinite(v)) or linf > cfg.blowup_cap:
            traj.classification = "blowup_suspected"
            break
        if linf < cfg.extinction_tol:
            traj.classification = "extinct"
            break
    else:
        traj.classification = "horizon_reached"
    if traj.classification == "running":
        traj.classification = "horizon_reached"

    if traj.snapshot_steps[-1] != n:
        traj.snapshot_steps.append(n)
        traj.snapshots.append(op.extend(v))
    traj.final = op.extend(v)
    if traj.classification == "blowup_suspected":
        from fraclogi.diagnostics import fit_blowup, fit_growth

        y = np.asarray(traj.series["l2_refuge"]) ** 2
        if pb.q > 1.0:
            fit = fit_blowup(traj.series["t"], y, pb.q)
            traj.evidence["fit"] = fit
            if fit["ok"]:
                traj.classification = "blowup_finite"
                traj.t_max_estimate = fit["t_max"]
        else:
            fit = fit_growth(traj.series["t"], y)
            traj.evidence["fit"] = fit
            if fit["ok"]:
                traj.classification = "blowup_infinite"
    traj.wall_time = time.perf_counter() - start_wall
    return traj


# -- audits ----------------------------------------------------------------------------


def linf_bound_check(traj: Trajectory, pb: Problem, slack: float = 1e-10) -> dict:
    """Check ||u_n|| <= ||u_0|| + sum_k lam dt_k R_k^q at every step."""
    s = traj.series
    linf = np.asarray(s["linf"])
    dts = np.asarray(s["dt"])
    Rs = np.asarray(s["R"])
    growth = pb.lam * dts[1:] * Rs[1:] ** pb.q
    bound = linf[0] + np.concatenate(([0.0], np.cumsum(growth)))
    excess = linf - bound
    return {
        "ok": bool(np.all(excess <= slack * np.maximum(1.0, bound))),
        "max_excess": float(np.max(excess)),
        "steps": int(len(linf) - 1),
    }


def energy_audit(traj: Trajectory, pb: Problem, start: int = 1) -> dict:
    """Per-step energy defect D_n = E_n - E_{n-1} + dt int ((u_n - u_{n-1})/dt)^2.

    The scheme makes D_n <= 0 whenever the truncation is inactive, so E is
    non-increasing there.  Reports max |D_n|, the summed defect, and the
    monotonicity of E over steps without truncation.
    """
    s = traj.series
    e = np.asarray(s["E"])
    defect = np.asarray(s["dE_defect"])[start:]
    active = np.asarray(s["truncated"])[start:].astype(bool)
    de = np.diff(e)[start - 1 :]
    free = ~active
    scale = max(1.0, float(np.max(np.abs(e))))
    return {
        "max_defect": float(np.max(np.abs(defect), initial=0.0)),
        "sum_defect": float(np.sum(np.abs(defect))),
        "max_positive_defect": float(np.max(defect, initial=0.0)),
        "nonincreasing": bool(np.all(de[free] <= 1e-12 * scale)),
        "max_increase": float(np.max(de[free], initial=-np.inf)),
        "steps": int(len(defect)),
    }


def accretivity_test(
    pb: Problem, f: np.ndarray, g: np.ndarray, delta: float, tol: float = 1e-8
) -> dict:
    """Resolvents u, v of f, g: report the sup-norm contraction and ordering."""
    op = pb.op
    fl, gl = op.local(f), op.local(g)
    u = resolvent(op, pb.b_local, pb.r, fl, delta)
    v = resolvent(op, pb.b_local, pb.r, gl, delta)
    lhs = float(np.max(np.abs(u - v), initial=0.0))
    rhs = float(np.max(np.abs(fl - gl), initial=0.0))
    ordered_data = bool(np.all(fl <= gl))
    return {
        "contraction": lhs <= rhs + tol,
        "lhs": lhs,
        "rhs": rhs,
        "ordered_data": ordered_data,
        "ordered_solution": bool(np.all(u <= v + tol)) if ordered_data else None,
        "u": op.extend(u),
        "v": op.extend(v),
    }
