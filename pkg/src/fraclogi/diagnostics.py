"""Potential-well quantities for the superlinear problem and trajectory classification.

On a sub-domain O (usually the refuge, where b = 0) the well functionals are

    E_O(v) = ||v||_O^p / p - lam/(q+1) int_O |v|^(q+1)
    I_O(v) = ||v||_O^p     - lam       int_O |v|^(q+1)

with ``||.||_O`` the Gagliardo energy of v extended by zero outside O.  The
mountain-pass level of E_O is m = (1/p - 1/(q+1)) lam^(-p/(q+1-p)) S0^((q+1)/(q+1-p))
where S0 = inf ||v||^p / ||v||_{q+1}^p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from fraclogi.eigen import EigenOptions, first_eigen, minimize_quotient
from fraclogi.grid import distance_profile
from fraclogi.nonlocal_op import NonlocalOperator

IN_H = "in_H"
IN_HU = "in_Hu"
IN_HS = "in_Hs"
NONE_ESTABLISHED = "none_established"


def _sub(op: NonlocalOperator, mask) -> NonlocalOperator:
    mask = op.mask if mask is None else np.asarray(mask, dtype=bool)
    return op if np.array_equal(mask, op.mask) else op.restrict(mask)


def _well_parts(sub: NonlocalOperator, v: np.ndarray, q: float):
    """(||v||^p, int |v|^(q+1)) on the sub-operator's mask."""
    local = sub.local(v)
    return sub.energy_local(local), sub.cell_volume * float(np.sum(np.abs(local) ** (q + 1.0)))


def well_energies(op: NonlocalOperator, mask, lam: float, q: float, v: np.ndarray) -> dict:
    """E_O and I_O of ``v`` restricted to ``mask`` (the complement acts as exterior)."""
    sub = _sub(op, mask)
    return _well_from_sub(sub, lam, q, v)


def _well_from_sub(sub: NonlocalOperator, lam, q, v) -> dict:
    a, bq = _well_parts(sub, v, q)
    p = sub.p
    return {"E": a / p - lam * bq / (q + 1.0), "I": a - lam * bq}


class WellFunctionals:
    """Cached evaluator of (E_O, I_O) for repeated use along a trajectory."""

    def __init__(self, op: NonlocalOperator, mask, lam: float, q: float):
        self.sub = _sub(op, mask)
        self.lam = lam
        self.q = q

    def __call__(self, v: np.ndarray) -> dict:
        return _well_from_sub(self.sub, self.lam, self.q, v)


def theta_star(op: NonlocalOperator, mask, lam: float, q: float, v: np.ndarray) -> float:
    """Scaling with I_O(theta* v) = 0, the maximizer of E_O along the ray through v."""
    sub = _sub(op, mask)
    p = sub.p
    if not q > p - 1:
        raise ValueError("theta_star needs q > p - 1")
    a, bq = _well_parts(sub, v, q)
    if a <= 0 or bq <= 0:
        raise ValueError("theta_star needs a nonzero field on the mask")
    return (a / (lam * bq)) ** (1.0 / (q + 1.0 - p))


def ray_sup(op: NonlocalOperator, mask, lam: float, q: float, v: np.ndarray) -> float:
    """sup over theta > 0 of E_O(theta v), by bounded 1D maximization in log theta."""
    sub = _sub(op, mask)
    p = sub.p
    a, bq = _well_parts(sub, v, q)
    t0 = math.log((a / (lam * bq)) ** (1.0 / (q + 1.0 - p)))

    def neg(lt):
        t = math.exp(lt)
        return -(t**p * a / p - lam * t ** (q + 1.0) * bq / (q + 1.0))

    res = minimize_scalar(neg, bounds=(t0 - 5.0, t0 + 5.0), method="bounded", options={"xatol": 1e-12})
    return -float(res.fun)


def mountain_level(
    op: NonlocalOperator, mask, lam: float, q: float, opts: EigenOptions = EigenOptions()
) -> dict:
    """S0 by quotient minimization and the closed-form level m."""
    sub = _sub(op, mask)
    p = sub.p
    if not q > p - 1:
        raise ValueError("mountain_level needs q > p - 1")
    start = sub.local(distance_profile(sub.grid, sub.mask, sub.s))
    s0, v, its, res, status = minimize_quotient(sub, q + 1.0, start, opts=opts)
    # in logs: the exponents blow up as q + 1 -> p and the level may overflow to inf
    gap = q + 1.0 - p
    log_m = math.log(1.0 / p - 1.0 / (q + 1.0)) - p / gap * math.log(lam) + (q + 1.0) / gap * math.log(s0)
    m = math.exp(log_m) if log_m < 709.0 else math.inf
    return {"m": m, "S0": s0, "minimizer": sub.extend(v), "iterations": its, "residual": res, "status": status}


@dataclass(frozen=True)
class WellReport:
    E: float
    I: float
    theta_star: float
    m: float
    S0: float
    membership: str
    witness: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "E": self.E,
            "I": self.I,
            "theta_star": self.theta_star,
            "m": self.m,
            "S0": self.S0,
            "membership": self.membership,
            "has_witness": self.witness is not None,
        }


def classify_initial(pb, u0: np.ndarray, n_theta: int = 32, level: dict | None = None) -> WellReport:
    """Look for a certificate that ``u0`` lies in H, H_u or H_s.

    Witnesses below u0 are ``min(u0, theta phi_0)`` with phi_0 the refuge
    eigenfield; dominating fields for the stable set are ``theta phi_Omega``.
    The search is sound but incomplete.
    """
    op = pb.op
    grid = op.grid
    refuge = grid.refuge & op.mask
    lam, q = pb.lam, pb.q
    u0 = np.asarray(u0, dtype=float)
    ref_wells = WellFunctionals(op, refuge, lam, q)
    full_wells = WellFunctionals(op, op.mask, lam, q)
    if level is None:
        level = mountain_level(op, refuge, lam, q)
    m, s0 = level["m"], level["S0"]

    u_ref = np.where(refuge, u0, 0.0)
    base = ref_wells(u_ref)
    theta = theta_star(op, refuge, lam, q, u_ref) if np.any(u_ref > 0) else math.inf

    def report(membership, witness=None):
        return WellReport(base["E"], base["I"], theta, m, s0, membership, witness)

    if not np.any(u0 > 0):
        return report(NONE_ESTABLISHED)

    phi0 = first_eigen(op, refuge).eigenfield
    phi0 = phi0 / np.max(phi0)
    top = float(np.max(u0[refuge])) if np.any(refuge) else 0.0
    found_h = None
    if top > 0:
        for th in np.geomspace(top * 1e-3, top, n_theta):
            w = np.minimum(u0, th * phi0)
            vals = ref_wells(w)
            if vals["E"] < m and vals["I"] < 0:
                return report(IN_HU, w)
            if vals["E"] < 0 and found_h is None:
                found_h = w
    if found_h is not None:
        return report(IN_H, found_h)

    phi = first_eigen(op).eigenfield
    phi = phi / np.max(phi)
    inside = op.mask & (phi > 0)
    th_min = float(np.max(u0[inside] / phi[inside]))
    if np.any(u0[~inside] > 0):
        return report(NONE_ESTABLISHED)
    for th in np.geomspace(th_min, th_min * 1e3, n_theta):
        w = th * phi
        vals = full_wells(w)
        if vals["E"] < m and vals["I"] > 0:
            return report(IN_HS, w)
    return report(NONE_ESTABLISHED)


# -- trajectory classification ---------------------------------------------------------------


def _linear_fit(t: np.ndarray, z: np.ndarray):
    slope, intercept = np.polyfit(t, z, 1)
    pred = intercept + slope * t
    ss_res = float(np.sum((z - pred) ** 2))
    ss_tot = float(np.sum((z - np.mean(z)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def fit_blowup(t, y, q: float, tail: float = 0.25) -> dict:
    """Fit Y^(1-gamma), gamma = (q+1)/2, linearly over the last ``tail`` of the series.

    Y' >= c Y^gamma with gamma > 1 makes Y^(1-gamma) reach zero in finite
    time; the zero of the fitted line estimates the blow-up time.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    gamma = (q + 1.0) / 2.0
    start = int(math.floor(len(t) * (1.0 - tail)))
    tt, yy = t[start:], y[start:]
    if len(tt) < 3 or gamma <= 1.0 or np.any(yy <= 0):
        return {"ok": False, "gamma": gamma}
    z = yy ** (1.0 - gamma)
    slope, intercept, r2 = _linear_fit(tt, z)
    ok = slope < 0
    return {
        "ok": bool(ok),
        "gamma": gamma,
        "slope": slope,
        "intercept": intercept,
        "r2": r2,
        "t_max": -intercept / slope if ok else math.inf,
    }


def fit_growth(t, y, tail: float = 0.25) -> dict:
    """Exponential growth fit log Y = a + k t over the last ``tail`` of the series."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    start = int(math.floor(len(t) * (1.0 - tail)))
    tt, yy = t[start:], y[start:]
    if len(tt) < 3 or np.any(yy <= 0):
        return {"ok": False}
    slope, intercept, r2 = _linear_fit(tt, np.log(yy))
    return {"ok": slope > 0, "rate": slope, "r2": r2}


def classify_trajectory(traj, pb, target: np.ndarray | None = None, rel_tol: float = 1e-3) -> dict:
    """Classify a finished trajectory and attach the fitted evidence.

    ``target`` is an optional steady state (e.g. u_lambda from the elliptic
    solver); the terminal relative L^2 distance to it is reported.
    """
    s = traj.series
    t = np.asarray(s["t"])
    y = np.asarray(s["l2_refuge"]) ** 2
    linf = np.asarray(s["linf"])
    q = pb.q
    out: dict = {"evolve_classification": traj.classification}
    if traj.classification in ("blowup_finite", "blowup_suspected", "blowup_infinite"):
        if q > 1:
            fit = fit_blowup(t, y, q)
            out["fit"] = fit
            cls = "blowup_finite" if fit["ok"] else "blowup_suspected"
            out.update(classification=cls, t_max_estimate=fit.get("t_max"))
        else:
            fit = fit_growth(t, y)
            out["fit"] = fit
            out["classification"] = "blowup_infinite" if fit["ok"] else "blowup_suspected"
        return out
    if traj.classification == "extinct":
        out.update(classification="extinct", t_ext=float(t[-1]))
        return out

    grid = pb.op.grid
    final = traj.final
    y0 = y[0] if y[0] > 0 else np.finfo(float).tiny
    tail = slice(int(len(t) * 0.75), None)
    growing = bool(np.all(np.diff(y[tail]) > 0)) and y[-1] > 10.0 * y0
    if target is not None:
        dist = grid.lp_norm(final - target, 2.0) / max(grid.lp_norm(target, 2.0), np.finfo(float).tiny)
        out["distance_to_target"] = dist
        if dist < rel_tol:
            out.update(classification="stabilized", target="u_lambda")
            return out
    if growing:
        fit = fit_growth(t, y)
        out.update(classification="blowup_infinite" if fit["ok"] else "running", fit=fit)
        return out
    if linf[-1] < 1e-2 * max(linf[0], np.finfo(float).tiny) and np.all(np.diff(linf[tail]) <= 0):
        out.update(classification="stabilized", target="0", decay_ratio=float(linf[-1] / linf[0]))
        return out
    increments = np.asarray(s["step_increment_l2"])
    dts = np.diff(np.concatenate(([0.0], t)))
    speed = increments[-1] / dts[-1] if len(dts) else math.inf
    if speed < 1e-8 * max(grid.lp_norm(final, 2.0), 1e-300):
        out.update(classification="stabilized", target="steady state", speed=speed)
        return out
    out.update(classification="running", speed=speed)
    return out
