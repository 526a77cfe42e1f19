"""Experiment runner: builds the discrete problem from a config and executes one mode.

Every run writes ``manifest.json`` (config echo, versions, grid hash, wall
times) into its output directory plus mode-specific CSV/JSON files and,
unless disabled, figures.
"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fraclogi import __version__
from fraclogi.config import ConfigError, ExperimentConfig, config_from_dict, load_config
from fraclogi.diagnostics import NONE_ESTABLISHED, classify_initial, classify_trajectory
from fraclogi.eigen import EigenConvergenceError, first_eigen, weighted_eigen
from fraclogi.elliptic import (
    LambdaRange,
    Problem,
    SolverError,
    SteadyState,
    grad_J,
    energy_J,
    lambda_range,
    lambda_sweep,
    q_class,
    solve_subhomogeneous,
    solve_superlinear,
)
from fraclogi.grid import Grid, GridError, build_absorption, build_grid, distance_profile
from fraclogi.io import read_field, write_columns, write_field, write_json, write_records
from fraclogi.nonlocal_op import NonlocalOperator, OperatorParams, assemble, check_algebraic_inequalities
from fraclogi.parabolic import (
    SERIES_COLUMNS,
    EvolveError,
    SchemeConfig,
    accretivity_test,
    energy_audit,
    evolve,
    linf_bound_check,
)

EXIT_OK = 0
EXIT_PREDICATE = 1
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_INCONCLUSIVE = 4

INCONCLUSIVE = ("running", "blowup_suspected", "horizon_reached", NONE_ESTABLISHED)


class RunError(RuntimeError):
    """A failed run; ``stage`` names the config key or module that failed."""

    def __init__(self, code: int, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.code = code
        self.stage = stage


@dataclass
class RunResult:
    code: int
    out_dir: Path
    report: dict
    outputs: list = field(default_factory=list)


@dataclass
class Context:
    """Discrete objects shared by all modes, with lazily computed eigenvalues."""

    cfg: ExperimentConfig
    grid: Grid
    op: NonlocalOperator
    b: np.ndarray
    timings: dict = field(default_factory=dict)
    _eigen: dict = field(default_factory=dict)

    def eigen(self, which: str):
        if which not in self._eigen:
            mask = None if which == "omega" else self.grid.refuge & self.op.mask
            self._eigen[which] = first_eigen(self.op, mask)
        return self._eigen[which]

    def resolve_lambda(self, value: float) -> float:
        unit = self.cfg.problem.lambda_unit
        if unit == "absolute":
            return float(value)
        if unit == "lambda1_omega":
            return float(value) * self.eigen("omega").lam
        if unit == "lambda1_refuge":
            return float(value) * self.eigen("refuge").lam
        lo, hi = self.eigen("omega").lam, self.eigen("refuge").lam
        return lo + float(value) * (hi - lo)

    def problem(self, lam: float) -> Problem:
        pr = self.cfg.problem
        pb = Problem(self.op, self.b, lam, pr.q, pr.r)
        return pb.on(self.grid.refuge & self.op.mask) if pr.domain == "refuge" else pb

    def admissible(self) -> LambdaRange:
        """Admissible interval, reusing the cached eigenpairs when q = p-1."""
        q = self.cfg.problem.q
        if q_class(self.op.p, q) != "homogeneous":
            return lambda_range(self.op, q)
        full, ref = self.eigen("omega"), self.eigen("refuge")
        return LambdaRange(
            "homogeneous",
            full.lam,
            ref.lam,
            1e-3 * (ref.lam - full.lam),
            full.eigenfield / np.max(full.eigenfield),
            ref.eigenfield / np.max(ref.eigenfield),
        )


# -- construction ------------------------------------------------------------------------


def build_context(cfg: ExperimentConfig) -> Context:
    t0 = time.perf_counter()
    g = cfg.grid
    try:
        grid = build_grid(g.dimension, g.omega, g.refuge, g.nodes, [tuple(h) for h in g.holes], g.collar)
    except (GridError, ValueError, TypeError) as exc:
        raise RunError(EXIT_VALIDATION, "grid", str(exc)) from exc
    try:
        params = OperatorParams(cfg.operator.s, cfg.operator.p)
    except ValueError as exc:
        raise RunError(EXIT_VALIDATION, "operator", str(exc)) from exc
    t1 = time.perf_counter()
    op = assemble(grid, params, cfg.operator.cache_dir or None)
    t2 = time.perf_counter()
    b = build_absorption(grid, cfg.problem.b0)
    return Context(cfg, grid, op, b, timings={"grid": t1 - t0, "assemble": t2 - t1})


def box_mask(grid: Grid, box) -> np.ndarray:
    """Interior nodes inside the closed box ``box`` ([lo, hi] per axis, or one pair in 1D)."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    if box.shape[0] != grid.dimension:
        raise ValueError(f"box needs {grid.dimension} interval(s)")
    inside = np.ones(grid.n_nodes, dtype=bool)
    eps = 1e-9 * grid.h
    for k, (lo, hi) in enumerate(box):
        inside &= (grid.coords[:, k] >= lo - eps) & (grid.coords[:, k] <= hi + eps)
    return inside & grid.interior


def initial_field(ctx: Context, pb: Problem | None = None, steady: SteadyState | None = None) -> np.ndarray:
    """Initial datum of kind ``initial.kind``, scaled by ``initial.amplitude``.

    The bump is (1 - |x - c|^2 / rho^2)_+^s around the centre of Omega, so
    it behaves like d^s at its edge; eigenfields are normalized to max 1.
    """
    ini = ctx.cfg.initial
    grid = ctx.grid
    mask = pb.op.mask if pb is not None else ctx.op.mask
    amp = ini.amplitude
    if ini.kind == "bump":
        centre = np.array([0.5 * (lo + hi) for lo, hi in grid.omega])
        r2 = np.sum((grid.coords - centre) ** 2, axis=1) / ini.radius**2
        u = np.maximum(1.0 - r2, 0.0) ** ctx.op.s
    elif ini.kind == "distance":
        u = distance_profile(grid, mask, ctx.op.s)
    elif ini.kind == "refuge_distance":
        u = distance_profile(grid, grid.refuge & mask, ctx.op.s)
    elif ini.kind in ("refuge_eigen", "omega_eigen"):
        phi = ctx.eigen("refuge" if ini.kind == "refuge_eigen" else "omega").eigenfield
        u = phi / np.max(phi)
    elif ini.kind == "steady":
        if steady is None:
            steady = solve_steady(ctx, pb)
        u = steady.field
    elif ini.kind == "zero":
        u = grid.zeros()
    else:
        try:
            u = read_field(ini.path, grid)
        except (OSError, KeyError, ValueError) as exc:
            raise RunError(EXIT_VALIDATION, "initial.path", str(exc)) from exc
        if np.any(u < 0) or not np.all(np.isfinite(u)):
            raise RunError(EXIT_VALIDATION, "initial.path", "field must be finite and nonnegative")
    return np.where(mask, amp * u, 0.0)


def solve_steady(ctx: Context, pb: Problem, init=None) -> SteadyState:
    try:
        if q_class(pb.p, pb.q) == "superlinear":
            start = init if init is not None else distance_profile(ctx.grid, pb.op.mask, pb.op.s)
            return solve_superlinear(pb, start)
        return solve_subhomogeneous(pb, init=init, admissible=ctx.admissible() if pb.op is ctx.op else None)
    except SolverError as exc:
        raise RunError(EXIT_SOLVER, "elliptic", str(exc)) from exc
    except ValueError as exc:
        raise RunError(EXIT_VALIDATION, "problem", str(exc)) from exc


def _single_lambda(ctx: Context) -> float:
    pr = ctx.cfg.problem
    if pr.lambda_ is None:
        raise RunError(EXIT_VALIDATION, "problem.lambda", f"required for mode '{ctx.cfg.mode}'")
    lam = ctx.resolve_lambda(pr.lambda_)
    if not lam > 0:
        raise RunError(EXIT_VALIDATION, "problem.lambda", f"resolves to nonpositive value {lam}")
    return lam


def _problem(ctx: Context, lam: float) -> Problem:
    try:
        return ctx.problem(lam)
    except ValueError as exc:
        raise RunError(EXIT_VALIDATION, "problem", str(exc)) from exc


# -- modes -------------------------------------------------------------------------------


def run_eigen(ctx: Context, out: Path, report: dict, outputs: list) -> int:
    grid = ctx.grid
    full, ref = ctx.eigen("omega"), ctx.eigen("refuge")
    report["omega"] = full.to_dict()
    report["refuge"] = ref.to_dict()
    report["lambda"] = full.lam
    outputs.append(write_field(out / "fields" / "eigen_omega.csv", grid, full.eigenfield))
    outputs.append(write_field(out / "fields" / "eigen_refuge.csv", grid, ref.eigenfield))
    ladder = []
    for mu in ctx.cfg.eigen.mu:
        res = weighted_eigen(ctx.op, ctx.b, float(mu))
        psi = res.eigenfield
        row = res.to_dict()
        row["b_mass"] = grid.integrate(ctx.b * np.abs(psi) ** ctx.op.p)
        row["gap_to_refuge"] = (ref.lam - res.lam) / ref.lam
        ladder.append(row)
        outputs.append(write_field(out / "fields" / f"weighted_mu_{mu:g}.csv", grid, psi))
    if ladder:
        report["weighted"] = ladder
        outputs.append(write_records(out / "weighted.csv", ladder))
    if ctx.cfg.output.figures:
        from fraclogi.plotting import plot_eigen_ladder, plot_fields

        outputs.append(
            plot_fields(
                out / "figures" / "eigenfields.png",
                grid,
                {"Omega": full.eigenfield / np.max(full.eigenfield), "refuge": ref.eigenfield / np.max(ref.eigenfield)},
            )
        )
        if ladder:
            outputs.append(
                plot_eigen_ladder(out / "figures" / "weighted.png", [r["mu"] for r in ladder], [r["lambda"] for r in ladder], ref.lam)
            )
    return EXIT_OK


def run_steady(ctx: Context, out: Path, report: dict, outputs: list) -> int:
    lam = _single_lambda(ctx)
    pb = _problem(ctx, lam)
    st = solve_steady(ctx, pb)
    report["steady"] = {
        "lambda": lam,
        "tag": st.tag,
        "residual": st.residual,
        "J": st.energy_J,
        "positivity_floor": st.positivity_floor,
        "iterations": st.iterations,
        "linf": float(np.max(st.field)),
        "l2": ctx.grid.lp_norm(st.field, 2.0, pb.op.mask),
        "info": st.info,
    }
    outputs.append(write_field(out / "fields" / "steady.csv", ctx.grid, st.field))
    if ctx.cfg.output.figures:
        from fraclogi.plotting import plot_fields

        outputs.append(plot_fields(out / "figures" / "steady.png", ctx.grid, {f"lambda={lam:.4g}": st.field}))
    return EXIT_OK


def run_sweep(ctx: Context, out: Path, report: dict, outputs: list) -> int:
    pr = ctx.cfg.problem
    if not pr.lambdas:
        raise RunError(EXIT_VALIDATION, "problem.lambdas", "required for mode 'sweep'")
    lambdas = [ctx.resolve_lambda(v) for v in pr.lambdas]
    if any(not lam > 0 for lam in lambdas):
        raise RunError(EXIT_VALIDATION, "problem.lambdas", "every lambda must resolve to a positive value")
    try:
        masks = [box_mask(ctx.grid, box) for box in ctx.cfg.sweep.compact_masks]
    except ValueError as exc:
        raise RunError(EXIT_VALIDATION, "sweep.compact_masks", str(exc)) from exc
    if any(not m.any() for m in masks):
        raise RunError(EXIT_VALIDATION, "sweep.compact_masks", "a compact mask contains no interior node")
    pb = _problem(ctx, lambdas[0])
    admissible = None
    if q_class(pb.p, pb.q) != "superlinear" and pr.domain == "omega":
        admissible = ctx.admissible()
    rows = lambda_sweep(pb, lambdas, masks, admissible=admissible)
    report["sweep"] = rows
    outputs.append(write_records(out / "sweep.csv", rows))
    failed = [r for r in rows if str(r["status"]).startswith("failed")]
    report["failures"] = len(failed)
    if ctx.cfg.output.figures:
        from fraclogi.plotting import plot_sweep

        outputs.append(plot_sweep(out / "figures" / "sweep.png", rows))
    return EXIT_SOLVER if failed else EXIT_OK


def scheme_config(ctx: Context) -> SchemeConfig:
    sc = ctx.cfg.scheme
    try:
        return SchemeConfig(
            T=sc.T,
            dt=sc.dt,
            R=sc.R,
            blowup_cap=sc.blowup_cap,
            tol=sc.tol,
            snapshot_stride=sc.snapshot_stride,
            adaptive=sc.adaptive,
        )
    except ValueError as exc:
        raise RunError(EXIT_VALIDATION, "scheme", str(exc)) from exc


def write_trajectory(ctx: Context, traj, out: Path, outputs: list) -> None:
    outputs.append(write_columns(out / "series.csv", {k: traj.series[k] for k in SERIES_COLUMNS}))
    times = traj.times
    for step, snap in zip(traj.snapshot_steps, traj.snapshots):
        outputs.append(write_field(out / "fields" / f"snapshot_{step:07d}.csv", ctx.grid, snap))
    if ctx.cfg.output.figures:
        from fraclogi.plotting import plot_series, plot_snapshots

        outputs.append(plot_series(out / "figures" / "series.png", traj.series))
        outputs.append(
            plot_snapshots(
                out / "figures" / "snapshots.png", ctx.grid, [times[k] for k in traj.snapshot_steps], traj.snapshots
            )
        )


def run_evolve(ctx: Context, out: Path, report: dict, outputs: list) -> int:
    lam = _single_lambda(ctx)
    pb = _problem(ctx, lam)
    scfg = scheme_config(ctx)
    target = None
    steady = None
    if q_class(pb.p, pb.q) != "superlinear":
        steady = solve_steady(ctx, pb)
        if steady.positive:
            target = steady.field
            outputs.append(write_field(out / "fields" / "steady.csv", ctx.grid, steady.field))
    u0 = initial_field(ctx, pb, steady)
    try:
        traj = evolve(pb, u0, scfg)
    except EvolveError as exc:
        write_trajectory(ctx, exc.trajectory, out, outputs)
        report["evolve"] = exc.trajectory.summary()
        raise RunError(EXIT_SOLVER, "parabolic", str(exc)) from exc
    except ValueError as exc:
        raise RunError(EXIT_VALIDATION, "initial", str(exc)) from exc
    write_trajectory(ctx, traj, out, outputs)
    verdict = classify_trajectory(traj, pb, target=target)
    report["evolve"] = traj.summary()
    report["classification"] = verdict
    report["linf_bound"] = linf_bound_check(traj, pb)
    report["energy_audit"] = energy_audit(traj, pb)
    report["wall_time_evolve"] = traj.wall_time
    return EXIT_INCONCLUSIVE if verdict["classification"] in INCONCLUSIVE else EXIT_OK


def run_classify(ctx: Context, out: Path, report: dict, outputs: list) -> int:
    lam = _single_lambda(ctx)
    pb = _problem(ctx, lam)
    if not pb.q > pb.p - 1:
        raise RunError(EXIT_VALIDATION, "problem.q", "well classification needs q > p - 1")
    u0 = initial_field(ctx, pb)
    try:
        rep = classify_initial(pb, u0)
    except EigenConvergenceError as exc:
        raise RunError(EXIT_SOLVER, "diagnostics", str(exc)) from exc
    body = rep.to_dict()
    if rep.witness is not None:
        path = write_field(out / "fields" / "witness.csv", ctx.grid, rep.witness)
        outputs.append(path)
        body["witness_field"] = str(path.relative_to(out))
    outputs.append(write_field(out / "fields" / "initial.csv", ctx.grid, u0))
    report["well"] = body
    return EXIT_INCONCLUSIVE if rep.membership == NONE_ESTABLISHED else EXIT_OK


def run_verify(ctx: Context, out: Path, report: dict, outputs: list) -> int:
    """Invariant suite on the configured operator; randomness from the config seed."""
    cfg = ctx.cfg
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    op = ctx.op
    n_pairs = cfg.verify.random_pairs
    checks = {}

    # homogeneity of the operator
    worst = 0.0
    for _ in range(n_pairs):
        v = rng.standard_normal(op.n)
        c = float(rng.uniform(0.1, 10.0))
        lhs = op.apply_local(c * v)
        rhs = c ** (op.p - 1.0) * op.apply_local(v)
        worst = max(worst, float(np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(rhs)), 1e-300)))
    checks["homogeneity"] = {"cases": n_pairs, "passed": n_pairs if worst < 1e-12 else 0, "max_rel_error": worst}

    # gradient of J against central differences on a coarse copy of the grid
    g = cfg.grid
    small = build_grid(g.dimension, g.omega, g.refuge, 21 if g.dimension == 1 else 11)
    sop = assemble(small, op.params)
    spb = Problem(sop, build_absorption(small, cfg.problem.b0), 1.0, cfg.problem.q, cfg.problem.r)
    passed, worst = 0, 0.0
    cases = min(n_pairs, 10)
    for _ in range(cases):
        u = small.extend(rng.uniform(0.2, 1.0, sop.n))
        grad = grad_J(spb, u)
        fd = np.empty(sop.n)
        for k, node in enumerate(sop.index):
            eps = 1e-6 * max(1.0, abs(u[node]))
            up, dn = u.copy(), u.copy()
            up[node] += eps
            dn[node] -= eps
            fd[k] = (energy_J(spb, up) - energy_J(spb, dn)) / (2 * eps)
        err = float(np.max(np.abs(grad[sop.index] - fd)) / max(np.max(np.abs(fd)), 1e-300))
        worst = max(worst, err)
        passed += err < 1e-6
    checks["gradient"] = {"cases": cases, "passed": int(passed), "max_rel_error": worst}

    # algebraic inequalities behind the monotonicity of Phi_p
    ineq = check_algebraic_inequalities(op.p, cfg.verify.samples, cfg.seed)
    checks["inequalities"] = {
        "cases": cfg.verify.samples,
        "passed": cfg.verify.samples - int(ineq["violations"]),
        **{k: v for k, v in ineq.items() if k != "violations"},
        "violations": int(ineq["violations"]),
    }

    # sup-norm contraction of the resolvent
    pb = Problem(op, ctx.b, 1.0, cfg.problem.q, cfg.problem.r)
    passed, ordered = 0, 0
    for k in range(n_pairs):
        f = ctx.grid.extend(rng.uniform(-1.0, 2.0, op.n))
        if k % 2:
            gf = f + ctx.grid.extend(rng.uniform(0.0, 1.0, op.n))
        else:
            gf = ctx.grid.extend(rng.uniform(-1.0, 2.0, op.n))
        res = accretivity_test(pb, f, gf, float(rng.uniform(0.01, 1.0)))
        passed += bool(res["contraction"])
        if res["ordered_data"]:
            ordered += bool(res["ordered_solution"])
    checks["accretivity"] = {"cases": n_pairs, "passed": int(passed), "ordered_cases_preserved": int(ordered)}

    report["verify"] = checks
    outputs.append(write_json(out / "verify.json", checks))
    ok = all(c["passed"] == c["cases"] for c in checks.values())
    return EXIT_OK if ok else EXIT_PREDICATE


MODE_RUNNERS = {
    "eigen": run_eigen,
    "steady": run_steady,
    "sweep": run_sweep,
    "evolve": run_evolve,
    "classify": run_classify,
    "verify": run_verify,
}


# -- entry point -------------------------------------------------------------------------


def versions() -> dict:
    import matplotlib
    import scipy

    return {
        "fraclogi": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


def load_any(path) -> ExperimentConfig:
    """TOML config, or a previous run's manifest.json (its echoed config is re-run)."""
    path = Path(path)
    if path.suffix == ".json":
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", f"cannot read manifest {path}: {exc}") from exc
        raw = raw.get("config", raw)
        raw["problem"] = {k: v for k, v in raw.get("problem", {}).items() if not (k == "lambda" and v is None)}
        for key in ("scheme",):
            raw[key] = {k: v for k, v in raw.get(key, {}).items() if v is not None}
        return config_from_dict(raw)
    return load_config(path)


def run(cfg: ExperimentConfig, out_dir=None, threads: int | None = None) -> RunResult:
    """Execute ``cfg.mode``; never raises for run failures (see ``RunResult.code``)."""
    start = time.perf_counter()
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    report: dict = {"mode": cfg.mode}
    outputs: list = []
    code = EXIT_OK
    ctx = None
    try:
        if cfg.mode not in MODE_RUNNERS:
            raise RunError(EXIT_VALIDATION, "mode", f"expected one of {tuple(MODE_RUNNERS)}")
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise RunError(EXIT_VALIDATION, "output.dir", str(exc)) from exc
        ctx = build_context(cfg)
        t0 = time.perf_counter()
        code = MODE_RUNNERS[cfg.mode](ctx, out, report, outputs)
        ctx.timings["mode"] = time.perf_counter() - t0
    except RunError as exc:
        code = exc.code
        report["error"] = {"stage": exc.stage, "message": str(exc)}
    except (SolverError, EigenConvergenceError) as exc:
        code = EXIT_SOLVER
        report["error"] = {"stage": type(exc).__module__.rsplit(".", 1)[-1], "message": str(exc)}
    report["exit_code"] = code
    manifest = {
        "config": cfg.to_dict(),
        "versions": versions(),
        "seed": cfg.seed,
        "threads": threads,
        "grid": ctx.grid.metadata() if ctx is not None else None,
        "operator": {"s": cfg.operator.s, "p": cfg.operator.p, "n": ctx.op.n} if ctx is not None else None,
        "wall_times": {**(ctx.timings if ctx is not None else {}), "total": time.perf_counter() - start},
        "exit_code": code,
    }
    try:
        outputs.append(write_json(out / "report.json", report))
        write_json(out / "manifest.json", manifest)
    except OSError:
        pass
    return RunResult(code, out, report, outputs)

