from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import root

from fraclogi.elliptic import (
    NO_POSITIVE_SOLUTION,
    Problem,
    SolverError,
    check_comparison,
    energy_J,
    grad_J,
    lambda_range,
    lambda_sweep,
    residual_norm,
    solve_subhomogeneous,
    solve_superlinear,
)
from fraclogi.grid import build_absorption, distance_profile

from conftest import small_op
from oracles import dense_operator_1d


@pytest.fixture(scope="module")
def homogeneous_range(ref_op):
    return lambda_range(ref_op, 1.0)


def _root_oracle(grid, lam, q, r, b0, guess):
    # plain nonlinear root finding on an independently assembled matrix
    m = dense_operator_1d(grid, 0.5)
    b = build_absorption(grid, b0)[grid.interior]

    def f(v):
        w = np.abs(v)
        return m @ v - lam * w**q + b * w**r

    sol = root(f, guess[grid.interior], method="hybr", options={"xtol": 1e-13})
    assert sol.success
    return grid.extend(sol.x)


@pytest.mark.parametrize("q,lam", [(0.5, 1.0), (0.2, 1.0)])
def test_subhomogeneous_matches_root_finder(ref_grid, ref_op, ref_b, q, lam):
    st = solve_subhomogeneous(Problem(ref_op, ref_b, lam, q, 2.0))
    oracle = _root_oracle(ref_grid, lam, q, 2.0, 1.0, st.field)
    assert ref_grid.lp_norm(st.field - oracle, 2.0) <= 1e-8 * ref_grid.lp_norm(oracle, 2.0)
    assert st.residual < 1e-9


def test_homogeneous_matches_root_finder(ref_grid, ref_op, ref_b, homogeneous_range):
    lam = 0.5 * (homogeneous_range.lower + homogeneous_range.upper)
    st = solve_subhomogeneous(Problem(ref_op, ref_b, lam, 1.0, 2.0), admissible=homogeneous_range)
    oracle = _root_oracle(ref_grid, lam, 1.0, 2.0, 1.0, st.field)
    assert ref_grid.lp_norm(st.field - oracle, 2.0) <= 1e-8 * ref_grid.lp_norm(oracle, 2.0)


def test_reference_magnitudes(ref_op, ref_b):
    # frozen after the root-finder cross-checks above
    assert np.max(solve_subhomogeneous(Problem(ref_op, ref_b, 1.0, 0.5, 2.0)).field) == pytest.approx(0.0222, rel=5e-3)
    assert np.max(solve_subhomogeneous(Problem(ref_op, ref_b, 1.0, 0.2, 2.0)).field) == pytest.approx(0.0972, rel=5e-3)


def test_positive_with_boundary_growth(ref_grid, ref_op, ref_b):
    st = solve_subhomogeneous(Problem(ref_op, ref_b, 1.0, 0.5, 2.0))
    assert st.positive
    assert st.positivity_floor > 0
    d = distance_profile(ref_grid, ref_grid.interior, 0.5)
    inside = ref_grid.interior
    assert np.min(st.field[inside] / d[inside]) > 0


def test_uniqueness_from_two_starts(ref_grid, ref_op, ref_b):
    pb = Problem(ref_op, ref_b, 2.0, 0.5, 2.0)
    a = solve_subhomogeneous(pb)
    b = solve_subhomogeneous(pb, init=5.0 * distance_profile(ref_grid, ref_grid.refuge, 1.0))
    assert ref_grid.lp_norm(a.field - b.field, 2.0) <= 1e-6 * ref_grid.lp_norm(a.field, 2.0)


def test_ordering_in_lambda(ref_op, ref_b, homogeneous_range):
    rng = homogeneous_range
    lams = [rng.lower + f * (rng.upper - rng.lower) for f in (0.2, 0.5, 0.8)]
    fields = [solve_subhomogeneous(Problem(ref_op, ref_b, lam, 1.0, 2.0), admissible=rng).field for lam in lams]
    for lo, hi in zip(fields, fields[1:]):
        assert np.all(lo <= hi + 1e-8)


@pytest.mark.parametrize("frac", [-0.1, 0.0, 1.0, 1.5])
def test_no_positive_solution_outside_range(ref_op, ref_b, homogeneous_range, frac):
    rng = homogeneous_range
    lam = rng.lower + frac * (rng.upper - rng.lower)
    st = solve_subhomogeneous(Problem(ref_op, ref_b, lam, 1.0, 2.0), admissible=rng)
    assert st.tag == NO_POSITIVE_SOLUTION
    assert not st.positive
    assert np.all(st.field == 0)


def test_lambda_range_values(homogeneous_range):
    assert homogeneous_range.lower == pytest.approx(7.26070152, rel=1e-7)
    assert homogeneous_range.upper == pytest.approx(18.10884323, rel=1e-7)
    assert homogeneous_range.guard == pytest.approx(1e-3 * (18.10884323 - 7.26070152), rel=1e-6)


def test_lambda_range_other_classes(ref_op):
    assert lambda_range(ref_op, 0.5).q_class == "subhomogeneous"
    sup = lambda_range(ref_op, 3.0)
    assert sup.q_class == "superlinear" and sup.lower == 0 and sup.upper == np.inf


@pytest.mark.parametrize("p,q,r", [(2.0, 0.5, 2.0), (2.0, 3.0, 2.0), (3.0, 1.5, 2.5), (1.5, 0.3, 1.0)])
def test_grad_J_finite_differences(small_grid, p, q, r, rng):
    op = small_op(small_grid, p=p)
    pb = Problem(op, build_absorption(small_grid, 1.5), 1.3, q, r)
    u = small_grid.extend(rng.uniform(0.2, 1.0, op.n))
    g = grad_J(pb, u)
    fd = np.empty(op.n)
    for k, node in enumerate(op.index):
        e = np.zeros_like(u)
        e[node] = 1e-6
        fd[k] = (energy_J(pb, u + e) - energy_J(pb, u - e)) / 2e-6
    assert np.max(np.abs(g[op.index] - fd)) <= 1e-6 * np.max(np.abs(fd))


def test_comparison_with_scaled_solution(ref_op, ref_b):
    pb = Problem(ref_op, ref_b, 1.0, 0.5, 2.0)
    u = solve_subhomogeneous(pb).field
    # for q < p - 1, small multiples are subsolutions and large multiples supersolutions
    res = check_comparison(3.0 * u, 0.2 * u, pb)
    assert res["applicable"] and res["ordered"]
    flipped = check_comparison(0.2 * u, 3.0 * u, pb)
    assert not flipped["applicable"]
    assert not flipped["ordered"] and flipped["violations"]


def test_superlinear_branch(ref_grid, ref_op, ref_b):
    seed = distance_profile(ref_grid, ref_grid.refuge, 0.5)
    st = solve_superlinear(Problem(ref_op, ref_b, 1.0, 3.0, 2.0), seed)
    assert st.residual < 1e-8
    assert st.info["experimental"] is True
    assert np.max(st.field) == pytest.approx(3.57, rel=5e-3)
    assert residual_norm(Problem(ref_op, ref_b, 1.0, 3.0, 2.0), st.field) == pytest.approx(st.residual)
    assert st.positivity_floor > 0


def test_superlinear_preconditions(ref_op, ref_b):
    seed = ref_op.extend(np.ones(ref_op.n))
    with pytest.raises(ValueError):
        solve_superlinear(Problem(ref_op, ref_b, 1.0, 0.5, 2.0), seed)
    with pytest.raises(ValueError):
        solve_superlinear(Problem(ref_op, ref_b, 1.0, 3.0, 3.5), seed)
    with pytest.raises(ValueError):
        solve_superlinear(Problem(ref_op, ref_b, 1.0, 3.0, 2.0), 0 * seed)


def test_subhomogeneous_rejects_superlinear(ref_op, ref_b):
    with pytest.raises(ValueError):
        solve_subhomogeneous(Problem(ref_op, ref_b, 1.0, 3.0, 2.0))


@pytest.mark.parametrize(
    "kwargs",
    [dict(lam=-1.0), dict(q=0.0), dict(r=0.5), dict(b=-1.0)],
)
def test_problem_validation(ref_op, ref_b, kwargs):
    args = dict(op=ref_op, b=ref_b, lam=1.0, q=0.5, r=2.0)
    if "b" in kwargs:
        kwargs = dict(b=ref_b * kwargs["b"])
    args.update(kwargs)
    with pytest.raises(ValueError):
        Problem(**args)


def test_zero_absorption_rules(ref_grid, ref_op):
    zero = ref_grid.zeros()
    with pytest.raises(ValueError):
        Problem(ref_op, zero, 10.0, 1.0, 2.0)
    Problem(ref_op, zero, 1.0, 3.0, 2.0)


def test_sweep_rows_and_failures(ref_op, ref_b, homogeneous_range):
    rng = homogeneous_range
    lams = [rng.lower + f * (rng.upper - rng.lower) for f in (0.3, 0.6, 1.2)]
    x = ref_op.grid.coords[:, 0]
    k1 = ref_op.grid.interior & (np.abs(x) <= 0.3)
    rows = lambda_sweep(Problem(ref_op, ref_b, lams[0], 1.0, 2.0), lams, [k1], admissible=rng)
    assert [r["status"] for r in rows] == ["positive", "positive", NO_POSITIVE_SOLUTION]
    assert rows[0]["min_K1"] < rows[1]["min_K1"]
    for key in ("lambda", "residual", "linf", "l2", "J", "boundary_ratio"):
        assert key in rows[0]


def test_solver_error_carries_iterate():
    err = SolverError("stalled", np.ones(3), 1.0)
    assert err.residual == 1.0 and err.iterate.shape == (3,)
