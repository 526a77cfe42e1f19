from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad, quad

from fraclogi.grid import build_grid
from fraclogi.nonlocal_op import (
    NonlocalOperator,
    OperatorParams,
    assemble,
    check_algebraic_inequalities,
    halfplane_mass,
    inequality_constants,
    inequality_sides,
    phi,
    tail_1d,
    tail_2d,
)

from conftest import small_op
from oracles import dense_operator_1d, tail_inclusion_exclusion, tail_quad_1d


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_p2_apply_equals_dense_oracle(small_grid, s, rng):
    op = small_op(small_grid, s=s)
    m = dense_operator_1d(small_grid, s)
    v = rng.standard_normal(op.n)
    np.testing.assert_allclose(op.apply_local(v), m @ v, rtol=1e-12, atol=1e-12 * np.abs(m).max())
    np.testing.assert_allclose(op.linear_matrix(), m, rtol=1e-10, atol=1e-12 * np.abs(m).max())


@pytest.mark.parametrize("sp", [0.3, 1.0, 1.7])
def test_tail_1d_against_quadrature(sp):
    box = (-1.05, 1.05)
    for x in (-0.9, 0.0, 0.37, 1.0):
        assert tail_1d(np.array([x]), box, sp)[0] == pytest.approx(tail_quad_1d(x, box, sp), rel=1e-10)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_tail_2d_against_inclusion_exclusion(alpha):
    box = ((-1.05, 1.05), (-0.8, 0.9))
    pts = np.array([[0.0, 0.0], [0.7, -0.5], [-0.95, 0.85], [0.3, 0.1]])
    got = tail_2d(pts, box, alpha)
    for k, pt in enumerate(pts):
        assert got[k] == pytest.approx(tail_inclusion_exclusion(pt, box, alpha), rel=1e-8)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_halfplane_mass(alpha):
    assert float(halfplane_mass(0.3, alpha, 1)) == pytest.approx(quad(lambda y: y ** (-1 - alpha), 0.3, np.inf)[0], rel=1e-10)
    # 2D: integrate the y2 line first (scaled to a finite range), then y1
    line = lambda y1: y1 ** (-1 - alpha) * quad(lambda t: (1 + t * t) ** (-(2 + alpha) / 2), -np.inf, np.inf)[0]  # noqa: E731
    val = quad(line, 0.3, np.inf, epsrel=1e-12)[0]
    assert float(halfplane_mass(0.3, alpha, 2)) == pytest.approx(val, rel=1e-9)
    # and a brute-force double integral on a truncated window
    box, _ = dblquad(lambda y2, y1: (y1 * y1 + y2 * y2) ** (-(2 + alpha) / 2), 0.3, 30.0, -30.0, 30.0, epsrel=1e-10)
    assert box < float(halfplane_mass(0.3, alpha, 2))


def test_2d_apply_symmetric_and_positive(small_grid_2d, rng):
    op = small_op(small_grid_2d)
    m = op.linear_matrix()
    np.testing.assert_allclose(m, m.T, rtol=0, atol=0)
    assert np.linalg.eigvalsh(m).min() > 0


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_homogeneity(small_grid, p, rng):
    op = small_op(small_grid, p=p)
    for _ in range(100):
        v = rng.standard_normal(op.n)
        c = float(10 ** rng.uniform(-2, 2))
        lhs = op.apply_local(c * v)
        rhs = c ** (p - 1) * op.apply_local(v)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("dim", [1, 2])
def test_energy_gradient_finite_differences(p, dim, small_grid, small_grid_2d, rng):
    g = small_grid if dim == 1 else build_grid(2, ((-1, 1), (-1, 1)), ((-0.4, 0.4), (-0.4, 0.4)), 8)
    op = small_op(g, p=p)
    v = rng.uniform(0.3, 1.0, op.n) * rng.choice([-1, 1], op.n)
    grad = op.cell_volume * op.apply_local(v)
    fd = np.empty(op.n)
    eps = 1e-6
    for k in range(op.n):
        e = np.zeros(op.n)
        e[k] = eps
        fd[k] = (op.energy_local(v + e) - op.energy_local(v - e)) / (2 * eps * p)
    assert np.max(np.abs(grad - fd)) <= 1e-6 * np.max(np.abs(fd))


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_jacobian_finite_differences(small_grid, p, rng):
    op = small_op(small_grid, p=p)
    v = rng.uniform(0.5, 1.5, op.n) * np.linspace(1, 2, op.n)
    jac = op.jacobian_local(v)
    eps = 1e-6
    fd = np.column_stack(
        [(op.apply_local(v + eps * e) - op.apply_local(v - eps * e)) / (2 * eps) for e in np.eye(op.n)]
    )
    assert np.max(np.abs(jac - fd)) <= 1e-6 * np.max(np.abs(fd))


def test_energy_of_zero_and_sign(small_grid, rng):
    op = small_op(small_grid, p=3.0)
    assert op.energy_local(np.zeros(op.n)) == 0.0
    v = rng.standard_normal(op.n)
    assert op.energy_local(v) > 0
    assert op.energy_local(-v) == pytest.approx(op.energy_local(v), rel=1e-14)


def test_restrict_matches_zero_extension(ref_grid, ref_op, rng):
    sub = ref_op.restrict(ref_grid.refuge)
    v = rng.standard_normal(sub.n)
    full = ref_op.apply(sub.extend(v))
    np.testing.assert_allclose(sub.apply_local(v), full[ref_grid.refuge], rtol=1e-11, atol=1e-9)
    assert sub.energy_local(v) == pytest.approx(ref_op.energy(sub.extend(v)), rel=1e-12)


def test_cache_round_trip(tmp_path, small_grid, rng):
    params = OperatorParams(0.4, 2.5)
    op = assemble(small_grid, params, cache_dir=tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    again = assemble(small_grid, params, cache_dir=tmp_path)
    np.testing.assert_array_equal(again.weights, op.weights)
    np.testing.assert_array_equal(again.zeta, op.zeta)
    with pytest.raises(ValueError):
        NonlocalOperator.load_cache(files[0], small_grid, OperatorParams(0.5, 2.5))


def test_phi_signed_power():
    t = np.array([-8.0, -1.0, 0.0, 0.5, 4.0])
    np.testing.assert_allclose(phi(t, 3.0), np.sign(t) * t**2)
    np.testing.assert_allclose(phi(t, 2.0), t)


def test_params_validation():
    with pytest.raises(ValueError):
        OperatorParams(1.0, 2.0)
    with pytest.raises(ValueError):
        OperatorParams(0.5, 1.0)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_algebraic_inequalities_no_violations(p):
    res = check_algebraic_inequalities(p, 100_000, 11)
    assert res["violations"] == 0


def test_constant_p_minus_one_fails_below_two():
    # eta = -xi: |Phi(xi) - Phi(eta)| = 2 |xi|^(p-1) while |xi - eta|^(p-1) = 2^(p-1) |xi|^(p-1)
    p = 1.5
    lhs1, rhs1, _, _ = inequality_sides(p, np.array([1.0]), np.array([-1.0]))
    assert lhs1[0] > (p - 1) * rhs1[0]
    c1, _ = inequality_constants(p)
    assert lhs1[0] == pytest.approx(c1 * rhs1[0], rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(1.1, 4.0),
    st.floats(-1e3, 1e3, allow_nan=False),
    st.floats(-1e3, 1e3, allow_nan=False),
)
def test_monotonicity_of_phi(p, a, b):
    assert (phi(a, p) - phi(b, p)) * (a - b) >= 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.2, 0.8), st.floats(1.3, 3.5))
def test_energy_homogeneous_degree_p(seed, s, p):
    g = build_grid(1, (-1, 1), (-0.4, 0.4), 11)
    op = assemble(g, OperatorParams(s, p))
    v = np.random.default_rng(seed).standard_normal(op.n)
    c = 2.5
    assert op.energy_local(c * v) == pytest.approx(c**p * op.energy_local(v), rel=1e-12)
    assert math.isfinite(op.energy_local(v))
