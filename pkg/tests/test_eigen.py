from __future__ import annotations

import numpy as np
import pytest
from scipy.linalg import eigh
from scipy.optimize import minimize

from fraclogi.eigen import EigenOptions, first_eigen, minimize_quotient, rayleigh_quotient, weighted_eigen
from fraclogi.grid import build_grid
from fraclogi.nonlocal_op import OperatorParams, assemble

from conftest import small_op
from oracles import dense_operator_1d


@pytest.fixture(scope="module")
def dense_ref(ref_grid):
    return dense_operator_1d(ref_grid, 0.5)


def test_first_eigen_matches_dense_eigh(ref_grid, ref_op, dense_ref):
    res = first_eigen(ref_op)
    vals, vecs = eigh(dense_ref)
    assert res.lam == pytest.approx(vals[0], rel=1e-6)
    # the eigenfield is the (positive) first eigenvector, normalized in L^2
    v = np.abs(vecs[:, 0]) / np.sqrt(ref_grid.h * np.sum(vecs[:, 0] ** 2))
    np.testing.assert_allclose(res.eigenfield[ref_grid.interior], v, atol=1e-4)


def test_refuge_eigen_matches_dense_submatrix(ref_grid, ref_op, dense_ref):
    keep = ref_grid.refuge[ref_grid.interior]
    sub = dense_ref[np.ix_(keep, keep)]
    assert first_eigen(ref_op, ref_grid.refuge).lam == pytest.approx(eigh(sub, eigvals_only=True)[0], rel=1e-6)


@pytest.mark.parametrize("mu", [1.0, 100.0])
def test_weighted_eigen_matches_dense(ref_grid, ref_op, ref_b, dense_ref, mu):
    b = ref_b[ref_grid.interior]
    lam = eigh(dense_ref + mu * np.diag(b), eigvals_only=True)[0]
    assert weighted_eigen(ref_op, ref_b, mu).lam == pytest.approx(lam, rel=1e-6)


def test_reference_values(ref_grid, ref_op):
    # frozen from the dense eigensolver at N = 201, s = 0.5
    assert first_eigen(ref_op).lam == pytest.approx(7.26070152, rel=1e-7)
    assert first_eigen(ref_op, ref_grid.refuge).lam == pytest.approx(18.10884323, rel=1e-7)


def test_eigenfield_positive_and_normalized(ref_grid, ref_op):
    res = first_eigen(ref_op)
    u = res.eigenfield
    assert np.all(u[ref_grid.interior] > 0)
    assert np.all(u[~ref_grid.interior] == 0)
    assert ref_grid.lp_norm(u, 2.0) == pytest.approx(1.0, rel=1e-12)
    assert rayleigh_quotient(ref_op, u) == pytest.approx(res.lam, rel=1e-12)
    # symmetric domain, symmetric eigenfunction
    np.testing.assert_allclose(u, u[::-1], atol=1e-6)


def test_dilation_is_exact_in_the_discretization():
    # scaling Omega and h by t multiplies every weight and tail by t^-sp
    ops = [assemble(build_grid(1, (-t, t), (-0.4 * t, 0.4 * t), 101), OperatorParams(0.5, 2.0)) for t in (1.0, 2.0)]
    lam1, lam2 = (first_eigen(op).lam for op in ops)
    assert lam2 * 2.0 / lam1 == pytest.approx(1.0, rel=1e-8)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_nonlinear_eigen_against_generic_minimizer(small_grid, p):
    op = small_op(small_grid, p=p)
    h = op.cell_volume

    def quotient(v):
        return op.energy_local(v) / (h * np.sum(np.abs(v) ** p))

    start = np.ones(op.n)
    ref = minimize(quotient, start, method="BFGS", options={"gtol": 1e-12, "maxiter": 20000})
    res = first_eigen(op)
    assert res.lam == pytest.approx(ref.fun, rel=1e-6)
    assert res.lam <= ref.fun * (1 + 1e-9)


def test_p_below_two_reports_inverse_iteration(small_grid):
    res = first_eigen(small_op(small_grid, p=1.5))
    assert res.status == "inverse_iteration"
    assert res.residual < 1e-3


def test_weighted_ladder_monotone_below_refuge(ref_grid, ref_op, ref_b):
    lam0 = first_eigen(ref_op, ref_grid.refuge).lam
    lams = [weighted_eigen(ref_op, ref_b, mu).lam for mu in (0.0, 1.0, 10.0, 100.0)]
    assert lams[0] == pytest.approx(first_eigen(ref_op).lam, rel=1e-9)
    assert all(a <= b for a, b in zip(lams, lams[1:]))
    assert lams[-1] < lam0


def test_weighted_rejects_negative_mu(ref_op, ref_b):
    with pytest.raises(ValueError):
        weighted_eigen(ref_op, ref_b, -1.0)


def test_quotient_with_other_exponent(small_grid):
    # m = q + 1 quotient used for the Sobolev-type constant; q + 1 -> 2 recovers lambda_1
    op = small_op(small_grid)
    start = np.ones(op.n)
    s0, v, *_ = minimize_quotient(op, 2.0 + 1e-6, start)
    assert s0 == pytest.approx(first_eigen(op).lam, rel=1e-2)
    assert op.cell_volume * np.sum(v ** (2.0 + 1e-6)) == pytest.approx(1.0, rel=1e-12)


def test_iteration_limit_raises(ref_op):
    from fraclogi.eigen import EigenConvergenceError

    with pytest.raises(EigenConvergenceError):
        first_eigen(ref_op, opts=EigenOptions(max_iter=3))

