"""Newton helper, configuration parsing and file formats."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import rosen

from fraclogi.config import ConfigError, config_from_dict, load_config
from fraclogi.io import dumps, fmt, read_field, write_field, write_records
from fraclogi.newton import newton_minimize, spd_solve


# -- newton ------------------------------------------------------------------------------


def test_newton_quadratic_one_step(rng):
    a = rng.standard_normal((6, 6))
    h = a @ a.T + 6 * np.eye(6)
    b = rng.standard_normal(6)
    res = newton_minimize(lambda x: 0.5 * x @ h @ x - b @ x, lambda x: (h @ x - b, h), np.zeros(6))
    np.testing.assert_allclose(res.x, np.linalg.solve(h, b), rtol=1e-12)
    assert res.converged and res.iterations <= 2


def test_newton_projected_stays_feasible():
    # minimize (x - c)^2 / 2 over x >= 0 with c partly negative
    c = np.array([1.0, -2.0, 0.5])
    res = newton_minimize(
        lambda x: 0.5 * float((x - c) @ (x - c)),
        lambda x: (x - c, np.eye(3)),
        np.ones(3),
        project=lambda x: np.maximum(x, 0),
    )
    np.testing.assert_allclose(res.x, np.maximum(c, 0), atol=1e-12)


def test_newton_rosenbrock_with_convex_fallback():
    def gh(x):
        a, b = x
        g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
        hess = np.array([[2 - 400 * (b - 3 * a * a), -400 * a], [-400 * a, 200.0]])
        return g, (hess, np.diag([2.0 + 800 * a * a, 200.0]))

    res = newton_minimize(lambda x: float(rosen(x)), gh, np.array([-1.2, 1.0]), rtol=0, atol=1e-24, max_iter=500)
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-8)


def test_spd_solve_shifts_indefinite():
    x = spd_solve(np.array([[1.0, 0.0], [0.0, -1e-14]]), np.array([1.0, 0.0]))
    assert np.all(np.isfinite(x))


# -- config ------------------------------------------------------------------------------


def test_defaults_parse():
    cfg = config_from_dict({})
    assert cfg.grid.nodes == 201 and cfg.operator.p == 2.0


@pytest.mark.parametrize(
    "raw,key",
    [
        ({"grid": {"nodez": 3}}, "grid.nodez"),
        ({"extra": 1}, "extra"),
        ({"operator": {"s": 1.2}}, "operator.s"),
        ({"operator": {"p": 1.0}}, "operator.p"),
        ({"problem": {"r": 0.5}}, "problem.r"),
        ({"problem": {"lambda": -1.0}}, "problem.lambda"),
        ({"problem": {"lambda_unit": "furlongs"}}, "problem.lambda_unit"),
        ({"scheme": {"T": 0}}, "scheme.T"),
        ({"scheme": {"T": 1.0, "dt": 2.0}}, "scheme.dt"),
        ({"initial": {"kind": "file"}}, "initial.path"),
        ({"initial": {"kind": "spline"}}, "initial.kind"),
        ({"grid": {"nodes": 20.5}}, "grid.nodes"),
        ({"grid": {"dimension": 3}}, "grid.dimension"),
        ({"mode": "dance"}, "mode"),
        ({"eigen": {"mu": [1.0, -2.0]}}, "eigen.mu[1]"),
        ({"problem": {"q": True}}, "problem.q"),
        ({"grid": "flat"}, "grid"),
    ],
)
def test_invalid_keys_named(raw, key):
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert info.value.key == key


def test_lambda_key_and_int_coercion():
    cfg = config_from_dict({"problem": {"lambda": 2, "q": 1}})
    assert cfg.problem.lambda_ == 2.0 and isinstance(cfg.problem.q, float)
    assert cfg.to_dict()["problem"]["lambda"] == 2.0


def test_load_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('seed = 3\n[problem]\nq = 0.5\nlambda = 1.0\n[initial]\nkind = "bump"\n')
    cfg = load_config(path)
    assert cfg.seed == 3 and cfg.problem.q == 0.5
    bad = tmp_path / "bad.toml"
    bad.write_text("[problem\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


# -- io ----------------------------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_round_trips(x):
    text = fmt(x)
    assert float(text) == x
    assert any(c in text for c in ".en")
    assert json.loads(dumps(x)) == x


def test_fmt_specials():
    assert fmt(1.0) == "1.0"
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(3) == "3" and fmt(True) == "true"
    assert fmt(math.inf) == "inf" and fmt(float("nan")) == "nan"
    assert dumps({"a": [1, 2.5, None, math.inf]}).count("Infinity") == 1


def test_field_round_trip(tmp_path, small_grid, rng):
    u = small_grid.extend(rng.uniform(0, 1, int(small_grid.interior.sum())))
    path = write_field(tmp_path / "f.csv", small_grid, u)
    np.testing.assert_array_equal(read_field(path, small_grid), u)
    assert path.read_text().splitlines()[0] == "index,x,value"


def test_records_union_header(tmp_path):
    path = write_records(tmp_path / "r.csv", [{"a": 1, "b": 2.0}, {"a": 3, "c": "x"}])
    lines = path.read_text().splitlines()
    assert lines == ["a,b,c", "1,2.0,", "3,,x"]
