from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraclogi.grid import GridError, build_absorption, build_grid, distance_profile, rle_decode, rle_encode


def test_reference_counts(ref_grid):
    # nodes -1 + 0.01 k, k = 0..200; faces are exterior, refuge is |x| < 0.4
    assert ref_grid.h == pytest.approx(0.01, rel=1e-15)
    assert ref_grid.n_nodes == 201
    assert ref_grid.interior.sum() == 199
    assert ref_grid.refuge.sum() == 79
    assert not ref_grid.interior[0] and not ref_grid.interior[-1]


def test_counts_2d():
    g = build_grid(2, ((-1, 1), (-1, 1)), ((-0.375, 0.375), (-0.375, 0.375)), 33)
    # h = 1/16: 31 interior nodes per axis, refuge nodes k/16 with |k| <= 5
    assert g.shape == (33, 33)
    assert g.interior.sum() == 31 * 31
    assert g.refuge.sum() == 11 * 11


def test_refuge_inside_interior(ref_grid):
    assert np.all(ref_grid.interior[ref_grid.refuge])


def test_holes_removed():
    g = build_grid(1, (-1, 1), (-0.2, 0.2), 41, holes=[(0.5, 0.7)])
    x = g.coords[:, 0]
    assert not np.any(g.interior & (x >= 0.5 - 1e-12) & (x <= 0.7 + 1e-12))


def test_collar_adds_exterior_layers():
    g = build_grid(1, (-1, 1), (-0.4, 0.4), 21, collar=3)
    assert g.n_nodes == 27
    assert g.interior.sum() == 19


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(dimension=3, omega=(-1, 1), refuge=(-0.4, 0.4), nodes=21),
        dict(dimension=1, omega=(-1, 1), refuge=(-0.4, 1.2), nodes=21),
        dict(dimension=1, omega=(-1, 1), refuge=(-0.4, 0.4), nodes=5),
        dict(dimension=1, omega=(-1, 1), refuge=(0.05, 0.15), nodes=11),
        dict(dimension=1, omega=(-1, 1), refuge=(-0.4, 0.4), nodes=21, holes=[(0.0, 0.2)]),
        dict(dimension=2, omega=((-1, 1), (0, 0.75)), refuge=((-0.3, 0.3), (0.2, 0.5)), nodes=11),
    ],
)
def test_invalid_domains(kwargs):
    with pytest.raises(GridError):
        build_grid(**kwargs)


def test_absorption_two_level(ref_grid):
    b = build_absorption(ref_grid, 3.0)
    assert np.all(b[ref_grid.refuge] == 0)
    assert np.all(b[ref_grid.interior & ~ref_grid.refuge] == 3.0)
    assert np.all(b[~ref_grid.interior] == 0)
    with pytest.raises(ValueError):
        build_absorption(ref_grid, 0.0)


def _brute_distance(coords, mask, s):
    out = np.zeros(len(coords))
    outside = coords[~mask]
    for i in np.flatnonzero(mask):
        out[i] = np.min(np.linalg.norm(outside - coords[i], axis=1)) ** s
    return out


@pytest.mark.parametrize("dim", [1, 2])
def test_distance_profile_brute_force(dim, small_grid, small_grid_2d):
    g = small_grid if dim == 1 else small_grid_2d
    for mask in (g.interior, g.refuge):
        np.testing.assert_allclose(distance_profile(g, mask, 0.5), _brute_distance(g.coords, mask, 0.5), rtol=1e-14)


def test_distance_profile_values_1d(ref_grid):
    d = distance_profile(ref_grid, ref_grid.interior, 1.0)
    x = ref_grid.coords[:, 0]
    np.testing.assert_allclose(d[ref_grid.interior], (1.0 - np.abs(x))[ref_grid.interior], atol=1e-12)


def test_digest_stable_and_sensitive():
    a = build_grid(1, (-1, 1), (-0.4, 0.4), 21)
    b = build_grid(1, (-1, 1), (-0.4, 0.4), 21)
    c = build_grid(1, (-1, 1), (-0.3, 0.3), 21)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_norms_and_extend(ref_grid):
    u = ref_grid.extend(np.ones(199))
    assert ref_grid.integrate(u) == pytest.approx(1.99)
    assert ref_grid.lp_norm(u, 2.0) == pytest.approx(np.sqrt(1.99))
    with pytest.raises(ValueError):
        ref_grid.check_field(np.ones(ref_grid.n_nodes))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=300))
def test_rle_round_trip(bits):
    mask = np.array(bits, dtype=bool)
    np.testing.assert_array_equal(rle_decode(rle_encode(mask)), mask)


def test_metadata_masks_decode(small_grid_2d):
    meta = small_grid_2d.metadata()
    np.testing.assert_array_equal(rle_decode(meta["interior_mask"]), small_grid_2d.interior)
    np.testing.assert_array_equal(rle_decode(meta["refuge_mask"]), small_grid_2d.refuge)
    assert meta["hash"] == small_grid_2d.digest()


def test_axes_match_coords(small_grid_2d):
    xs, ys = small_grid_2d.axes()
    pts = np.array(list(itertools.product(xs, ys)))
    np.testing.assert_allclose(pts, small_grid_2d.coords, atol=1e-14)
