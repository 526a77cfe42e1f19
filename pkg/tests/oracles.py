"""Reference computations written independently of the package internals."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad


def tail_quad_1d(x, box, sp):
    a, b = box
    f = lambda y: abs(x - y) ** (-(1 + sp))  # noqa: E731
    return quad(f, -np.inf, a)[0] + quad(f, b, np.inf)[0]


def halfplane_mass_quad(delta, alpha):
    # int_{y1 > delta} |y|^-(2+alpha) dy in polar form
    f = lambda t: (delta / math.cos(t)) ** (-alpha) / alpha  # noqa: E731
    return quad(f, -math.pi / 2, math.pi / 2, epsabs=0, epsrel=1e-13)[0]


def quadrant_mass(a, b, alpha):
    # int_{y1 > a, y2 > b} |y|^-(2+alpha), a, b > 0, in polar form: the radial
    # integral from rho(theta) = max(a / cos, b / sin) to infinity is rho^-alpha / alpha
    corner = math.atan2(b, a)
    f1 = lambda t: (b / math.sin(t)) ** (-alpha) / alpha  # noqa: E731
    f2 = lambda t: (a / math.cos(t)) ** (-alpha) / alpha  # noqa: E731
    return quad(f1, 0.0, corner, epsabs=0, epsrel=1e-13)[0] + quad(f2, corner, math.pi / 2, epsabs=0, epsrel=1e-13)[0]


def tail_inclusion_exclusion(point, box, alpha):
    # exterior of a box = union of four half-planes; adjacent pairs meet in corner quadrants
    (a1, b1), (a2, b2) = box
    x, y = point
    dists = [x - a1, b1 - x, y - a2, b2 - y]
    total = sum(halfplane_mass_quad(d, alpha) for d in dists)
    for dx in (x - a1, b1 - x):
        for dy in (y - a2, b2 - y):
            total -= quadrant_mass(dx, dy, alpha)
    return total


def dense_operator_1d(grid, s):
    # independent assembly: loop over all box nodes, quad for the far tail
    sp = 2 * s
    h = grid.h
    x = grid.coords[:, 0]
    inner = grid.interior_index
    n = inner.size
    m = np.zeros((n, n))
    for a, i in enumerate(inner):
        diag = 0.0
        for j in range(grid.n_nodes):
            if j == i:
                continue
            w = h / abs(x[i] - x[j]) ** (1 + sp)
            diag += w
            if grid.interior[j]:
                m[a, np.searchsorted(inner, j)] = -2 * w
        m[a, a] = 2 * (diag + tail_quad_1d(x[i], grid.box[0], sp))
    return m
