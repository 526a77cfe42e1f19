"""Dense discretization of the fractional p-Laplacian with exterior Dirichlet data.

For interior nodes ``i`` the discrete operator is

    (L u)_i = 2 * [ sum_{j != i} w_ij Phi_p(u_i - u_j) + zeta_i Phi_p(u_i) ],
    w_ij    = h^d / |x_i - x_j|^(d + s p),        Phi_p(t) = |t|^(p-2) t,

where the sum runs over interior nodes, and ``zeta_i`` collects everything
the field sees as zero: the exterior nodes inside the bounding box (their
pair weights) plus the analytic far tail

    tail_i = int_{R^d \\ box} |x_i - y|^-(d + s p) dy.

The self cell is omitted (principal value) and no normalising constant is
applied.  The discrete Gagliardo energy is

    E(u) = h^d sum_{i != j} w_ij |u_i - u_j|^p + 2 h^d sum_i zeta_i |u_i|^p,

which makes ``grad (E / p) = h^d L u`` hold exactly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gamma

from fraclogi.grid import Grid

_BLOCK_ELEMS = 1 << 20
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)

CACHE_MAGIC = b"FRLW"
CACHE_VERSION = 1


@dataclass(frozen=True)
class OperatorParams:
    s: float
    p: float

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if not self.p > 1.0:
            raise ValueError(f"p must exceed 1, got {self.p}")

    @property
    def sp(self) -> float:
        return self.s * self.p


def phi(t, power: float):
    """Signed power ``|t|^(power-1) sign(t)``; ``phi(t, p)`` is Phi_p."""
    return np.copysign(np.abs(t) ** (power - 1.0), t)


def tail_1d(x: np.ndarray, box: tuple[float, float], sp: float) -> np.ndarray:
    a, b = box
    return ((b - x) ** (-sp) + (x - a) ** (-sp)) / sp


def _sector_integral(delta: np.ndarray, lo: np.ndarray, hi: np.ndarray, sp: float) -> np.ndarray:
    # delta^-sp * int_lo^hi cos(phi)^sp dphi, 64-point Gauss-Legendre per sector
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    ang = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = np.cos(ang) ** sp @ _GL_WEIGHTS
    return delta ** (-sp) * half * vals


def tail_2d(coords: np.ndarray, box, sp: float) -> np.ndarray:
    """Exterior-of-box kernel mass, reduced to an angular integral.

    In polar coordinates around x the radial part integrates to
    ``rho(theta)^-sp / sp``; each face of the box is seen under a sector in
    which ``rho = delta / cos(phi)``.
    """
    (a1, b1), (a2, b2) = box
    x, y = coords[:, 0], coords[:, 1]
    left, right, bottom, top = x - a1, b1 - x, y - a2, b2 - y
    total = np.zeros(len(x))
    # (distance to face, distances to the two adjacent faces bounding its sector)
    for delta, side_a, side_b in (
        (right, bottom, top),
        (left, top, bottom),
        (top, right, left),
        (bottom, left, right),
    ):
        total += _sector_integral(delta, -np.arctan(side_a / delta), np.arctan(side_b / delta), sp)
    return total / sp


def halfplane_mass(delta, alpha: float, dimension: int = 2):
    """``int_{y_1 > delta} |y|^-(d+alpha) dy`` in closed form (used as a check)."""
    if dimension == 1:
        return np.asarray(delta, dtype=float) ** (-alpha) / alpha
    c = math.sqrt(math.pi) * gamma((1 + alpha) / 2) / gamma((2 + alpha) / 2)
    return c * np.asarray(delta, dtype=float) ** (-alpha) / alpha


class NonlocalOperator:
    """Assembled operator on the nodes of ``mask`` (default: all of Omega).

    Vectors named ``*_local`` hold one value per node of ``mask`` in node
    order; the public ``apply``/``energy`` take full-grid fields.
    """

    def __init__(self, grid: Grid, params: OperatorParams, weights, tail, collar, mask=None):
        self.grid = grid
        self.params = params
        self.mask = grid.interior.copy() if mask is None else np.asarray(mask, dtype=bool).copy()
        self.index = np.flatnonzero(self.mask)
        self.weights = weights
        self.tail = tail
        self.collar = collar
        self.zeta = tail + collar
        self.row_sum = weights.sum(axis=1)
        self.threads = 1
        self._linear_matrix = None
        for a in (self.mask, self.index, self.weights, self.tail, self.collar, self.zeta, self.row_sum):
            a.setflags(write=False)

    @property
    def p(self) -> float:
        return self.params.p

    @property
    def s(self) -> float:
        return self.params.s

    @property
    def n(self) -> int:
        return self.index.size

    @property
    def cell_volume(self) -> float:
        return self.grid.cell_volume

    # -- local (compressed) kernels -------------------------------------------------

    def _blocks(self):
        step = max(1, _BLOCK_ELEMS // max(self.n, 1))
        for start in range(0, self.n, step):
            yield slice(start, min(start + step, self.n))

    def apply_local(self, v: np.ndarray) -> np.ndarray:
        p = self.p
        if p == 2.0:
            return 2.0 * ((self.row_sum + self.zeta) * v - self.weights @ v)
        out = np.empty(self.n)
        for blk in self._blocks():
            diff = v[blk, None] - v[None, :]
            out[blk] = np.einsum("ij,ij->i", self.weights[blk], phi(diff, p))
        return 2.0 * (out + self.zeta * phi(v, p))

    def energy_local(self, v: np.ndarray) -> float:
        p = self.p
        if p == 2.0:
            pair = 2.0 * (v @ (self.row_sum * v) - v @ (self.weights @ v))
        else:
            pair = 0.0
            for blk in self._blocks():
                diff = np.abs(v[blk, None] - v[None, :]) ** p
                pair += float(np.einsum("ij,ij->", self.weights[blk], diff))
        return self.cell_volume * (pair + 2.0 * float(self.zeta @ (np.abs(v) ** p)))

    def linear_matrix(self) -> np.ndarray:
        """Dense matrix of the p = 2 operator (also the p = 2 Jacobian)."""
        if self._linear_matrix is None:
            m = -2.0 * np.array(self.weights)
            m[np.diag_indices(self.n)] = 2.0 * (self.row_sum + self.zeta)
            m.setflags(write=False)
            self._linear_matrix = m
        return self._linear_matrix

    def jacobian_local(self, v: np.ndarray, reg: float = 0.0) -> np.ndarray:
        """Jacobian of ``apply_local`` at ``v``.

        For p < 2 the derivative of Phi_p blows up at zero; ``reg`` replaces
        ``|t|^(p-2)`` by ``(t^2 + reg^2)^((p-2)/2)`` so the matrix stays finite.
        """
        p = self.p
        if p == 2.0:
            return np.array(self.linear_matrix())

        def dphi(t):
            if p < 2.0:
                eps = reg if reg > 0 else 1e-12 * max(1.0, float(np.max(np.abs(v), initial=0.0)))
                return (t * t + eps * eps) ** ((p - 2.0) / 2.0)
            return np.abs(t) ** (p - 2.0)

        k = np.empty((self.n, self.n))
        for blk in self._blocks():
            k[blk] = self.weights[blk] * dphi(v[blk, None] - v[None, :])
        k[np.diag_indices(self.n)] = 0.0
        diag = k.sum(axis=1) + self.zeta * dphi(v)
        k *= -1.0
        k[np.diag_indices(self.n)] = diag
        k *= 2.0 * (p - 1.0)
        return k

    # -- full-grid interface ----------------------------------------------------------

    def local(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=float)[self.mask]

    def extend(self, v: np.ndarray) -> np.ndarray:
        return self.grid.extend(v, self.mask)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``(-Delta)^s_p u`` on the operator's nodes; zero elsewhere."""
        return self.extend(self.apply_local(self.local(u)))

    def energy(self, u: np.ndarray) -> float:
        """Discrete Gagliardo energy ``||u||^p`` of ``u`` restricted to the mask."""
        return self.energy_local(self.local(u))

    def restrict(self, mask: np.ndarray) -> "NonlocalOperator":
        """Operator for fields supported on ``mask``; the complement acts as exterior."""
        mask = np.asarray(mask, dtype=bool)
        if np.any(mask & ~self.mask):
            raise ValueError("restriction mask must lie inside the operator mask")
        if not mask.any():
            raise ValueError("restriction mask is empty")
        keep = mask[self.index]
        w = np.ascontiguousarray(self.weights[np.ix_(keep, keep)])
        dropped = self.weights[np.ix_(keep, ~keep)].sum(axis=1)
        return NonlocalOperator(
            self.grid, self.params, w, self.tail[keep].copy(), self.collar[keep] + dropped, mask
        )

    # -- cache -------------------------------------------------------------------------

    def save_cache(self, path) -> None:
        """Write weights as a packed little-endian upper triangle plus tails."""
        iu = np.triu_indices(self.n, k=1)
        header = struct.pack(
            "<4sIIQdd32s",
            CACHE_MAGIC,
            CACHE_VERSION,
            self.grid.dimension,
            self.n,
            self.s,
            self.p,
            bytes.fromhex(self.grid.digest()),
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.weights[iu], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.tail, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.collar, dtype="<f8").tobytes())

    @classmethod
    def load_cache(cls, path, grid: Grid, params: OperatorParams) -> "NonlocalOperator":
        raw = Path(path).read_bytes()
        size = struct.calcsize("<4sIIQdd32s")
        magic, version, d, n, s, p, digest = struct.unpack("<4sIIQdd32s", raw[:size])
        if magic != CACHE_MAGIC or version != CACHE_VERSION:
            raise ValueError("not a weight cache file")
        if d != grid.dimension or digest.hex() != grid.digest() or n != int(grid.interior.sum()):
            raise ValueError("weight cache was built for a different grid")
        if (s, p) != (params.s, params.p):
            raise ValueError("weight cache was built for different (s, p)")
        m = n * (n - 1) // 2
        body = np.frombuffer(raw, dtype="<f8", offset=size)
        if body.size != m + 2 * n:
            raise ValueError("truncated weight cache")
        w = np.zeros((n, n))
        iu = np.triu_indices(n, k=1)
        w[iu] = body[:m]
        w += w.T
        return cls(grid, params, w, body[m : m + n].copy(), body[m + n :].copy())


def cache_key(grid: Grid, params: OperatorParams) -> str:
    return f"{grid.digest()[:16]}_s{params.s!r}_p{params.p!r}"


def assemble(grid: Grid, params: OperatorParams, cache_dir=None) -> NonlocalOperator:
    """Assemble pair weights and tails for ``grid``.

    With ``cache_dir`` the weights are read from / written to a binary cache
    keyed by grid hash and (s, p).
    """
    if cache_dir is not None:
        path = Path(cache_dir) / f"weights_{cache_key(grid, params)}.bin"
        if path.exists():
            return NonlocalOperator.load_cache(path, grid, params)

    d = grid.dimension
    expo = d + params.sp
    h = grid.h
    idx = np.rint((grid.coords - grid.coords.min(axis=0)) / h).astype(np.int64)
    inner = grid.interior_index
    n = inner.size
    outer = np.flatnonzero(~grid.interior)
    weights = np.empty((n, n))
    collar = np.empty(n)
    # w depends only on the integer offset: h^d / (h |k|)^(d+sp) = h^-sp |k|^-(d+sp)
    scale = h ** (-params.sp)
    step = max(1, _BLOCK_ELEMS // max(grid.n_nodes, 1))
    with np.errstate(divide="ignore"):
        for start in range(0, n, step):
            rows = inner[start : start + step]
            off = idx[rows, None, :] - idx[None, :, :]
            k2 = np.einsum("ijk,ijk->ij", off, off).astype(float)
            w = scale * k2 ** (-expo / 2.0)
            w[k2 == 0] = 0.0
            weights[start : start + step] = w[:, inner]
            collar[start : start + step] = w[:, outer].sum(axis=1)
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(collar))):
        raise OverflowError(f"pair weights overflow for d + sp = {expo}")

    if d == 1:
        tail = tail_1d(grid.coords[inner, 0], grid.box[0], params.sp)
    else:
        tail = tail_2d(grid.coords[inner], grid.box, params.sp)
    if not np.all(np.isfinite(tail)):
        raise OverflowError(f"tail weights overflow for d + sp = {expo}")

    op = NonlocalOperator(grid, params, weights, tail, collar)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        op.save_cache(path)
    return op


# -- algebraic inequalities -------------------------------------------------------------


def inequality_constants(p: float) -> tuple[float, float]:
    """Constants (c1, c2) for the two Phi_p inequalities in the scalar case.

    c1 = p - 1 for p >= 2 (mean value bound) and 2^(2-p) for p < 2 (sharp,
    attained at eta = -xi).  c2 = 2^(2-p) for p >= 2 (sharp) and (p-1)/2 for
    p < 2.
    """
    if p >= 2.0:
        return p - 1.0, 2.0 ** (2.0 - p)
    return 2.0 ** (2.0 - p), (p - 1.0) / 2.0


def inequality_sides(p: float, xi: np.ndarray, eta: np.ndarray):
    """Return (lhs1, rhs1, lhs2, rhs2) without constants.

    Inequality 1: lhs1 <= c1 * rhs1.  Inequality 2: lhs2 >= c2 * rhs2.
    """
    dphi = phi(xi, p) - phi(eta, p)
    diff = np.abs(xi - eta)
    tot = np.abs(xi) + np.abs(eta)
    lhs1 = np.abs(dphi)
    lhs2 = dphi * (xi - eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        if p >= 2.0:
            rhs1 = diff * tot ** (p - 2.0)
            rhs2 = diff**p
        else:
            rhs1 = diff ** (p - 1.0)
            rhs2 = np.where(tot > 0, diff**2 / tot ** (2.0 - p), 0.0)
    return lhs1, rhs1, lhs2, rhs2


def sample_pairs(sample_count: int, rng: np.random.Generator):
    """Scalar pairs: signed log-uniform magnitudes in [1e-3, 1e3].

    One in fifty samples is forced onto an edge case (eta = xi, eta = -xi,
    eta = 0).
    """
    mag = 10.0 ** rng.uniform(-3.0, 3.0, size=(2, sample_count))
    sign = rng.choice([-1.0, 1.0], size=(2, sample_count))
    xi, eta = mag * sign
    edge = rng.integers(0, 150, size=sample_count)
    eta = np.where(edge == 0, xi, eta)
    eta = np.where(edge == 1, -xi, eta)
    eta = np.where(edge == 2, 0.0, eta)
    return xi, eta


def check_algebraic_inequalities(p: float, sample_count: int, rng_seed: int) -> dict:
    if not p > 1.0:
        raise ValueError("p must exceed 1")
    rng = np.random.Generator(np.random.Philox(rng_seed))
    xi, eta = sample_pairs(sample_count, rng)
    c1, c2 = inequality_constants(p)
    lhs1, rhs1, lhs2, rhs2 = inequality_sides(p, xi, eta)
    slack = 1e-12
    # margins relative to the larger side; positive means satisfied
    with np.errstate(invalid="ignore", divide="ignore"):
        scale1 = np.maximum(np.maximum(lhs1, c1 * rhs1), np.finfo(float).tiny)
        scale2 = np.maximum(np.maximum(np.abs(lhs2), c2 * rhs2), np.finfo(float).tiny)
        m1 = (c1 * rhs1 - lhs1) / scale1
        m2 = (lhs2 - c2 * rhs2) / scale2
    v1 = int(np.count_nonzero(m1 < -slack))
    v2 = int(np.count_nonzero(m2 < -slack))
    return {
        "p": p,
        "c1": c1,
        "c2": c2,
        "samples": sample_count,
        "violations": v1 + v2,
        "violations_1": v1,
        "violations_2": v2,
        "worst_margin": float(min(m1.min(), m2.min())),
    }
