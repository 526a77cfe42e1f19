"""Uniform tensor grids with Omega / refuge / exterior node masks.

Nodes cover the closed box of Omega (plus an optional collar of extra
exterior layers).  A node belongs to Omega iff it lies *strictly* inside the
box; nodes on the box faces are exterior, which gives every interior node a
genuine Dirichlet collar.  Each node stands for the cell of side ``h``
centred on it, so the union of node cells is the bounding box used for the
far-field tail of the nonlocal operator.

Fields are plain float arrays of length ``grid.n_nodes`` in row-major node
order, identically zero on exterior nodes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

Box = tuple[tuple[float, float], ...]

# Relative (to h) tolerance used for strict inside tests.
_SNAP = 1e-9


class GridError(ValueError):
    """Invalid domain description."""


@dataclass(frozen=True, eq=False)
class Grid:
    dimension: int
    h: float
    shape: tuple[int, ...]
    coords: np.ndarray
    interior: np.ndarray
    refuge: np.ndarray
    omega: Box
    refuge_box: Box
    holes: tuple[Box, ...] = ()

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def cell_volume(self) -> float:
        return self.h**self.dimension

    @property
    def box(self) -> Box:
        """Bounding box covered by the node cells."""
        lo = self.coords.min(axis=0) - 0.5 * self.h
        hi = self.coords.max(axis=0) + 0.5 * self.h
        return tuple((float(a), float(b)) for a, b in zip(lo, hi))

    @property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.interior)

    @property
    def exterior(self) -> np.ndarray:
        return ~self.interior

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_nodes)

    def axes(self) -> list[np.ndarray]:
        """1D coordinate arrays per axis."""
        out = []
        for k, n in enumerate(self.shape):
            lo = self.coords[:, k].min()
            out.append(lo + self.h * np.arange(n))
        return out

    def check_field(self, u: np.ndarray, name: str = "field") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_nodes,):
            raise ValueError(f"{name}: expected shape ({self.n_nodes},), got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError(f"{name}: non-finite values")
        if np.any(u[~self.interior] != 0.0):
            raise ValueError(f"{name}: nonzero values on exterior nodes")
        return u

    def extend(self, values: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        """Scatter values given on ``mask`` (default: interior) into a full field."""
        mask = self.interior if mask is None else mask
        u = self.zeros()
        u[mask] = values
        return u

    def integrate(self, u: np.ndarray, mask: np.ndarray | None = None) -> float:
        mask = self.interior if mask is None else mask
        return float(np.sum(u[mask]) * self.cell_volume)

    def lp_norm(self, u: np.ndarray, m: float, mask: np.ndarray | None = None) -> float:
        mask = self.interior if mask is None else mask
        return float((np.sum(np.abs(u[mask]) ** m) * self.cell_volume) ** (1.0 / m))

    def digest(self) -> str:
        """Stable hash of node layout and masks."""
        sha = hashlib.sha256()
        sha.update(np.asarray([self.dimension, *self.shape], dtype="<i8").tobytes())
        sha.update(np.asarray([self.h], dtype="<f8").tobytes())
        sha.update(np.ascontiguousarray(self.coords, dtype="<f8").tobytes())
        sha.update(np.packbits(self.interior).tobytes())
        sha.update(np.packbits(self.refuge).tobytes())
        return sha.hexdigest()

    def metadata(self) -> dict:
        return {
            "dimension": self.dimension,
            "h": self.h,
            "shape": list(self.shape),
            "box": [list(b) for b in self.box],
            "omega": [list(b) for b in self.omega],
            "refuge": [list(b) for b in self.refuge_box],
            "holes": [[list(b) for b in hole] for hole in self.holes],
            "interior_mask": rle_encode(self.interior),
            "refuge_mask": rle_encode(self.refuge),
            "distance_convention": "node-to-node, O(h)",
            "hash": self.digest(),
        }


def rle_encode(mask: np.ndarray) -> str:
    """Run-length encode a boolean mask as ``"0*12,1*177,0*12"``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return ""
    change = np.flatnonzero(mask[1:] != mask[:-1]) + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [mask.size])))
    return ",".join(f"{int(mask[s])}*{n}" for s, n in zip(starts, lengths))


def rle_decode(text: str) -> np.ndarray:
    if not text:
        return np.zeros(0, dtype=bool)
    parts = []
    for run in text.split(","):
        value, count = run.split("*")
        parts.append(np.full(int(count), value == "1"))
    return np.concatenate(parts)


def _as_box(spec, dimension: int, name: str) -> Box:
    arr = np.asarray(spec, dtype=float)
    if arr.shape == (2,):
        arr = np.tile(arr, (dimension, 1))
    if arr.shape != (dimension, 2):
        raise GridError(f"{name}: expected {dimension} (lo, hi) pairs")
    if np.any(arr[:, 0] >= arr[:, 1]):
        raise GridError(f"{name}: empty box {arr.tolist()}")
    return tuple((float(a), float(b)) for a, b in arr)


def _strictly_inside(coords: np.ndarray, box: Box, tol: float) -> np.ndarray:
    inside = np.ones(coords.shape[0], dtype=bool)
    for k, (lo, hi) in enumerate(box):
        inside &= (coords[:, k] > lo + tol) & (coords[:, k] < hi - tol)
    return inside


def _closed_inside(coords: np.ndarray, box: Box, tol: float) -> np.ndarray:
    inside = np.ones(coords.shape[0], dtype=bool)
    for k, (lo, hi) in enumerate(box):
        inside &= (coords[:, k] >= lo - tol) & (coords[:, k] <= hi + tol)
    return inside


def _box_within(inner: Box, outer: Box) -> bool:
    return all(o[0] < i[0] and i[1] < o[1] for i, o in zip(inner, outer))


def _boxes_overlap(a: Box, b: Box) -> bool:
    return all(x[0] <= y[1] and y[0] <= x[1] for x, y in zip(a, b))


def build_grid(
    dimension: int,
    omega,
    refuge,
    nodes: int,
    holes: Sequence = (),
    collar: int = 0,
) -> Grid:
    """Build the node grid for Omega with refuge sub-box Omega_0.

    ``nodes`` counts nodes along the first axis across the closed box of
    Omega; the spacing is shared by all axes, so in 2D every side length must
    be a multiple of ``h``.  ``holes`` are closed boxes removed from Omega.
    ``collar`` adds that many extra exterior node layers around the box.
    """
    if dimension not in (1, 2):
        raise GridError("dimension must be 1 or 2")
    if nodes < 8:
        raise GridError("need at least 8 nodes per axis across Omega")
    if collar < 0:
        raise GridError("collar must be nonnegative")
    om = _as_box(omega, dimension, "omega")
    ref = _as_box(refuge, dimension, "refuge")
    hole_boxes = tuple(_as_box(hb, dimension, "hole") for hb in holes)
    if not _box_within(ref, om):
        raise GridError("refuge box must lie strictly inside omega")
    for hb in hole_boxes:
        if not _box_within(hb, om):
            raise GridError("holes must lie strictly inside omega")
        if _boxes_overlap(hb, ref):
            raise GridError("holes must not meet the refuge")

    h = (om[0][1] - om[0][0]) / (nodes - 1)
    counts = []
    for lo, hi in om:
        cells = (hi - lo) / h
        if abs(cells - round(cells)) > 1e-8 * max(1.0, cells):
            raise GridError("omega side lengths must be integer multiples of h")
        counts.append(int(round(cells)) + 1 + 2 * collar)
    axes = [lo - collar * h + h * np.arange(n) for (lo, _), n in zip(om, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)

    tol = _SNAP * h
    interior = _strictly_inside(coords, om, tol)
    for hb in hole_boxes:
        interior &= ~_closed_inside(coords, hb, tol)
    refuge_mask = _strictly_inside(coords, ref, tol) & interior

    if not refuge_mask.any():
        raise GridError("resolution too coarse: refuge contains no node")
    if not (interior & ~refuge_mask).any():
        raise GridError("resolution too coarse: no interior node outside the refuge")

    for a in (coords, interior, refuge_mask):
        a.setflags(write=False)
    return Grid(
        dimension=dimension,
        h=float(h),
        shape=tuple(counts),
        coords=coords,
        interior=interior,
        refuge=refuge_mask,
        omega=om,
        refuge_box=ref,
        holes=hole_boxes,
    )


def build_absorption(grid: Grid, amplitude: float) -> np.ndarray:
    """Two-level absorption: ``amplitude`` on Omega minus the refuge, 0 elsewhere."""
    if not amplitude > 0:
        raise ValueError("absorption amplitude must be positive")
    b = grid.zeros()
    b[grid.interior & ~grid.refuge] = amplitude
    return b


def distance_profile(grid: Grid, target_mask: np.ndarray, exponent: float) -> np.ndarray:
    """``d(x, M^c)^exponent`` on ``target_mask``, zero elsewhere.

    Distances are node-to-node: the minimum over grid nodes outside the mask.
    """
    target_mask = np.asarray(target_mask, dtype=bool)
    if not target_mask.any():
        raise ValueError("target mask is empty")
    outside = ~target_mask
    out = grid.zeros()
    if not outside.any():
        raise ValueError("target mask covers every node; no complement to measure from")
    tree = cKDTree(grid.coords[outside])
    dist, _ = tree.query(grid.coords[target_mask])
    out[target_mask] = dist**exponent
    return out
