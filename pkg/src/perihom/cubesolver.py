"""Discrete Dirichlet problems on large cubes and the lattice statistics
used by the regularity experiments.

The cube Q_R (side R, centered) carries the same Q1 discretization as the
unit cell, with the coefficient tiled periodically; R is an integer and the
per-cell resolution matches the hierarchy grid, so unit cells, lattice
shifts and sub-cube norms all align exactly with grid nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._stencil import BoxGrid, BoxOperator, SolverError
from .cell import _tile_cells
from .fields import GridField
from .hetpoly import BoxSample
from .polynomials import Polynomial, eval_poly_grid
from .tensors import SymTensor, multi_indices, multinomial

__all__ = [
    "CubeProblem",
    "CubeSolution",
    "SolverError",
    "solve_dirichlet",
    "boundary_from_polynomial",
    "boundary_random",
    "lattice_difference_norm",
    "lattice_difference_tensor",
    "lp_norm",
    "dirichlet_energy",
]


def make_cube_grid(gridfield: GridField, radius: int) -> BoxGrid:
    if radius <= 0 or radius != int(radius):
        raise ValueError("cube radius must be a positive integer")
    n = gridfield.resolution
    if (radius * n) % 2:
        raise ValueError("radius * resolution must be even so the cube is centered on nodes")
    half = radius / 2.0
    return BoxGrid(gridfield.dim, (-half,) * gridfield.dim,
                   (radius * n,) * gridfield.dim, 1.0 / n)


@dataclass
class CubeProblem:
    """Dirichlet problem on Q_R with periodically tiled coefficient."""

    gridfield: GridField
    radius: int
    boundary: np.ndarray  # full node array; only boundary entries are used
    rhs: np.ndarray | None = None  # nodal source, default 0
    tolerance: float = 1e-10
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = make_cube_grid(self.gridfield, self.radius)
        if self.boundary.shape != self.grid.node_shape:
            raise ValueError(f"boundary array shape {self.boundary.shape} != "
                             f"{self.grid.node_shape}")
        if self.rhs is not None and self.rhs.shape != self.grid.node_shape:
            raise ValueError("rhs shape does not match the cube grid")
        self._op = None

    def operator(self) -> BoxOperator:
        if self._op is None:
            tiled = _tile_cells(self.gridfield.values, self.grid, self.gridfield.resolution)
            self._op = BoxOperator(self.grid, tiled, tolerance=self.tolerance,
                                   symmetric=self.gridfield.is_symmetric())
        return self._op


@dataclass
class CubeSolution:
    sample: BoxSample
    residual: float
    iterations: int
    problem: CubeProblem

    @property
    def values(self):
        return self.sample.values

    @property
    def grid(self):
        return self.sample.grid


def solve_dirichlet(problem: CubeProblem) -> CubeSolution:
    op = problem.operator()
    load = None
    if problem.rhs is not None:
        load = problem.rhs * problem.grid.h ** problem.grid.dim
    u, resid, iters = op.solve(problem.boundary, load)
    return CubeSolution(BoxSample(problem.grid, u), resid, iters, problem)


# ---------------------------------------------------------------------------
# boundary data gallery


def _boundary_mask(grid: BoxGrid):
    mask = np.zeros(grid.node_shape, bool)
    for t in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[t] = 0
        mask[tuple(sl)] = True
        sl[t] = -1
        mask[tuple(sl)] = True
    return mask


def boundary_from_polynomial(gridfield: GridField, radius: int, p: Polynomial) -> np.ndarray:
    grid = make_cube_grid(gridfield, radius)
    vals = eval_poly_grid(p, grid.node_axes())
    out = np.zeros(grid.node_shape)
    mask = _boundary_mask(grid)
    out[mask] = vals[mask]
    return out


def boundary_random(gridfield: GridField, radius: int, seed) -> np.ndarray:
    """Seeded unit-normal values on the boundary nodes, smoothed by one
    neighbor-averaging sweep along the boundary."""
    grid = make_cube_grid(gridfield, radius)
    mask = _boundary_mask(grid)
    rng = np.random.default_rng(seed)
    out = np.zeros(grid.node_shape)
    out[mask] = rng.standard_normal(int(mask.sum()))
    smoothed = np.zeros_like(out)
    counts = np.zeros_like(out)
    for t in range(grid.dim):
        for s in (-1, 1):
            shifted = np.roll(out, s, axis=t)
            valid = np.roll(mask, s, axis=t) & mask
            smoothed[valid] += shifted[valid]
            counts[valid] += 1
    with np.errstate(invalid="ignore"):
        avg = np.where(counts > 0, smoothed / np.maximum(counts, 1), 0.0)
    out[mask] = 0.5 * out[mask] + 0.5 * avg[mask]
    return out


# ---------------------------------------------------------------------------
# lattice statistics


def _node_rel_indices(grid: BoxGrid):
    """Integer node coordinates relative to the box center (center on a node)."""
    out = []
    for t in range(grid.dim):
        n = grid.ncells[t]
        center = round(-grid.lo[t] / grid.h)
        out.append(np.arange(n + 1) - center)
    return out


def lattice_difference_tensor(sample: BoxSample, m: int) -> np.ndarray:
    """Nodal field of order-m integer-shift forward differences over the
    center unit cube (closed, trapezoid-ready); shape (ncomp, nodes of Q_1)."""
    grid = sample.grid
    d = grid.dim
    n = sample.resolution
    rel = _node_rel_indices(grid)
    sel = []
    for t in range(d):
        inside = np.nonzero(np.abs(rel[t]) * 2 <= n)[0]
        if inside.size == 0:
            raise ValueError("sample box too small for the center unit cube")
        sel.append(inside)
    idx = multi_indices(d, m)
    comps = []
    from itertools import product
    for alpha in idx:
        acc = None
        for j in product(*[range(a + 1) for a in alpha]):
            sign = (-1) ** (sum(alpha) - sum(j))
            weight = sign * math.prod(math.comb(a, ji) for a, ji in zip(alpha, j))
            pick = tuple(sel[t] + j[t] * n for t in range(d))
            for t in range(d):
                if pick[t].max() >= grid.ncells[t] + 1:
                    raise ValueError(f"cube radius too small for {m} unit shifts")
            block = sample.values[np.ix_(*pick)]
            acc = weight * block if acc is None else acc + weight * block
        comps.append(acc)
    return np.stack(comps)


def _trapezoid_weights(npoints_per_axis, d):
    total = None
    for npts in npoints_per_axis[:d]:
        w = np.ones(npts)
        w[0] = w[-1] = 0.5
        total = w if total is None else np.multiply.outer(total, w)
    return total


def lattice_difference_norm(sol, m: int) -> float:
    """L2(Q_1) norm of the order-m difference tensor of the solution, with the
    multinomial tensor weights and trapezoid quadrature over the unit cube."""
    sample = sol.sample if isinstance(sol, CubeSolution) else sol
    comps = lattice_difference_tensor(sample, m)
    d = sample.grid.dim
    idx = multi_indices(d, m)
    sq = sum(multinomial(m, alpha) * comps[i] ** 2 for i, alpha in enumerate(idx))
    w = _trapezoid_weights(sq.shape, d)
    return float(np.sqrt(np.sum(w * sq) / np.sum(w)))


def lp_norm(sample, region, p: float = 2.0) -> float:
    """Volume-normalized L^p norm over a centered sub-cube or inscribed ball.

    ``region`` is ("cube", r) or ("ball", r) where r is the side of Q_r; the
    ball is the one inscribed in Q_r (diameter r).  Membership is decided at
    nodes in exact integer arithmetic.
    """
    if isinstance(sample, CubeSolution):
        sample = sample.sample
    kind, r = region
    grid = sample.grid
    rel = _node_rel_indices(grid)
    n = sample.resolution
    half_units = r * n / 2.0
    if kind == "cube":
        axes_idx = [np.nonzero(np.abs(rel[t]) <= half_units)[0] for t in range(grid.dim)]
        if any(ix.size == 0 for ix in axes_idx):
            raise ValueError(f"region {region} contains no nodes")
        sub = np.abs(sample.values[np.ix_(*axes_idx)]) ** p
        w = _trapezoid_weights(sub.shape, grid.dim)
        return float((np.sum(w * sub) / np.sum(w)) ** (1.0 / p))
    elif kind == "ball":
        grids = np.meshgrid(*rel, indexing="ij")
        rad2 = sum(g.astype(float) ** 2 for g in grids)
        member = rad2 < half_units ** 2
        if not member.any():
            raise ValueError(f"region {region} contains no nodes")
        vals = np.abs(sample.values[member]) ** p
    else:
        raise ValueError(f"unknown region kind '{kind}'")
    return float(np.mean(vals) ** (1.0 / p))


def dirichlet_energy(sol: CubeSolution) -> float:
    op = sol.problem.operator()
    u = sol.values
    return 0.5 * float(np.sum(u * op.apply(u)))
