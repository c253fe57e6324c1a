"""Heterogeneous polynomials: corrected polynomials attached to a hierarchy.

A heterogeneous polynomial is determined by its driving polynomial q and a
corrector hierarchy:  ``psi(x) = sum_k contract(grad^k q(x), phi^(k)(x))``.
The coordinate system on this space is the family of *intrinsic differences*
``D^k psihat(0)``: forward lattice differences of unit-cell averages.  All
cube and lattice geometry is aligned with the hierarchy grid (integer cube
radii, even per-cell resolution), so the cell averages are exact sums of
nodal trapezoid weights and no interpolation of correctors is ever needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._stencil import BoxGrid
from .cell import CorrectorHierarchy, _tile_nodes, hierarchy_box_residual
from .polynomials import (
    HomogenizedTensorSequence,
    Polynomial,
    apply_macroscopic,
    derivative_poly,
    eval_poly_grid,
    harmonic_basis,
    harmonic_twist,
    invert_macroscopic,
)
from .tensors import SymTensor, multi_indices, multinomial

__all__ = [
    "HetPolynomial",
    "BoxSample",
    "LatticeFunction",
    "evaluate_het",
    "evaluate_het_box",
    "cube_averages",
    "intrinsic_differences",
    "interpolate_het",
    "fit_het",
    "basis_harmonic_het",
    "solve_het_rhs",
]


@dataclass
class BoxSample:
    """Nodal values of a function on an axis-aligned grid-conforming box."""

    grid: BoxGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.node_shape:
            raise ValueError(f"values shape {self.values.shape} != {self.grid.node_shape}")

    @property
    def resolution(self):
        return round(1.0 / self.grid.h)


@dataclass
class LatticeFunction:
    """Unit-cell averages of a carrier function on an integer lattice window."""

    dim: int
    resolution: int
    values: dict  # z (tuple of ints) -> float

    def __call__(self, z):
        return self.values[tuple(z)]


@dataclass
class HetPolynomial:
    """Element of the corrected-polynomial space attached to a hierarchy."""

    hierarchy: CorrectorHierarchy
    q: Polynomial

    def __post_init__(self):
        if self.q.dim != self.hierarchy.dim:
            raise ValueError("polynomial dimension does not match the hierarchy")
        if self.q.degree > self.hierarchy.order:
            raise ValueError(
                f"degree {self.q.degree} exceeds hierarchy order {self.hierarchy.order}")

    @property
    def degree(self):
        return self.q.degree

    def macroscopic_residual(self) -> float:
        """Coefficient norm of the macroscopic operator applied to q; zero on
        the harmonic subspace."""
        return apply_macroscopic(self.q, self.hierarchy.tensors).coeff_norm()

    def __add__(self, other):
        self._check(other)
        return HetPolynomial(self.hierarchy, self.q + other.q)

    def __sub__(self, other):
        self._check(other)
        return HetPolynomial(self.hierarchy, self.q - other.q)

    def __mul__(self, scalar):
        return HetPolynomial(self.hierarchy, self.q * scalar)

    __rmul__ = __mul__

    def _check(self, other):
        if other.hierarchy is not self.hierarchy and \
                other.hierarchy.fingerprint != self.hierarchy.fingerprint:
            raise ValueError("heterogeneous polynomials belong to different hierarchies")


def _aligned_box(h: CorrectorHierarchy, lo, hi) -> BoxGrid:
    n = h.resolution
    d = h.dim
    lo = tuple(float(x) for x in lo)
    ncells = tuple(round((b - a) * n) for a, b in zip(lo, hi))
    for a in lo:
        if round(a * n) != a * n:
            raise ValueError(f"box corner {a} is not aligned with the grid (N={n})")
    return BoxGrid(d, lo, ncells, 1.0 / n)


def evaluate_het_box(psi: HetPolynomial, box: BoxGrid) -> BoxSample:
    """Nodal values of psi on the box, correctors extended periodically."""
    h = psi.hierarchy
    d, n = h.dim, h.resolution
    axes = box.node_axes()
    vals = np.zeros(box.node_shape)
    for k in range(psi.q.degree + 1):
        for i, alpha in enumerate(multi_indices(d, k)):
            dq = derivative_poly(psi.q, alpha)
            if dq.is_zero():
                continue
            comp = _tile_nodes(h.phi[k][i], box, n)
            vals += multinomial(k, alpha) * eval_poly_grid(dq, axes) * comp
    return BoxSample(box, vals)


def evaluate_het(psi: HetPolynomial, radius: int) -> BoxSample:
    """Sample psi on the centered cube of side ``radius`` at the hierarchy grid."""
    if radius <= 0 or radius != int(radius):
        raise ValueError("cube radius must be a positive integer")
    h = psi.hierarchy
    half = radius / 2.0
    if (h.resolution * radius) % 2:
        raise ValueError("radius * resolution must be even for grid alignment")
    box = _aligned_box(h, (-half,) * h.dim, (half,) * h.dim)
    return evaluate_het_box(psi, box)


def cube_averages(sample: BoxSample, window) -> LatticeFunction:
    """Exact unit-cell averages of the multilinear interpolant at lattice points.

    ``window`` is an iterable of integer lattice vectors z; each z + Q_1 must
    be tiled exactly by grid cells (requires even per-cell resolution).
    """
    grid = sample.grid
    n = sample.resolution
    d = grid.dim
    if n % 2:
        raise ValueError("cell averages need an even per-cell resolution")
    w = np.full(n + 1, 1.0 / n)
    w[0] *= 0.5
    w[-1] *= 0.5
    values = {}
    for z in window:
        z = tuple(int(t) for t in z)
        v = sample.values
        ok = True
        for t in range(d):
            start = round((z[t] - 0.5 - grid.lo[t]) * n)
            if start < 0 or start + n > grid.ncells[t]:
                ok = False
                break
            v = np.tensordot(w, v[start:start + n + 1], axes=([0], [0]))
        if not ok:
            raise ValueError(f"unit cell at {z} does not fit inside the sample box")
        values[z] = float(v)
    return LatticeFunction(d, n, values)


def _forward_difference(lattice: LatticeFunction, alpha) -> float:
    total = 0.0
    ranges = [range(a + 1) for a in alpha]
    from itertools import product
    for j in product(*ranges):
        sign = (-1) ** (sum(alpha) - sum(j))
        weight = 1
        for a, ji in zip(alpha, j):
            weight *= math.comb(a, ji)
        total += sign * weight * lattice.values[tuple(j)]
    return total


def _difference_window(d, k):
    from itertools import product
    return [z for z in product(range(k + 1), repeat=d) if sum(z) <= k]


def intrinsic_differences(u, k: int) -> SymTensor:
    """Order-k tensor of forward lattice differences of unit-cell averages at 0.

    ``u`` is a BoxSample (e.g. a cube solution) or a HetPolynomial; forward
    shifts reach up to k cells per axis, so the sample must cover
    ``[-1/2, k + 1/2]^d``.
    """
    if isinstance(u, HetPolynomial):
        box = _aligned_box(u.hierarchy, (-1.0,) * u.hierarchy.dim,
                           (k + 1.0,) * u.hierarchy.dim)
        u = evaluate_het_box(u, box)
    d = u.grid.dim
    lattice = cube_averages(u, _difference_window(d, k))
    t = SymTensor(d, k)
    for alpha in multi_indices(d, k):
        t.coeffs[alpha] = _forward_difference(lattice, alpha)
    return t


def interpolate_het(h: CorrectorHierarchy, tensors) -> HetPolynomial:
    """The unique element whose intrinsic differences at 0 match ``tensors``.

    Top-down: the order-m difference tensor pins the top homogeneous layer of
    q exactly (corrector terms of the lift are killed by D^m); the lift's
    lower-order differences are then measured numerically and the deficit is
    passed down one order.
    """
    m = len(tensors) - 1
    if m > h.order:
        raise ValueError(f"requested degree {m} exceeds hierarchy order {h.order}")
    d = h.dim
    for k, t in enumerate(tensors):
        if t.order != k or t.dim != d:
            raise ValueError(f"tensor {k} has order {t.order}, dim {t.dim}")
    deficits = [SymTensor(d, k, dict(t.coeffs)) for k, t in enumerate(tensors)]
    q_total = Polynomial.zero(d)
    for level in range(m, -1, -1):
        layer = Polynomial(d, {
            alpha: deficits[level].coeffs[alpha] / multi_factorial_int(alpha)
            for alpha in multi_indices(d, level)
            if deficits[level].coeffs[alpha] != 0})
        q_total = q_total + layer
        if level == 0 or layer.is_zero():
            continue
        zeta = HetPolynomial(h, layer)
        box = _aligned_box(h, (-1.0,) * d, (level,) * d)
        sample = evaluate_het_box(zeta, box)
        lattice = cube_averages(sample, _difference_window(d, level - 1))
        for k in range(level):
            for alpha in multi_indices(d, k):
                deficits[k].coeffs[alpha] -= _forward_difference(lattice, alpha)
    return HetPolynomial(h, q_total)


def multi_factorial_int(alpha):
    out = 1
    for a in alpha:
        out *= math.factorial(a)
    return out


def fit_het(h: CorrectorHierarchy, u: BoxSample, m: int) -> HetPolynomial:
    """Degree-m heterogeneous polynomial sharing the intrinsic differences of u."""
    tensors = [intrinsic_differences(u, k) for k in range(m + 1)]
    return interpolate_het(h, tensors)


def basis_harmonic_het(h: CorrectorHierarchy, m: int):
    """Basis of the degree-<= m harmonic subspace: the homogenized-harmonic
    polynomial basis, twisted into the kernel of the full macroscopic
    operator, then lifted.  Ordered by degree, then the basis convention of
    :func:`perihom.polynomials.harmonic_basis`."""
    if m > h.order:
        raise ValueError(f"degree {m} exceeds hierarchy order {h.order}")
    out = []
    for p in harmonic_basis(h.dim, m, h.tensors.tensor(2)):
        out.append(HetPolynomial(h, harmonic_twist(p, h.tensors)))
    return out


def solve_het_rhs(h: CorrectorHierarchy, p: Polynomial) -> HetPolynomial:
    """Heterogeneous solution of ``-div(a grad psi) = p`` with vanishing
    zeroth and first intrinsic differences at the origin."""
    if p.degree + 2 > h.order:
        raise ValueError(
            f"need hierarchy order >= {p.degree + 2}, have {h.order}")
    q = invert_macroscopic(p, h.tensors)
    psi = HetPolynomial(h, q)
    d = h.dim
    m0 = intrinsic_differences(psi, 0)
    m1 = intrinsic_differences(psi, 1)
    chi = interpolate_het(h, [m0, m1])
    return HetPolynomial(h, q - chi.q)


def het_weak_residual(psi: HetPolynomial, rhs: Polynomial | None = None,
                      box_radius: int = 2) -> float:
    """Weak residual of ``-div(a grad psi) = rhs`` (default: the consistency
    right-hand side ``-A q``) on a centered box; absolute L2 density norm."""
    if rhs is None:
        rhs = -apply_macroscopic(psi.q, psi.hierarchy.tensors)
    return hierarchy_box_residual(psi.hierarchy, psi.q, rhs, box_radius)
