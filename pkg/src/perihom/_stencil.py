"""Shared discretization core: multilinear elements on uniform grids.

Conforming Q1 elements on a uniform grid with the coefficient frozen at each
cell midpoint.  Unknowns live at grid nodes; each cell couples its 2^d corner
nodes, so the assembled operator has (3^d)-point stencils, stored as one
weight array per neighbor offset.

The same element tables also provide *polynomial-weighted* weak actions

    W(f, eps)[j] = sum_cells  integral_cell grad(hat_j) . a grad(I_h f * x^eps)

with the cell integrals computed exactly (the integrands are per-cell
polynomials).  These exact actions are what make the corrector induction
cancel to solver precision instead of discretization order.

Two linear solvers are provided: a direct sparse factorization (default at
desk scale; for the singular periodic problem a one-row bordering enforces
the zero-mean constraint) and, for large Dirichlet cubes, conjugate gradients
preconditioned by a geometric multigrid V-cycle on the structured grid.
All code paths are deterministic for fixed inputs.
"""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import product

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["SolverError", "TorusOperator", "BoxOperator", "weak_action", "mass_action"]


class SolverError(RuntimeError):
    """Linear solve failed (non-convergence or inconsistent right-hand side)."""


# ---------------------------------------------------------------------------
# exact 1-D integrals of hat-function products with monomial weights


def _poly_mul(p, q):
    out = [0.0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return tuple(out)


def _poly_deriv(p):
    return tuple((i + 1) * c for i, c in enumerate(p[1:])) or (0.0,)


def _poly_integral(p, h):
    return sum(c * h ** (i + 1) / (i + 1) for i, c in enumerate(p))


def _axis_integral(h, s_test, da, s_trial, k, db):
    """integral_0^h [w_s or w_s'] * [d/dxi]^db (w_strial * xi^k) dxi."""
    w = ((1.0, -1.0 / h), (0.0, 1.0 / h))
    test = _poly_deriv(w[s_test]) if da else w[s_test]
    trial = (0.0,) * k + w[s_trial]
    if db:
        trial = _poly_deriv(trial)
    return _poly_integral(_poly_mul(test, trial), h)


def _loc_nodes(d):
    return tuple(product((0, 1), repeat=d))


@lru_cache(maxsize=None)
def stiff_table(d, h, delta):
    """K[a, b, si, sj] = integral_cell  d_a(phi_si) * d_b(phi_sj * xi^delta)."""
    nodes = _loc_nodes(d)
    out = np.zeros((d, d, len(nodes), len(nodes)))
    for a in range(d):
        for b in range(d):
            for i, s in enumerate(nodes):
                for j, sp_ in enumerate(nodes):
                    v = 1.0
                    for t in range(d):
                        v *= _axis_integral(h, s[t], t == a, sp_[t], delta[t], t == b)
                    out[a, b, i, j] = v
    return out


@lru_cache(maxsize=None)
def mass_table(d, h, delta):
    """M[si, sj] = integral_cell  phi_si * phi_sj * xi^delta."""
    nodes = _loc_nodes(d)
    out = np.zeros((len(nodes), len(nodes)))
    for i, s in enumerate(nodes):
        for j, sp_ in enumerate(nodes):
            v = 1.0
            for t in range(d):
                v *= _axis_integral(h, s[t], False, sp_[t], delta[t], False)
            out[i, j] = v
    return out


def _sub_indices(eps):
    """All delta <= eps componentwise."""
    ranges = [range(e + 1) for e in eps]
    return [tuple(t) for t in product(*ranges)]


def _binom_multi(eps, delta):
    out = 1
    for e, dd in zip(eps, delta):
        out *= math.comb(e, dd)
    return out


# ---------------------------------------------------------------------------
# gather / scatter between cell arrays and node arrays


def _gather_periodic(f, s):
    for axis, si in enumerate(s):
        if si:
            f = np.roll(f, -si, axis=axis)
    return f


def _scatter_periodic(acc, s):
    for axis, si in enumerate(s):
        if si:
            acc = np.roll(acc, si, axis=axis)
    return acc


def _gather_box(fnodes, s, ncells):
    sl = tuple(slice(si, si + n) for si, n in zip(s, ncells))
    return fnodes[sl]


def _scatter_box(out, acc, s, ncells):
    sl = tuple(slice(si, si + n) for si, n in zip(s, ncells))
    out[sl] += acc


# ---------------------------------------------------------------------------
# grids


class _GridBase:
    """Uniform grid: either the periodic unit torus or a node-closed box."""

    def cell_origin_axes(self):
        raise NotImplementedError


class TorusGrid(_GridBase):
    def __init__(self, dim, resolution):
        self.dim = dim
        self.n = resolution
        self.h = 1.0 / resolution
        self.periodic = True
        self.ncells = (resolution,) * dim
        self.node_shape = (resolution,) * dim

    def cell_origin_axes(self):
        return [np.arange(self.n) * self.h] * self.dim


class BoxGrid(_GridBase):
    """Nodes lo + i*h, i in [0, ncells]^d; cells between consecutive nodes."""

    def __init__(self, dim, lo, ncells, h):
        self.dim = dim
        self.lo = tuple(float(x) for x in lo)
        self.ncells = tuple(int(n) for n in ncells)
        self.h = float(h)
        self.periodic = False
        self.node_shape = tuple(n + 1 for n in self.ncells)

    def cell_origin_axes(self):
        return [self.lo[t] + np.arange(self.ncells[t]) * self.h for t in range(self.dim)]

    def node_axes(self):
        return [self.lo[t] + np.arange(self.ncells[t] + 1) * self.h for t in range(self.dim)]


# ---------------------------------------------------------------------------
# exact weak actions with polynomial weights


def _accumulate(grid, avals, f, eps, tables, pair_axes):
    """Core loop shared by weak_action (stiffness) and mass_action."""
    d = grid.dim
    nodes = _loc_nodes(d)
    out = np.zeros(grid.node_shape)
    axes = grid.cell_origin_axes()
    cell_shape = grid.ncells
    acc = {s: np.zeros(cell_shape) for s in nodes}
    for jn, sp_ in enumerate(nodes):
        if grid.periodic:
            fsp = _gather_periodic(f, sp_)
        else:
            fsp = _gather_box(f, sp_, cell_shape)
        for delta in _sub_indices(eps):
            xfac = float(_binom_multi(eps, delta))
            pw = None
            for t in range(d):
                k = eps[t] - delta[t]
                if k:
                    ax = axes[t] ** k
                    sl = [None] * d
                    sl[t] = slice(None)
                    pw = ax[tuple(sl)] if pw is None else pw * ax[tuple(sl)]
            table = tables(delta)
            if pair_axes:
                for a in range(d):
                    for b in range(d):
                        coef = avals[..., a, b] * fsp
                        if pw is not None:
                            coef = coef * pw
                        if xfac != 1.0:
                            coef = coef * xfac
                        col = table[a, b, :, jn]
                        for inode, kval in enumerate(col):
                            if kval:
                                acc[nodes[inode]] += kval * coef
            else:
                coef = fsp if pw is None else fsp * pw
                if xfac != 1.0:
                    coef = coef * xfac
                col = table[:, jn]
                for inode, kval in enumerate(col):
                    if kval:
                        acc[nodes[inode]] += kval * coef
    for s in nodes:
        if grid.periodic:
            out += _scatter_periodic(acc[s], s)
        else:
            _scatter_box(out, acc[s], s, cell_shape)
    return out


def weak_action(grid, avals, f, eps):
    """W(f, eps)[j]: exact weak action of ``-div(a grad(I_h f * x^eps))`` tested
    against every nodal hat (without the minus sign: this returns the bilinear
    form values ``B(I_h f * x^eps, hat_j)``)."""
    d = grid.dim
    return _accumulate(grid, avals, f, tuple(eps),
                       lambda delta: stiff_table(d, grid.h, delta), True)


def mass_action(grid, f, eps):
    """``integral (I_h f) * x^eps * hat_j`` for every nodal hat."""
    d = grid.dim
    return _accumulate(grid, None, f, tuple(eps),
                       lambda delta: mass_table(d, grid.h, delta), False)


# ---------------------------------------------------------------------------
# assembled stencil operators


def _stencil_weights(grid, avals):
    """Offset -> node-array of couplings; (A u)[n] = sum_o w_o[n] u[n + o]."""
    d = grid.dim
    nodes = _loc_nodes(d)
    table = stiff_table(d, grid.h, (0,) * d)
    weights = {}
    cell_w = {}
    for i, s in enumerate(nodes):
        for j, sp_ in enumerate(nodes):
            w = np.zeros(grid.ncells)
            for a in range(d):
                for b in range(d):
                    kval = table[a, b, i, j]
                    if kval:
                        w = w + kval * avals[..., a, b]
            cell_w[(s, sp_)] = w
    offsets = set()
    for s in nodes:
        for sp_ in nodes:
            offsets.add(tuple(b - a for a, b in zip(s, sp_)))
    for o in sorted(offsets):
        acc = np.zeros(grid.node_shape)
        for s in nodes:
            sp_ = tuple(a + b for a, b in zip(s, o))
            if any(x < 0 or x > 1 for x in sp_):
                continue
            w = cell_w[(s, sp_)]
            if grid.periodic:
                acc += _scatter_periodic(w, s)
            else:
                _scatter_box(acc, w, s, grid.ncells)
        weights[o] = acc
    return weights


def _shift_zero(u, o):
    """u shifted so out[n] = u[n + o], zero outside."""
    out = np.zeros_like(u)
    src = []
    dst = []
    for axis, oi in enumerate(o):
        n = u.shape[axis]
        dst.append(slice(max(0, -oi), n - max(0, oi)))
        src.append(slice(max(0, oi), n + min(0, oi)))
    out[tuple(dst)] = u[tuple(src)]
    return out


def apply_weights(weights, u, periodic):
    out = np.zeros_like(u)
    for o, w in weights.items():
        if all(x == 0 for x in o):
            out += w * u
        elif periodic:
            shifted = u
            for axis, oi in enumerate(o):
                if oi:
                    shifted = np.roll(shifted, -oi, axis=axis)
            out += w * shifted
        else:
            out += w * _shift_zero(u, o)
    return out


def _assemble_sparse(weights, node_shape, periodic, mask=None):
    """CSR matrix over the (masked) nodes; mask selects the unknowns."""
    n_total = int(np.prod(node_shape))
    if mask is None:
        index = np.arange(n_total).reshape(node_shape)
        keep = np.ones(node_shape, bool)
    else:
        keep = mask
        index = -np.ones(node_shape, dtype=np.int64)
        index[keep] = np.arange(int(keep.sum()))
    rows, cols, vals = [], [], []
    for o, w in weights.items():
        if periodic:
            neigh = index
            for axis, oi in enumerate(o):
                if oi:
                    neigh = np.roll(neigh, -oi, axis=axis)
            valid = keep & (w != 0)
            nb = neigh
        else:
            nb = _shift_zero(index, o) if mask is None else _shift_zero(index, o)
            inside = _shift_zero(np.ones(node_shape, bool), o)
            valid = keep & inside & (w != 0)
            if mask is not None:
                valid &= _shift_zero(keep, o)
        rows.append(index[valid])
        cols.append(nb[valid])
        vals.append(w[valid])
    nun = int(keep.sum())
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nun, nun))
    return mat.tocsr()


class TorusOperator:
    """Periodic stiffness operator on the unit torus for a GridField sample."""

    def __init__(self, gridfield, tolerance=1e-10):
        self.grid = TorusGrid(gridfield.dim, gridfield.resolution)
        self.avals = gridfield.values
        self.tolerance = tolerance
        self.weights = _stencil_weights(self.grid, self.avals)
        self._factor = None

    @property
    def node_count(self):
        return int(np.prod(self.grid.node_shape))

    def apply(self, u):
        return apply_weights(self.weights, u, True)

    def _bordered_factor(self):
        if self._factor is None:
            a = _assemble_sparse(self.weights, self.grid.node_shape, True)
            n = a.shape[0]
            e = np.full((n, 1), self.grid.h ** self.grid.dim)
            bordered = sp.bmat([[a, e], [e.T, None]], format="csc")
            self._factor = spla.splu(bordered)
        return self._factor

    def solve_zero_mean(self, load, scale_hint=None):
        """Solve B(u, hat_j) = load_j with zero-mean u; load must sum to ~0.

        The one-row bordering pins the constant null space; the solve is a
        direct sparse factorization, reused across right-hand sides.
        ``scale_hint`` gives the natural magnitude of the assembly so that
        right-hand sides which are pure roundoff are solved by u = 0 instead
        of amplifying noise.
        """
        b = np.asarray(load, dtype=float).ravel()
        bmax = float(np.max(np.abs(b)))
        if bmax == 0.0 or (scale_hint is not None and bmax <= 1e-13 * scale_hint):
            return np.zeros(self.grid.node_shape), 0.0
        denom = max(bmax * b.size ** 0.5, scale_hint or 0.0)
        imbalance = abs(float(b.sum())) / denom
        if imbalance > 1e-6:
            raise SolverError(
                f"right-hand side has nonzero mean (relative imbalance {imbalance:.2e}); "
                "the weak problem on the torus is not solvable")
        b = b - b.mean()
        lu = self._bordered_factor()
        x = lu.solve(np.concatenate([b, [0.0]]))
        u = x[:-1].reshape(self.grid.node_shape)
        u = u - u.mean()
        r = b - self.apply(u).ravel()
        r -= r.mean()
        resid = float(np.linalg.norm(r) / np.linalg.norm(b))
        if resid > 100 * self.tolerance:
            raise SolverError(f"torus solve residual {resid:.2e} exceeds tolerance")
        return u, resid


# ---------------------------------------------------------------------------
# Dirichlet boxes: direct for small systems, multigrid-PCG for large ones

_DIRECT_LIMIT = 300_000


class _MGLevel:
    def __init__(self, grid, avals):
        self.grid = grid
        self.avals = avals
        self.weights = _stencil_weights(grid, avals)
        diag = self.weights[(0,) * grid.dim]
        self.inv_diag = np.where(diag > 0, 1.0 / np.where(diag == 0, 1.0, diag), 0.0)
        self.interior = np.zeros(grid.node_shape, bool)
        self.interior[tuple(slice(1, -1) for _ in range(grid.dim))] = True
        self.inv_diag[~self.interior] = 0.0
        self.coarse = None
        self.coarse_lu = None

    def apply(self, u):
        return apply_weights(self.weights, u, False)


def _coarsen_cells(avals, d):
    out = avals
    for axis in range(d):
        sl0 = [slice(None)] * out.ndim
        sl1 = [slice(None)] * out.ndim
        sl0[axis] = slice(0, None, 2)
        sl1[axis] = slice(1, None, 2)
        out = 0.5 * (out[tuple(sl0)] + out[tuple(sl1)])
    return out


def _prolong(coarse, fine_shape):
    """Multilinear interpolation from the coarse node grid (2:1 per axis)."""
    out = coarse
    for axis in range(coarse.ndim):
        n_f = fine_shape[axis]
        shape = list(out.shape)
        shape[axis] = n_f
        new = np.zeros(shape)
        sl_even = [slice(None)] * out.ndim
        sl_even[axis] = slice(0, None, 2)
        new[tuple(sl_even)] = out
        sl_odd = [slice(None)] * out.ndim
        sl_odd[axis] = slice(1, None, 2)
        sl_lo = [slice(None)] * out.ndim
        sl_lo[axis] = slice(0, -1)
        sl_hi = [slice(None)] * out.ndim
        sl_hi[axis] = slice(1, None)
        new[tuple(sl_odd)] = 0.5 * (out[tuple(sl_lo)] + out[tuple(sl_hi)])
        out = new
    return out


def _restrict(fine):
    """Adjoint of multilinear interpolation (no volume scaling: residuals are
    load functionals, and the coarse operator is rediscretized at its own h)."""
    out = fine
    for axis in range(fine.ndim):
        n_c = (fine.shape[axis] - 1) // 2 + 1
        shape = list(out.shape)
        shape[axis] = n_c
        new = np.zeros(shape)
        sl_c = [slice(None)] * out.ndim
        sl_c[axis] = slice(1, -1)
        sl_even = [slice(None)] * out.ndim
        sl_even[axis] = slice(2, -2, 2)
        sl_lo = [slice(None)] * out.ndim
        sl_lo[axis] = slice(1, -3, 2)
        sl_hi = [slice(None)] * out.ndim
        sl_hi[axis] = slice(3, None, 2)
        new[tuple(sl_c)] = (out[tuple(sl_even)]
                            + 0.5 * (out[tuple(sl_lo)] + out[tuple(sl_hi)]))
        # boundary planes stay zero (Dirichlet correction equations)
        out = new
    return out


class BoxOperator:
    """Dirichlet operator on an axis-aligned box with periodically tiled coefficient."""

    def __init__(self, grid: BoxGrid, avals, tolerance=1e-10, symmetric=True):
        self.grid = grid
        self.avals = avals
        self.tolerance = tolerance
        self.symmetric = symmetric
        self.level = _MGLevel(grid, avals)
        self._direct_lu = None
        self._mg_chain = None

    @property
    def interior(self):
        return self.level.interior

    def apply(self, u):
        return self.level.apply(u)

    def residual(self, u_full, load):
        r = load - self.apply(u_full)
        r[~self.interior] = 0.0
        return r

    # -- direct path

    def _direct(self):
        if self._direct_lu is None:
            mat = _assemble_sparse(self.level.weights, self.grid.node_shape, False,
                                   mask=self.interior)
            self._direct_lu = spla.splu(mat.tocsc())
        return self._direct_lu

    # -- multigrid path

    def _chain(self):
        if self._mg_chain is not None:
            return self._mg_chain
        chain = [self.level]
        avals = self.avals
        grid = self.grid
        while (all(n % 2 == 0 for n in grid.ncells)
               and int(np.prod(grid.node_shape)) > 20_000
               and min(grid.ncells) >= 8):
            avals = _coarsen_cells(avals, grid.dim)
            grid = BoxGrid(grid.dim, grid.lo, tuple(n // 2 for n in grid.ncells), grid.h * 2)
            chain.append(_MGLevel(grid, avals))
        last = chain[-1]
        mat = _assemble_sparse(last.weights, last.grid.node_shape, False,
                               mask=last.interior)
        last.coarse_lu = spla.splu(mat.tocsc())
        self._mg_chain = chain
        return chain

    def _vcycle(self, chain, lvl, b):
        level = chain[lvl]
        if level.coarse_lu is not None:
            x = np.zeros(level.grid.node_shape)
            x[level.interior] = level.coarse_lu.solve(b[level.interior])
            return x
        x = np.zeros_like(b)
        omega = 0.8
        for _ in range(2):
            r = b - level.apply(x)
            x += omega * level.inv_diag * r
        r = b - level.apply(x)
        r[~level.interior] = 0.0
        xc = self._vcycle(chain, lvl + 1, _restrict(r))
        x += _prolong(xc, level.grid.node_shape)
        x[~level.interior] = 0.0
        for _ in range(2):
            r = b - level.apply(x)
            x += omega * level.inv_diag * r
        x[~level.interior] = 0.0
        return x

    def solve(self, boundary_values, load=None, max_iter=None):
        """Solve the Dirichlet problem; returns (full node array, residual, iterations)."""
        g = np.asarray(boundary_values, dtype=float)
        interior = self.interior
        u0 = g.copy()
        u0[interior] = 0.0
        full_load = np.zeros(self.grid.node_shape) if load is None else np.asarray(load, float)
        b = full_load - self.apply(u0)
        b[~interior] = 0.0
        nun = int(interior.sum())
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return u0, 0.0, 0
        if nun <= _DIRECT_LIMIT:
            lu = self._direct()
            x = np.zeros(self.grid.node_shape)
            x[interior] = lu.solve(b[interior])
            iters = 0
        else:
            x, iters = self._pcg(b, max_iter)
        u = u0 + x
        r = self.residual(u, full_load)
        resid = float(np.linalg.norm(r) / bnorm)
        if resid > 1000 * self.tolerance:
            raise SolverError(f"cube solve residual {resid:.2e} exceeds tolerance")
        return u, resid, iters

    def _pcg(self, b, max_iter=None):
        """CG on the interior unknowns with a V(2,2) multigrid preconditioner."""
        chain = self._chain()
        interior = self.interior
        if max_iter is None:
            max_iter = 50 * max(self.grid.ncells)
        x = np.zeros(self.grid.node_shape)
        r = b.copy()
        z = self._vcycle(chain, 0, r)
        p = z.copy()
        rz = float((r[interior] * z[interior]).sum())
        bnorm = float(np.linalg.norm(b[interior]))
        for it in range(1, max_iter + 1):
            ap = self.apply(p)
            ap[~interior] = 0.0
            denom = float((p[interior] * ap[interior]).sum())
            if denom <= 0:
                raise SolverError("preconditioned CG broke down (non-SPD system?)")
            alpha = rz / denom
            x += alpha * p
            r -= alpha * ap
            if float(np.linalg.norm(r[interior])) <= self.tolerance * bnorm:
                return x, it
            z = self._vcycle(chain, 0, r)
            rz_new = float((r[interior] * z[interior]).sum())
            beta = rz_new / rz
            rz = rz_new
            p = z + beta * p
        raise SolverError(f"multigrid-PCG did not converge in {max_iter} iterations")
