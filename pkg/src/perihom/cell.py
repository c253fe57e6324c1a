"""Periodic cell problems and the corrector hierarchy.

The hierarchy is built inductively, one tensor order at a time.  For each
order-m multi-index ``beta`` the right-hand side is a hybrid object: a finite
sum ``sum_gamma f_gamma(x) x^gamma`` of periodic nodal fields times monomials.
Its weak action on nodal test hats is evaluated *exactly* (cell integrals of
piecewise polynomials), and translating a test hat by a lattice vector ``z``
turns the action into a polynomial in ``z``:

    <residual, hat_{j,z}> = sum_delta  z^delta * F_delta[j].

When the lower orders have been solved exactly, every coefficient with
``delta != 0`` cancels; the code measures that cancellation (it certifies the
discretization is consistent), takes the homogenized tensor component from
the lattice-invariant part ``F_0``, and feeds its mean-free residue to the
periodic solver.  Because a single discrete calculus is used for the
right-hand sides, the solves and the later residual certificates, the
hierarchy identities hold to solver precision rather than discretization
order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._stencil import (
    BoxGrid,
    SolverError,
    TorusOperator,
    mass_action,
    weak_action,
)
from .fields import GridField
from .polynomials import HomogenizedTensorSequence, Polynomial, apply_macroscopic
from .tensors import SymTensor, multi_factorial, multi_indices, multinomial

__all__ = [
    "TorusGridFunction",
    "PeriodicPolyField",
    "CorrectorHierarchy",
    "SolverError",
    "solve_cell",
    "leibniz_expand",
    "build_hierarchy",
    "homogenized_matrix",
    "corrector_residual",
]

FORMAT_VERSION = 1


@dataclass
class TorusGridFunction:
    """Nodal sample of a periodic function on the unit torus.

    ``order=None`` means scalar values of shape (N,)*d; otherwise values carry
    a leading component axis enumerating the order-``order`` multi-indices.
    """

    dim: int
    resolution: int
    values: np.ndarray
    order: int | None = None

    def __post_init__(self):
        grid_shape = (self.resolution,) * self.dim
        if self.order is None:
            if self.values.shape != grid_shape:
                raise ValueError(f"scalar values shape {self.values.shape} != {grid_shape}")
        else:
            ncomp = len(multi_indices(self.dim, self.order))
            if self.values.shape != (ncomp,) + grid_shape:
                raise ValueError(f"tensor values shape {self.values.shape} != "
                                 f"{(ncomp,) + grid_shape}")

    def mean(self):
        axes = tuple(range(-self.dim, 0))
        return self.values.mean(axis=axes)

    def component(self, alpha):
        if self.order is None:
            raise ValueError("scalar function has no components")
        idx = multi_indices(self.dim, self.order).index(tuple(alpha))
        return self.values[idx]


def _torus_operator(g: GridField, tolerance) -> TorusOperator:
    op = getattr(g, "_torus_op", None)
    if op is None or op.tolerance != tolerance:
        op = TorusOperator(g, tolerance)
        g._torus_op = op
    return op


def solve_cell(g: GridField, rhs, tolerance: float = 1e-10) -> TorusGridFunction:
    """Zero-mean periodic u with ``div(a grad u) = rhs`` in the discrete weak sense.

    ``rhs`` is a scalar TorusGridFunction / nodal array (mass-lumped load), or
    a dict ``{"load": vector}`` carrying a ready-made weak functional.  The
    right-hand side must be mean-free to tolerance, otherwise the periodic
    problem is unsolvable and a SolverError is raised.
    """
    op = _torus_operator(g, tolerance)
    h = g.spacing
    if isinstance(rhs, dict):
        load = np.asarray(rhs["load"], dtype=float)
    else:
        vals = rhs.values if isinstance(rhs, TorusGridFunction) else np.asarray(rhs, float)
        load = vals * h ** g.dim
    # div(a grad u) = f  <=>  B(u, hat) = -<f, hat>
    u, resid = op.solve_zero_mean(-load.reshape(op.grid.node_shape))
    out = TorusGridFunction(g.dim, g.resolution, u)
    out.residual = resid
    return out


# ---------------------------------------------------------------------------
# hybrid fields (periodic coefficients times monomials)


@dataclass
class PeriodicPolyField:
    """Finite sum ``F(x) = sum_beta f_beta(x) x^beta`` with periodic nodal f_beta.

    ``terms`` maps the monomial multi-index to an array whose trailing d axes
    are the grid; leading axes (if any) are tensor components.  The strong
    calculus below differentiates the periodic factors by centered second
    differences (default) or spectrally, and handles the polynomial factors
    exactly through the product rule.
    """

    dim: int
    resolution: int
    terms: dict

    def _check(self, other):
        if (self.dim, self.resolution) != (other.dim, other.resolution):
            raise ValueError("grid mismatch between hybrid fields")

    def map_values(self, fn):
        return PeriodicPolyField(self.dim, self.resolution,
                                 {b: fn(v) for b, v in self.terms.items()})

    def drop_zero_terms(self, tol=0.0):
        return PeriodicPolyField(
            self.dim, self.resolution,
            {b: v for b, v in self.terms.items() if np.max(np.abs(v)) > tol})


def _periodic_derivative(values, axis_in_grid, h, scheme):
    if scheme == "centered":
        return (np.roll(values, -1, axis=axis_in_grid)
                - np.roll(values, 1, axis=axis_in_grid)) / (2 * h)
    if scheme == "spectral":
        n = values.shape[axis_in_grid]
        k = np.fft.fftfreq(n, d=h) * 2j * np.pi
        shape = [1] * values.ndim
        shape[axis_in_grid] = n
        spec = np.fft.fft(values, axis=axis_in_grid) * k.reshape(shape)
        return np.real(np.fft.ifft(spec, axis=axis_in_grid))
    raise ValueError(f"unknown differentiation scheme '{scheme}'")


def leibniz_expand(f: PeriodicPolyField, op: str, coefficient: GridField | None = None,
                   scheme: str = "centered") -> PeriodicPolyField:
    """Apply gradient / a-flux / divergence / multiply-by-polynomial via the product rule.

    Periodic factors are differentiated per ``scheme``; polynomial factors are
    exact.  ``gradient`` prepends a component axis of length d, ``divergence``
    consumes one, ``a-flux`` contracts the leading axis with the coefficient
    resampled at the nodes, ``multiply`` expects ``coefficient`` to be a
    Polynomial instead.
    """
    d, n = f.dim, f.resolution
    h = 1.0 / n
    if op == "gradient":
        out = {}
        for beta, v in f.terms.items():
            grad = np.stack([_periodic_derivative(v, v.ndim - d + t, h, scheme)
                             for t in range(d)])
            _add_term(out, beta, grad)
            for t in range(d):
                if beta[t]:
                    down = tuple(b - (1 if i == t else 0) for i, b in enumerate(beta))
                    unit = np.zeros((d,) + v.shape)
                    unit[t] = beta[t] * v
                    _add_term(out, down, unit)
        return PeriodicPolyField(d, n, out).drop_zero_terms()
    if op == "divergence":
        out = {}
        for beta, v in f.terms.items():
            if v.shape[0] != d:
                raise ValueError("divergence needs a leading component axis of length d")
            div = sum(_periodic_derivative(v[t], v[t].ndim - d + t, h, scheme)
                      for t in range(d))
            _add_term(out, beta, div)
            for t in range(d):
                if beta[t]:
                    down = tuple(b - (1 if i == t else 0) for i, b in enumerate(beta))
                    _add_term(out, down, beta[t] * v[t])
        return PeriodicPolyField(d, n, out).drop_zero_terms()
    if op == "a-flux":
        if coefficient is None:
            raise ValueError("a-flux requires the coefficient field")
        if coefficient.resolution != n:
            raise ValueError("grid mismatch between field and coefficient")
        a_nodes = coefficient.node_values()  # (N..,d,d)
        out = {}
        for beta, v in f.terms.items():
            flux = np.einsum("...ij,j...->i...", a_nodes, v)
            _add_term(out, beta, flux)
        return PeriodicPolyField(d, n, out).drop_zero_terms()
    if op == "multiply":
        if not isinstance(coefficient, Polynomial):
            raise ValueError("multiply expects a Polynomial coefficient")
        out = {}
        for beta, v in f.terms.items():
            for alpha, c in coefficient.coeffs.items():
                _add_term(out, tuple(b + a for b, a in zip(beta, alpha)), float(c) * v)
        return PeriodicPolyField(d, n, out).drop_zero_terms()
    raise ValueError(f"unknown operation '{op}'")


def _add_term(terms, beta, value):
    if beta in terms:
        terms[beta] = terms[beta] + value
    else:
        terms[beta] = value


# ---------------------------------------------------------------------------
# corrector hierarchy


@dataclass
class CorrectorHierarchy:
    """Correctors phi^(0..M) and homogenized tensors abar^(2..M) for one field sample."""

    gridfield: GridField | None
    order: int
    phi: dict  # k -> ndarray (ncomp_k, N, ..., N)
    tensors: HomogenizedTensorSequence
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.meta["d"]

    @property
    def resolution(self):
        return self.meta["N"]

    @property
    def fingerprint(self):
        return self.meta["fingerprint"]

    def corrector(self, k) -> TorusGridFunction:
        return TorusGridFunction(self.dim, self.resolution, self.phi[k], order=k)

    def corrector_component(self, k, alpha):
        idx = multi_indices(self.dim, k).index(tuple(alpha))
        return self.phi[k][idx]

    def mean_abs(self, k):
        axes = tuple(range(1, self.dim + 1))
        return float(np.max(np.abs(self.phi[k].mean(axis=axes))))

    def gradient_norm(self, k):
        """Weighted L2(Q1) norm of grad phi^(k) from cell-average gradients."""
        if k == 0:
            return 0.0
        d, n = self.dim, self.resolution
        total = 0.0
        for i, alpha in enumerate(multi_indices(d, k)):
            g = _cell_gradients(self.phi[k][i], d, 1.0 / n)
            total += multinomial(k, alpha) * float(np.sum(g ** 2))
        return math.sqrt(total * (1.0 / n) ** d)

    def growth_values(self):
        """k -> ||grad phi^(k)||_{L2(Q1)} + |abar^(k)| for the growth-rate fit."""
        out = {}
        for k in range(1, self.order + 1):
            v = self.gradient_norm(k)
            if k >= 2:
                v += self.tensors.tensor(k).norm()
            out[k] = v
        return out

    def growth_constant(self):
        """Smallest C with value(k) <= C^k for all k (the exponential envelope)."""
        vals = self.growth_values()
        return max(max(v, 1e-300) ** (1.0 / k) for k, v in vals.items())


def _cell_gradients(nodal, d, h):
    """Per-cell average gradient of the multilinear interpolant, shape (d, N..)."""
    from itertools import product as iproduct
    grads = []
    for t in range(d):
        acc = np.zeros(nodal.shape)
        count = 0
        for s in iproduct((0, 1), repeat=d):
            if s[t] == 1:
                continue
            shifted = nodal
            for axis, si in enumerate(s):
                if si:
                    shifted = np.roll(shifted, -si, axis=axis)
            upper = np.roll(shifted, -1, axis=t)
            acc += (upper - shifted) / h
            count += 1
        grads.append(acc / count)
    return np.stack(grads)


def _hybrid_components(hierarchy_phi, beta, d, node_shape, top_order):
    """Nodal components f_gamma of sum_{k<top_order} phi^(k) : grad^k (x^beta/beta!)."""
    terms = {}
    m = sum(beta)
    for k in range(min(top_order, m + 1)):
        for alpha in multi_indices(d, k):
            if any(a > b for a, b in zip(alpha, beta)):
                continue
            gamma = tuple(b - a for b, a in zip(beta, alpha))
            coef = multinomial(k, alpha) / multi_factorial(gamma)
            comp = hierarchy_phi[k][multi_indices(d, k).index(alpha)]
            if gamma in terms:
                terms[gamma] = terms[gamma] + coef * comp
            else:
                terms[gamma] = coef * comp
    return terms


def _poly_part_coeffs(abar_tensors, beta, d):
    """Monomial coefficients of sum_{k=2}^{m-1} abar^(k) : grad^k (x^beta/beta!)."""
    out = {}
    m = sum(beta)
    for k in range(2, m):
        t = abar_tensors.get(k)
        if t is None:
            continue
        for alpha in multi_indices(d, k):
            if any(a > b for a, b in zip(alpha, beta)):
                continue
            c = t.coeffs[alpha]
            if c == 0:
                continue
            gamma = tuple(b - a for b, a in zip(beta, alpha))
            out[gamma] = out.get(gamma, 0.0) + multinomial(k, alpha) * float(c) / multi_factorial(gamma)
    return out


def _sub_multi(gamma):
    from itertools import product as iproduct
    return [tuple(t) for t in iproduct(*[range(g + 1) for g in gamma])]


def _binom_multi(gamma, delta):
    out = 1
    for g, dd in zip(gamma, delta):
        out *= math.comb(g, dd)
    return out


def build_hierarchy(g: GridField, order: int, tolerance: float = 1e-10,
                    cancel_tol: float = 1e-6) -> CorrectorHierarchy:
    """Construct correctors and homogenized tensors up to the given order.

    Per order m and component beta: expand the induction right-hand side as a
    hybrid field, form the lattice-shift expansion of its weak action, check
    that the shift-dependent part cancels (consistency of the discretization),
    read the tensor component off the invariant part, and solve the periodic
    problem for the new corrector component.
    """
    if order < 1:
        raise ValueError("hierarchy order must be >= 1")
    d, n = g.dim, g.resolution
    op = _torus_operator(g, tolerance)
    grid = op.grid
    h = grid.h
    node_shape = grid.node_shape
    hd = h ** d

    # Weak actions are evaluated on a one-cell-padded copy of the period with
    # true (unwrapped) coordinates: a periodic wrap would splice neighboring
    # lattice branches of the monomial factors together at the seam.
    ext = BoxGrid(d, (-h,) * d, (n + 2,) * d, h)
    a_ext = _tile_cells(g.values, ext, n)
    ones_ext = np.ones(ext.node_shape)
    window = tuple(slice(1, n + 1) for _ in range(d))

    def hybrid_action(f_periodic, eps):
        f_ext = _tile_nodes(f_periodic, ext, n)
        return weak_action(ext, a_ext, f_ext, eps)[window]

    phi = {0: np.ones((1,) + node_shape)}
    abar_tensors = {}
    cancellation = {}
    residuals = {}
    mass_cache = {}

    def mass_vec(eps):
        if eps not in mass_cache:
            mass_cache[eps] = mass_action(ext, ones_ext, eps)[window]
        return mass_cache[eps]

    for m in range(1, order + 1):
        idx_m = multi_indices(d, m)
        phim = np.zeros((len(idx_m),) + node_shape)
        abar_m = SymTensor.zero(d, m)
        for ib, beta in enumerate(idx_m):
            terms = _hybrid_components(phi, beta, d, node_shape, m)
            pcoef = _poly_part_coeffs(abar_tensors, beta, d)
            # weak actions W(f_gamma, eps) for every eps <= gamma
            wvals = {}
            for gamma, f in terms.items():
                for eps in _sub_multi(gamma):
                    wvals[(gamma, eps)] = hybrid_action(f, eps)
            deltas = sorted({dd for gamma in set(terms) | set(pcoef)
                             for dd in _sub_multi(gamma)})
            f_norms = {}
            f0 = None
            for delta in deltas:
                acc = np.zeros(node_shape)
                for gamma, f in terms.items():
                    if all(dd <= gg for dd, gg in zip(delta, gamma)):
                        eps = tuple(gg - dd for gg, dd in zip(gamma, delta))
                        acc -= _binom_multi(gamma, delta) * wvals[(gamma, eps)]
                for gamma, c in pcoef.items():
                    if all(dd <= gg for dd, gg in zip(delta, gamma)):
                        eps = tuple(gg - dd for gg, dd in zip(gamma, delta))
                        acc -= _binom_multi(gamma, delta) * c * mass_vec(eps)
                if all(x == 0 for x in delta):
                    f0 = acc
                else:
                    f_norms[delta] = float(np.linalg.norm(acc))
            # Denominator floored at the assembly magnitude of an order-one
            # gradient load, so that fields with identically vanishing
            # residuals (constant coefficients) report ~0 instead of 0/0.
            floor = g.lambda_max * n ** (d / 2.0) * h ** (d - 1)
            ratio = max(f_norms.values(), default=0.0) / max(float(np.linalg.norm(f0)), floor)
            cancellation[(m, beta)] = ratio
            if ratio > cancel_tol:
                raise SolverError(
                    f"polynomial-part cancellation failed at order {m}, component {beta}: "
                    f"ratio {ratio:.2e} > {cancel_tol:.0e} (inconsistent discretization)")
            mean_val = float(f0.sum())
            scale = multi_factorial(beta) / math.factorial(m)
            abar_m.coeffs[beta] = scale * mean_val
            rhs = f0 - mean_val * hd
            u, resid = op.solve_zero_mean(rhs, scale_hint=floor)
            residuals[(m, beta)] = resid
            phim[ib] = scale * u
        phi[m] = phim
        if m >= 2:
            abar_tensors[m] = abar_m
        elif abar_m.norm() > 1e-8:
            raise SolverError(f"first-order tensor should vanish, got norm {abar_m.norm():.2e}")

    seq = HomogenizedTensorSequence(d, abar_tensors)
    meta = {
        "fingerprint": g.fingerprint(),
        "d": d,
        "N": n,
        "order": order,
        "tolerance": tolerance,
        "cancel_tol": cancel_tol,
        "format_version": FORMAT_VERSION,
        "field": g.metadata,
        "solver": "direct-bordered",
        "cancellation": {f"{m}:{''.join(map(str, b))}": v
                         for (m, b), v in cancellation.items()},
        "solve_residuals": {f"{m}:{''.join(map(str, b))}": v
                            for (m, b), v in residuals.items()},
    }
    hier = CorrectorHierarchy(g, order, phi, seq, meta)
    if order >= 1:
        flux = homogenized_matrix(hier)
        gap = (flux - seq.tensor(2)).norm() if order >= 2 else 0.0
        meta["abar2_flux_gap"] = gap
        if order >= 2 and gap > 1e-6 * max(seq.tensor(2).norm(), 1.0):
            raise SolverError(f"flux-form and induction abar disagree by {gap:.2e}")
    return hier


def homogenized_matrix(h: CorrectorHierarchy) -> SymTensor:
    """Symmetric part of the flux mean <a (I + grad phi^(1))> over the torus."""
    if h.gridfield is None:
        raise ValueError("hierarchy was loaded without its field sample")
    g = h.gridfield
    d, n = g.dim, g.resolution
    spacing = 1.0 / n
    flux = np.zeros((d, d))
    for j in range(d):
        grad_j = _cell_gradients(h.phi[1][j], d, spacing)  # (d, cells)
        col = np.zeros((d,) + (n,) * d)
        for i in range(d):
            col[i] = g.values[..., i, j] + sum(
                g.values[..., i, t] * grad_j[t] for t in range(d))
        flux[:, j] = col.reshape(d, -1).mean(axis=1)
    sym = 0.5 * (flux + flux.T)
    out = SymTensor.zero(d, 2)
    for i in range(d):
        for j in range(i, d):
            alpha = [0] * d
            alpha[i] += 1
            alpha[j] += 1
            out.coeffs[tuple(alpha)] = sym[i, j]
    return out


def hierarchy_box_residual(h: CorrectorHierarchy, q: Polynomial, rhs: Polynomial,
                           box_radius: int = 2):
    """Weak residual of ``-div(a grad(sum_k phi^(k):grad^k q)) = rhs`` on a box.

    Returns the discrete L2 norm of the interior residual density; ``rhs``
    must be the polynomial right-hand side the identity is checked against.
    """
    if h.gridfield is None:
        raise ValueError("hierarchy was loaded without its field sample")
    if q.degree > h.order:
        raise ValueError(f"degree {q.degree} exceeds hierarchy order {h.order}")
    g = h.gridfield
    d, n = g.dim, g.resolution
    spacing = 1.0 / n
    ncells = (box_radius * n,) * d
    lo = (-box_radius / 2.0,) * d
    box = BoxGrid(d, lo, ncells, spacing)
    a_tiled = _tile_cells(g.values, box, n)
    node_shape = box.node_shape

    # hybrid components of the lifted polynomial on the box
    residual = np.zeros(node_shape)
    for k in range(q.degree + 1):
        for i, alpha in enumerate(multi_indices(d, k)):
            dq = _derivative(q, alpha)
            if dq.is_zero():
                continue
            w = multinomial(k, alpha)
            comp = _tile_nodes(h.phi[k][i], box, n)
            for gamma, c in dq.coeffs.items():
                residual += weak_action(box, a_tiled, (w * float(c)) * comp, gamma)
    for gamma, c in rhs.coeffs.items():
        residual -= float(c) * mass_action(box, np.ones(node_shape), gamma)
    interior = np.zeros(node_shape, bool)
    interior[tuple(slice(1, -1) for _ in range(d))] = True
    r = residual[interior]
    return float(np.linalg.norm(r)) * spacing ** (-d / 2.0)


def corrector_residual(h: CorrectorHierarchy, p: Polynomial, box_radius: int = 2) -> float:
    """Certify the hierarchy identity for ``p``: the weak-form norm of the
    difference between ``-div(a grad(sum phi^(k):grad^k p))`` and the
    truncated macroscopic polynomial, normalized by the size of p."""
    rhs = -apply_macroscopic(p, h.tensors)
    num = hierarchy_box_residual(h, p, rhs, box_radius)
    den = _poly_rms(p, box_radius)
    return num / max(den, 1e-30)


def _poly_rms(p: Polynomial, box_radius):
    from .polynomials import eval_poly_grid
    axes = [np.linspace(-box_radius / 2, box_radius / 2, 33)] * p.dim
    vals = eval_poly_grid(p, axes)
    return float(np.sqrt(np.mean(vals ** 2)))


def _derivative(p: Polynomial, alpha):
    from .polynomials import derivative_poly
    return derivative_poly(p, alpha)


def _tile_cells(unit_values, box: BoxGrid, n):
    """Tile unit-cell cell-center data (N.. , d, d) periodically over box cells."""
    d = box.dim
    idx = []
    for t in range(d):
        start = round(box.lo[t] * n)
        idx.append((start + np.arange(box.ncells[t])) % n)
    mesh = np.ix_(*idx)
    return unit_values[mesh]


def _tile_nodes(unit_values, box: BoxGrid, n):
    """Tile unit-cell nodal data (N..)^d periodically over box nodes."""
    d = box.dim
    idx = []
    for t in range(d):
        start = round(box.lo[t] * n)
        idx.append((start + np.arange(box.ncells[t] + 1)) % n)
    mesh = np.ix_(*idx)
    return unit_values[mesh]
