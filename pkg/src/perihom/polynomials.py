"""Exact calculus on polynomials of several variables.

Polynomials are stored in the monomial basis, ``p(x) = sum_alpha c_alpha x^alpha``,
as a dict keyed by multi-index.  The Taylor-tensor view used throughout the
rest of the package is ``grad_tensor(p, k)[alpha] = alpha! * c_alpha``, i.e.
the order-k tensor of k-th partial derivatives at 0, so that

    p(x) = sum_k (1/k!) contract(grad_tensor(p, k), tensor_power(x, k)).

Coefficients may be floats or ``fractions.Fraction``; every operation here is
generic in the scalar type, so identities can be checked in exact arithmetic
simply by feeding rational inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .tensors import (
    SymTensor,
    multi_factorial,
    multi_indices,
    multinomial,
    tensor_power,
)

__all__ = [
    "Polynomial",
    "HomogenizedTensorSequence",
    "GaussianWeight",
    "eval_poly",
    "derivative_poly",
    "finite_difference_poly",
    "differences_to_derivatives",
    "invert_laplacian_homogeneous",
    "apply_macroscopic",
    "apply_second_order",
    "invert_macroscopic",
    "harmonic_twist",
    "harmonic_basis",
    "hermite_poly",
    "gaussian_inner",
]


class Polynomial:
    """Polynomial in ``d`` variables, monomial-basis storage."""

    __slots__ = ("dim", "coeffs")

    def __init__(self, dim, coeffs=None):
        self.dim = int(dim)
        self.coeffs = {}
        if coeffs:
            for alpha, c in coeffs.items():
                alpha = tuple(int(a) for a in alpha)
                if len(alpha) != self.dim or any(a < 0 for a in alpha):
                    raise ValueError(f"bad multi-index for d={self.dim}: {alpha}")
                if c != 0:
                    self.coeffs[alpha] = c

    @classmethod
    def zero(cls, dim):
        return cls(dim)

    @classmethod
    def constant(cls, dim, c):
        return cls(dim, {tuple([0] * dim): c})

    @classmethod
    def monomial(cls, dim, alpha, c=1):
        return cls(dim, {tuple(alpha): c})

    @classmethod
    def from_taylor(cls, dim, tensors):
        """Build from the list of derivative tensors ``[T0, T1, ..., Tm]``."""
        coeffs = {}
        for k, t in enumerate(tensors):
            if t is None:
                continue
            if t.order != k or t.dim != dim:
                raise ValueError(f"tensor {k} has order {t.order}, dim {t.dim}")
            for alpha, v in t.coeffs.items():
                if v != 0:
                    coeffs[alpha] = coeffs.get(alpha, 0) + _exact_div(v, multi_factorial(alpha))
        return cls(dim, coeffs)

    @property
    def degree(self):
        """Largest total degree with a nonzero coefficient (0 for the zero polynomial)."""
        if not self.coeffs:
            return 0
        return max(sum(a) for a in self.coeffs)

    def is_zero(self):
        return not self.coeffs

    def homogeneous_part(self, n):
        return Polynomial(self.dim, {a: c for a, c in self.coeffs.items() if sum(a) == n})

    def grad_tensor(self, k) -> SymTensor:
        """The order-k tensor of k-th partial derivatives at the origin."""
        t = SymTensor(self.dim, k)
        for alpha in multi_indices(self.dim, k):
            c = self.coeffs.get(alpha)
            if c is not None:
                t.coeffs[alpha] = c * multi_factorial(alpha)
        return t

    def taylor(self):
        """List ``[T0, ..., Tdegree]`` of derivative tensors at the origin."""
        return [self.grad_tensor(k) for k in range(self.degree + 1)]

    def coeff_norm(self):
        return math.sqrt(sum(float(c) ** 2 for c in self.coeffs.values()))

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.coeffs)
        for a, c in other.coeffs.items():
            v = out.get(a, 0) + c
            if v == 0:
                out.pop(a, None)
            else:
                out[a] = v
        return Polynomial(self.dim, out)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __neg__(self):
        return Polynomial(self.dim, {a: -c for a, c in self.coeffs.items()})

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            out = {}
            for a1, c1 in self.coeffs.items():
                for a2, c2 in other.coeffs.items():
                    a = tuple(i + j for i, j in zip(a1, a2))
                    v = out.get(a, 0) + c1 * c2
                    if v == 0:
                        out.pop(a, None)
                    else:
                        out[a] = v
            return Polynomial(self.dim, out)
        return Polynomial(self.dim, {a: c * other for a, c in self.coeffs.items()})

    __rmul__ = __mul__

    def _coerce(self, other):
        if isinstance(other, Polynomial):
            if other.dim != self.dim:
                raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other
        return Polynomial.constant(self.dim, other)

    def __call__(self, x):
        return eval_poly(self, x)

    def __repr__(self):
        return f"Polynomial(d={self.dim}, {self.coeffs})"


def _exact_div(v, den):
    if isinstance(v, (int, Fraction)) and isinstance(den, (int, Fraction)):
        f = Fraction(v) / Fraction(den)
        return int(f) if f.denominator == 1 else f
    return v / den


def eval_poly(p: Polynomial, x):
    """Evaluate by direct monomial summation (exact for exact inputs)."""
    x = tuple(x)
    if len(x) != p.dim:
        raise ValueError(f"point has dim {len(x)}, polynomial has dim {p.dim}")
    total = 0
    for alpha, c in p.coeffs.items():
        v = c
        for xi, ai in zip(x, alpha):
            if ai:
                v = v * xi ** ai
        total = total + v
    return total


def eval_poly_grid(p: Polynomial, axes):
    """Evaluate on a tensor-product grid given per-axis coordinate arrays."""
    shape = tuple(len(ax) for ax in axes)
    out = np.zeros(shape)
    # cache per-axis powers
    pows = [{} for _ in range(p.dim)]
    for alpha, c in p.coeffs.items():
        term = float(c) * np.ones(shape)
        for i, ai in enumerate(alpha):
            if ai:
                if ai not in pows[i]:
                    pows[i][ai] = np.asarray(axes[i], dtype=float) ** ai
                sl = [None] * p.dim
                sl[i] = slice(None)
                term = term * pows[i][ai][tuple(sl)]
        out += term
    return out


def derivative_poly(p: Polynomial, alpha) -> Polynomial:
    """The partial derivative ``d^alpha p``, exact."""
    alpha = tuple(alpha)
    out = {}
    for beta, c in p.coeffs.items():
        if all(b >= a for b, a in zip(beta, alpha)):
            target = tuple(b - a for b, a in zip(beta, alpha))
            fac = 1
            for b, a in zip(beta, alpha):
                fac *= math.factorial(b) // math.factorial(b - a)
            out[target] = out.get(target, 0) + c * fac
    return Polynomial(p.dim, out)


def shift_poly(p: Polynomial, h) -> Polynomial:
    """``p(x + h)``, via exact binomial expansion."""
    h = tuple(h)
    out = Polynomial.zero(p.dim)
    for beta, c in p.coeffs.items():
        term = {}
        # expand prod_i (x_i + h_i)^beta_i
        expansions = []
        for hi, bi in zip(h, beta):
            expansions.append([(k, math.comb(bi, k) * hi ** (bi - k) if bi > k else (1 if bi == k else 0))
                               for k in range(bi + 1)])
        def rec(i, idx, coef):
            if coef == 0:
                return
            if i == p.dim:
                a = tuple(idx)
                term[a] = term.get(a, 0) + coef
                return
            for k, w in expansions[i]:
                rec(i + 1, idx + [k], coef * w)
        rec(0, [], c)
        out = out + Polynomial(p.dim, term)
    return out


def finite_difference_poly(p: Polynomial, alpha) -> Polynomial:
    """Iterated forward unit differences ``D^alpha p``; exact, order-independent."""
    out = p
    for i, ai in enumerate(alpha):
        e = tuple(1 if j == i else 0 for j in range(p.dim))
        for _ in range(ai):
            out = shift_poly(out, e) - out
    return out


def difference_tensor(p: Polynomial, k: int) -> SymTensor:
    """Tensor of k-th forward differences of ``p`` at the origin."""
    t = SymTensor(p.dim, k)
    origin = tuple([0] * p.dim)
    for alpha in multi_indices(p.dim, k):
        dp = finite_difference_poly(p, alpha)
        t.coeffs[alpha] = dp.coeffs.get(origin, 0)
    return t


def differences_to_derivatives(dim: int, diffs) -> Polynomial:
    """The unique polynomial whose forward-difference tensors at 0 are ``diffs``.

    Top-down: the degree-m homogeneous layer is fixed by the order-m difference
    tensor (for homogeneous q of degree m, ``D^m q(0) = grad^m q`` exactly);
    lower layers absorb the deficit left by cell shifts of the upper ones.
    """
    m = len(diffs) - 1
    for k, t in enumerate(diffs):
        if t.order != k or t.dim != dim:
            raise ValueError(f"tensor {k} has order {t.order}, expected {k} (d={t.dim})")
    p = Polynomial.zero(dim)
    for k in range(m, -1, -1):
        current = difference_tensor(p, k)
        deficit = diffs[k] - current
        layer = {}
        for alpha in multi_indices(dim, k):
            v = deficit.coeffs[alpha]
            if v != 0:
                layer[alpha] = _exact_div(v, multi_factorial(alpha))
        p = p + Polynomial(dim, layer)
    return p


# ---------------------------------------------------------------------------
# constant-coefficient elliptic inverses on polynomials


def _sym_matrix(abar: SymTensor) -> np.ndarray:
    """Order-2 tensor as a dense symmetric matrix."""
    if abar.order != 2:
        raise ValueError(f"expected order-2 tensor, got order {abar.order}")
    d = abar.dim
    m = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            alpha = [0] * d
            alpha[i] += 1
            alpha[j] += 1
            m[i, j] = float(abar.coeffs[tuple(alpha)])
    return m


def _scalar_of_order2(abar: SymTensor):
    """If the order-2 tensor is exactly c * Id, return c in its original scalar type."""
    c = None
    for alpha, v in abar.coeffs.items():
        if 2 in alpha:
            if c is None:
                c = v
            elif v != c:
                return None
        elif v != 0:
            return None
    return c


def compose_linear(p: Polynomial, b: np.ndarray) -> Polynomial:
    """``p(B x)`` for a matrix B, by expanding each substituted monomial."""
    d = p.dim
    lin = [Polynomial(d, {tuple(1 if j == k else 0 for k in range(d)): b[i, j]
                          for j in range(d) if b[i, j] != 0})
           for i in range(d)]
    out = Polynomial.zero(d)
    for alpha, c in p.coeffs.items():
        term = Polynomial.constant(d, c)
        for i, ai in enumerate(alpha):
            for _ in range(ai):
                term = term * lin[i]
        out = out + term
    return out


def laplacian_poly(p: Polynomial) -> Polynomial:
    out = Polynomial.zero(p.dim)
    for i in range(p.dim):
        alpha = tuple(2 if j == i else 0 for j in range(p.dim))
        out = out + derivative_poly(p, alpha)
    return out


def invert_laplacian_homogeneous(p: Polynomial, abar: SymTensor) -> Polynomial:
    """Solve ``-div(abar grad q) = p`` for homogeneous p, q homogeneous of degree m+2.

    The general SPD matrix is reduced to the identity by the affine change of
    variables through its principal square root; the reduced problem is solved
    by the closed form

        q(y) = - sum_j a_{j,m} |y|^{2(j+1)} (-Lap)^j p(y),
        a_{-1,m} = 1,  a_{j,m} = a_{j-1,m} / (2(j+1)(2(m-j)+d)).

    Scalar multiples of the identity are handled exactly (no float square
    root), which keeps rational inputs rational.
    """
    degs = {sum(a) for a in p.coeffs}
    if len(degs) > 1:
        raise ValueError(f"polynomial is not homogeneous: degrees {sorted(degs)}")
    if p.is_zero():
        return Polynomial.zero(p.dim)
    m = p.degree
    d = p.dim
    scal = _scalar_of_order2(abar)
    if scal is not None:
        if scal <= 0:
            raise ValueError("coefficient matrix is not positive definite")
        return _invert_identity_laplacian(p, m, d) * _exact_div(1, scal)

    a_mat = _sym_matrix(abar)
    evals, evecs = np.linalg.eigh(a_mat)
    if evals.min() <= 0:
        raise ValueError(f"coefficient matrix is not positive definite: eigenvalues {evals}")
    sqrt_a = evecs @ np.diag(np.sqrt(evals)) @ evecs.T
    inv_sqrt_a = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
    p_tilde = compose_linear(p, sqrt_a)
    q_tilde = _invert_identity_laplacian(p_tilde, m, d)
    return compose_linear(q_tilde, inv_sqrt_a)


def _invert_identity_laplacian(p: Polynomial, m: int, d: int) -> Polynomial:
    r2 = Polynomial(d, {tuple(2 if j == i else 0 for j in range(d)): 1 for i in range(d)})
    out = Polynomial.zero(d)
    a_jm = 1
    lap_j = p  # (-Lap)^j p
    r2_pow = r2  # |x|^{2(j+1)}
    for j in range(m // 2 + 1):
        a_jm = _exact_div(a_jm, 2 * (j + 1) * (2 * (m - j) + d))
        out = out + (-a_jm) * (r2_pow * lap_j)
        lap_j = -laplacian_poly(lap_j)
        if lap_j.is_zero():
            break
        r2_pow = r2_pow * r2
    return out


@dataclass
class HomogenizedTensorSequence:
    """Constant tensors of orders 2..max_order driving the macroscopic operator."""

    dim: int
    tensors: dict = field(default_factory=dict)  # order k -> SymTensor

    def __post_init__(self):
        for k, t in self.tensors.items():
            if k < 2 or t.order != k or t.dim != self.dim:
                raise ValueError(f"tensor at order {k} has order {t.order}, dim {t.dim}")

    @property
    def max_order(self):
        return max(self.tensors) if self.tensors else 2

    def tensor(self, k) -> SymTensor:
        """Order-k member; orders beyond the stored range count as zero."""
        t = self.tensors.get(k)
        return t if t is not None else SymTensor.zero(self.dim, k)

    def matrix(self) -> np.ndarray:
        return _sym_matrix(self.tensor(2))

    @classmethod
    def second_order(cls, abar: SymTensor):
        return cls(abar.dim, {2: abar})

    @classmethod
    def identity(cls, dim):
        from .tensors import identity_tensor
        return cls(dim, {2: identity_tensor(dim)})


def apply_macroscopic(p: Polynomial, seq: HomogenizedTensorSequence) -> Polynomial:
    """``sum_{n>=2} contract(abar_n, grad^n p)`` as a polynomial; missing orders are zero."""
    out = Polynomial.zero(p.dim)
    for n in range(2, min(p.degree, seq.max_order) + 1):
        t = seq.tensors.get(n)
        if t is None:
            continue
        for alpha in multi_indices(p.dim, n):
            c = t.coeffs[alpha]
            if c != 0:
                out = out + multinomial(n, alpha) * c * derivative_poly(p, alpha)
    return out


def apply_second_order(p: Polynomial, seq: HomogenizedTensorSequence) -> Polynomial:
    """Only the order-2 term, i.e. ``div(abar grad p)`` for the constant matrix."""
    return apply_macroscopic(p, HomogenizedTensorSequence.second_order(seq.tensor(2)))


def _apply_higher_order(p: Polynomial, seq: HomogenizedTensorSequence) -> Polynomial:
    out = Polynomial.zero(p.dim)
    for n in range(3, min(p.degree, seq.max_order) + 1):
        t = seq.tensors.get(n)
        if t is None:
            continue
        for alpha in multi_indices(p.dim, n):
            c = t.coeffs[alpha]
            if c != 0:
                out = out + multinomial(n, alpha) * c * derivative_poly(p, alpha)
    return out


def _invert_second_order_layers(p: Polynomial, abar: SymTensor) -> Polynomial:
    """Solve ``-div(abar grad q) = p`` layer by homogeneous layer."""
    out = Polynomial.zero(p.dim)
    for n in range(p.degree + 1):
        layer = p.homogeneous_part(n)
        if not layer.is_zero():
            out = out + invert_laplacian_homogeneous(layer, abar)
    return out


def invert_macroscopic(p: Polynomial, seq: HomogenizedTensorSequence) -> Polynomial:
    """Solve ``-A q = p`` exactly in coefficients, with q(0) = 0, grad q(0) = 0.

    Finite iteration: q0 inverts the second-order part, then each correction
    absorbs the higher-order residue of the previous iterate; the degree of
    the residue drops every step, so the loop terminates.
    """
    abar = seq.tensor(2)
    if np.linalg.eigvalsh(_sym_matrix(abar)).min() <= 0:
        raise ValueError("order-2 tensor is not positive definite")
    total = Polynomial.zero(p.dim)
    rhs = p
    for _ in range(p.degree + 3):
        if rhs.is_zero():
            break
        q_k = _invert_second_order_layers(rhs, abar)
        total = total + q_k
        rhs = _apply_higher_order(q_k, seq)
    else:
        if not rhs.is_zero():
            raise RuntimeError("macroscopic inversion did not terminate")
    return total


def harmonic_twist(p: Polynomial, seq: HomogenizedTensorSequence) -> Polynomial:
    """Project an ``abar``-harmonic polynomial onto the kernel of the full operator.

    Returns p' = p - q where q solves the macroscopic equation with the
    residue of p as data; p' keeps the value, gradient and top derivative
    tensor of p and satisfies ``apply_macroscopic(p', seq) = 0`` exactly.
    """
    resid = apply_second_order(p, seq)
    scale = p.coeff_norm()
    if resid.coeff_norm() > 1e-10 * max(scale, 1.0):
        raise ValueError("input polynomial is not harmonic for the order-2 tensor")
    full = apply_macroscopic(p, seq)
    if full.is_zero():
        return p
    q = invert_macroscopic(-full, seq)
    return p - q


def harmonic_basis(dim: int, degree: int, abar: SymTensor):
    """Basis of ``abar``-harmonic polynomials of total degree <= degree.

    Homogeneous layer by layer: null space of the map p -> div(abar grad p)
    restricted to the homogeneous polynomials of that degree, via SVD.  The
    ordering (degree-major, then the SVD's right-singular vectors) is fixed
    but otherwise a convention.
    """
    seq = HomogenizedTensorSequence.second_order(abar)
    basis = [Polynomial.constant(dim, 1.0)]
    for n in range(1, degree + 1):
        idx_n = multi_indices(dim, n)
        idx_lower = multi_indices(dim, n - 2) if n >= 2 else ()
        rows = []
        for alpha in idx_n:
            q = apply_second_order(Polynomial.monomial(dim, alpha, 1.0), seq)
            rows.append([float(q.coeffs.get(b, 0)) for b in idx_lower])
        mat = np.array(rows, dtype=float).T if idx_lower else np.zeros((0, len(idx_n)))
        if mat.shape[0] == 0:
            null = np.eye(len(idx_n))
        else:
            _, s, vt = np.linalg.svd(mat)
            rank = int(np.sum(s > 1e-12 * max(s.max(), 1.0))) if s.size else 0
            null = vt[rank:].T
        for j in range(null.shape[1]):
            coeffs = {alpha: null[i, j] for i, alpha in enumerate(idx_n) if abs(null[i, j]) > 1e-14}
            basis.append(Polynomial(dim, coeffs))
    return basis


# ---------------------------------------------------------------------------
# Hermite polynomials and Gaussian-weighted integrals


def hermite_poly(n: int) -> Polynomial:
    """Physicist Hermite polynomial in one variable, by the three-term recurrence."""
    if n < 0:
        raise ValueError("index must be >= 0")
    h_prev = Polynomial(1, {(0,): 1})
    if n == 0:
        return h_prev
    h = Polynomial(1, {(1,): 2})
    x2 = Polynomial(1, {(1,): 2})
    for k in range(1, n):
        h, h_prev = x2 * h - (2 * k) * h_prev, h
    return h


@dataclass(frozen=True)
class GaussianWeight:
    """Heat-kernel weight with center y and time t > 0 (unit total mass)."""

    center: tuple
    time: object  # positive number; Fraction keeps the moments exact

    def __post_init__(self):
        if self.time <= 0:
            raise ValueError(f"time must be positive, got {self.time}")

    @property
    def dim(self):
        return len(self.center)


def _double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def gaussian_inner(p: Polynomial, q: Polynomial, w: GaussianWeight):
    """``integral p q Phi_{t,y}`` from closed-form moments.

    Per axis, odd central moments vanish and the central moment of degree 2k
    is ``(2k-1)!! (2t)^k``.  Exact for rational inputs.
    """
    if p.dim != q.dim or p.dim != w.dim:
        raise ValueError("dimension mismatch between polynomials and weight")
    r = shift_poly(p * q, w.center)  # expand around the center
    t2 = 2 * w.time
    total = 0
    for alpha, c in r.coeffs.items():
        if any(a % 2 for a in alpha):
            continue
        v = c
        for a in alpha:
            if a:
                v = v * _double_factorial(a - 1) * t2 ** (a // 2)
        total = total + v
    return total


def gaussian_weighted_gradient_energy(p: Polynomial, w: GaussianWeight):
    """``integral (|grad(p Phi)| / Phi)^2 Phi`` via moments: the integrand's
    vector is ``grad p - p (x - y)/(2t)``, polynomial in x."""
    d = p.dim
    out = 0
    for i in range(d):
        e = tuple(1 if j == i else 0 for j in range(d))
        comp = derivative_poly(p, e) - _exact_div(1, 2 * w.time) * (
            (Polynomial.monomial(d, e, 1) - Polynomial.constant(d, w.center[i])) * p)
        out = out + gaussian_inner(comp, comp, w)
    return out


def gaussian_cube_integral(p: Polynomial, q: Polynomial, w: GaussianWeight, half_width: float,
                           rel_tol: float = 1e-9, max_nodes: int = 240):
    """``integral_{y + [-L, L]^d} p q Phi_{t,y}`` by tensorized Gauss-Legendre.

    The node count doubles until the relative change drops below ``rel_tol``,
    so quadrature error is far below the factor-2 slack it is used to check.
    """
    from numpy.polynomial.legendre import leggauss

    d = p.dim
    t = float(w.time)
    y = np.asarray(w.center, dtype=float)
    r = p * q
    prev = None
    n = 24
    while True:
        nodes, weights = leggauss(n)
        axes = [y[i] + half_width * nodes for i in range(d)]
        vals = eval_poly_grid(r, axes)
        phi = np.ones([n] * d)
        for i in range(d):
            g = (4 * math.pi * t) ** (-0.5) * np.exp(-((axes[i] - y[i]) ** 2) / (4 * t))
            sl = [None] * d
            sl[i] = slice(None)
            phi = phi * g[tuple(sl)]
        total = vals * phi
        for i in range(d - 1, -1, -1):
            total = np.tensordot(total, weights, axes=([i], [0]))
        val = float(total) * half_width ** d
        if prev is not None and abs(val - prev) <= rel_tol * max(abs(val), 1e-300):
            return val
        if n >= max_nodes:
            return val
        prev = val
        n *= 2
