"""Multi-index and symmetric-tensor algebra.

A symmetric tensor of order ``m`` over ``R^d`` is stored as one real
coefficient per *distinct* multi-index ``alpha`` with ``|alpha| = m``.
Index multiplicities never enter the storage; they are carried by the
multinomial weight ``m!/alpha!`` inside :func:`contract` (and hence
:meth:`SymTensor.norm`).

Enumeration order of multi-indices is colexicographic (the order produced
by ``itertools.combinations_with_replacement`` over axis labels) and is
fixed so that serialized coefficient arrays are bit-stable across runs.

Coefficients may be floats or ``fractions.Fraction``; all operations are
generic in the scalar type, so exact-rational computations work end to end.
"""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np

__all__ = [
    "MultiIndex",
    "SymTensor",
    "multi_indices",
    "num_components",
    "multi_factorial",
    "multinomial",
    "contract",
    "tensor_power",
    "symmetrized_product",
    "identity_tensor",
]

MultiIndex = tuple  # tuple of d nonnegative ints


@lru_cache(maxsize=None)
def multi_indices(dim: int, order: int) -> tuple:
    """All multi-indices of the given order, in colexicographic order."""
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    out = []
    for combo in combinations_with_replacement(range(dim), order):
        alpha = [0] * dim
        for axis in combo:
            alpha[axis] += 1
        out.append(tuple(alpha))
    return tuple(out)


def num_components(dim: int, order: int) -> int:
    return math.comb(order + dim - 1, dim - 1)


def multi_factorial(alpha: MultiIndex) -> int:
    out = 1
    for a in alpha:
        out *= math.factorial(a)
    return out


def multinomial(order: int, alpha: MultiIndex) -> int:
    """The weight ``order!/alpha!``, exact integer arithmetic.

    Python integers are arbitrary precision, so the result is exact for any
    order; a mismatch between ``order`` and ``|alpha|`` is an error.
    """
    if any(a < 0 for a in alpha):
        raise ValueError(f"multi-index entries must be nonnegative: {alpha}")
    if sum(alpha) != order:
        raise ValueError(f"order mismatch: |{alpha}| = {sum(alpha)} != {order}")
    return math.factorial(order) // multi_factorial(alpha)


class SymTensor:
    """Order-``m`` symmetric tensor over ``R^d`` with multinomial-weighted storage."""

    __slots__ = ("dim", "order", "coeffs")

    def __init__(self, dim, order, coeffs=None):
        self.dim = int(dim)
        self.order = int(order)
        keys = multi_indices(self.dim, self.order)
        if coeffs is None:
            self.coeffs = {a: 0 for a in keys}
        else:
            bad = set(coeffs) - set(keys)
            if bad:
                raise ValueError(f"keys of wrong dimension/order: {sorted(bad)[:3]}")
            self.coeffs = {a: coeffs.get(a, 0) for a in keys}

    @classmethod
    def zero(cls, dim, order):
        return cls(dim, order)

    def __getitem__(self, alpha):
        return self.coeffs[tuple(alpha)]

    def __setitem__(self, alpha, value):
        alpha = tuple(alpha)
        if alpha not in self.coeffs:
            raise KeyError(f"not an order-{self.order} multi-index in d={self.dim}: {alpha}")
        self.coeffs[alpha] = value

    def __add__(self, other):
        self._check_same(other)
        return SymTensor(self.dim, self.order,
                         {a: self.coeffs[a] + other.coeffs[a] for a in self.coeffs})

    def __sub__(self, other):
        self._check_same(other)
        return SymTensor(self.dim, self.order,
                         {a: self.coeffs[a] - other.coeffs[a] for a in self.coeffs})

    def __mul__(self, scalar):
        return SymTensor(self.dim, self.order,
                         {a: v * scalar for a, v in self.coeffs.items()})

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1)

    def _check_same(self, other):
        if not isinstance(other, SymTensor):
            raise TypeError(f"expected SymTensor, got {type(other).__name__}")
        if (self.dim, self.order) != (other.dim, other.order):
            raise ValueError(
                f"tensor mismatch: (d={self.dim}, m={self.order}) vs "
                f"(d={other.dim}, m={other.order})")

    def norm(self):
        return math.sqrt(float(contract(self, self)))

    def max_abs(self):
        return max(abs(float(v)) for v in self.coeffs.values())

    def to_array(self) -> np.ndarray:
        """Flat float64 array in the documented enumeration order."""
        return np.array([float(self.coeffs[a]) for a in multi_indices(self.dim, self.order)],
                        dtype="<f8")

    @classmethod
    def from_array(cls, dim, order, values):
        keys = multi_indices(dim, order)
        values = np.asarray(values, dtype=float).ravel()
        if values.size != len(keys):
            raise ValueError(f"expected {len(keys)} components, got {values.size}")
        return cls(dim, order, dict(zip(keys, values.tolist())))

    def __repr__(self):
        nz = {a: v for a, v in self.coeffs.items() if v != 0}
        return f"SymTensor(d={self.dim}, m={self.order}, {nz})"


def contract(s: SymTensor, t: SymTensor):
    """Weighted contraction ``sum_alpha (m!/alpha!) S_alpha T_alpha``."""
    s._check_same(t)
    m = s.order
    total = 0
    for alpha in multi_indices(s.dim, m):
        total = total + multinomial(m, alpha) * s.coeffs[alpha] * t.coeffs[alpha]
    return total


def tensor_power(x, order: int) -> SymTensor:
    """The tensor with coefficient ``x^alpha`` at ``alpha``; norm is ``|x|^order``."""
    x = tuple(x)
    if order < 0:
        raise ValueError("order must be >= 0")
    coeffs = {}
    for alpha in multi_indices(len(x), order):
        v = 1
        for xi, ai in zip(x, alpha):
            v = v * xi ** ai
        coeffs[alpha] = v
    return SymTensor(len(x), order, coeffs)


def identity_tensor(dim: int) -> SymTensor:
    """The identity matrix as an order-2 symmetric tensor."""
    t = SymTensor(dim, 2)
    for i in range(dim):
        alpha = tuple(2 if j == i else 0 for j in range(dim))
        t[alpha] = 1
    return t


def _sub_multi_indices(gamma, order):
    """Multi-indices alpha <= gamma (componentwise) with |alpha| = order."""
    out = []
    for alpha in multi_indices(len(gamma), order):
        if all(a <= g for a, g in zip(alpha, gamma)):
            out.append(alpha)
    return out


def _binom_multi(beta, alpha) -> int:
    out = 1
    for b, a in zip(beta, alpha):
        out *= math.comb(b, a)
    return out


def symmetrized_product(s: SymTensor, t: SymTensor) -> SymTensor:
    """Symmetrization of the outer product; bilinear and commutative.

    In multinomial-weighted coordinates, for orders j and k with m = j + k:

        out_gamma = (j! k! / m!) * sum_{alpha+beta=gamma} prod_i C(gamma_i, alpha_i)
                    * S_alpha * T_beta
    """
    if s.dim != t.dim:
        raise ValueError(f"dimension mismatch: {s.dim} vs {t.dim}")
    j, k = s.order, t.order
    m = j + k
    # exact rational prefactor; stays exact for Fraction inputs
    num = math.factorial(j) * math.factorial(k)
    den = math.factorial(m)
    out = SymTensor(s.dim, m)
    for gamma in multi_indices(s.dim, m):
        acc = 0
        for alpha in _sub_multi_indices(gamma, j):
            beta = tuple(g - a for g, a in zip(gamma, alpha))
            acc = acc + _binom_multi(gamma, alpha) * s.coeffs[alpha] * t.coeffs[beta]
        v = acc * num
        out.coeffs[gamma] = v / den if not isinstance(v, int) else _int_div(v, den)
    return out


def _int_div(v, den):
    # keep integers exact when divisible, otherwise fall back to float
    if v % den == 0:
        return v // den
    from fractions import Fraction
    return Fraction(v, den)
