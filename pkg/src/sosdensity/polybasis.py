"""Multi-indices, sparse polynomials and evaluable polynomial bases.

Exponent tuples are plain tuples of ints.  Index sets list every exponent of
total degree at most ``r`` in graded order; inside a grade the order is
descending lexicographic, so for ``n=2, r=1`` the set is
``[(0,0), (1,0), (0,1)]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

MultiIndex = tuple[int, ...]


def total_degree(alpha: Sequence[int]) -> int:
    return int(sum(alpha))


def add_index(a: Sequence[int], b: Sequence[int]) -> MultiIndex:
    return tuple(int(x) + int(y) for x, y in zip(a, b))


def _grade(n: int, d: int) -> list[MultiIndex]:
    # all exponents of dimension n with total degree exactly d
    out = []
    for combo in combinations_with_replacement(range(n), d):
        alpha = [0] * n
        for i in combo:
            alpha[i] += 1
        out.append(tuple(alpha))
    out.sort(reverse=True)
    return out


@lru_cache(maxsize=256)
def _indices(n: int, r: int) -> tuple[MultiIndex, ...]:
    out: list[MultiIndex] = []
    for d in range(r + 1):
        out.extend(_grade(n, d))
    return tuple(out)


@dataclass(frozen=True)
class IndexSet:
    """All exponents with ``|alpha| <= r`` in graded order."""

    n: int
    r: int
    indices: tuple[MultiIndex, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __getitem__(self, k: int) -> MultiIndex:
        return self.indices[k]

    @property
    def position(self) -> dict[MultiIndex, int]:
        return _positions(self.n, self.r)

    def exponents(self) -> np.ndarray:
        """Exponents as an integer array of shape (len, n)."""
        return np.array(self.indices, dtype=int).reshape(len(self), self.n)


@lru_cache(maxsize=256)
def _positions(n: int, r: int) -> dict[MultiIndex, int]:
    return {a: k for k, a in enumerate(_indices(n, r))}


def index_set(n: int, r: int) -> IndexSet:
    """Return N(n, r) in graded order; its size is binomial(n + r, r)."""
    if n < 1 or r < 0:
        raise ValueError(f"need n >= 1 and r >= 0, got n={n}, r={r}")
    iset = IndexSet(n, r, _indices(n, r))
    assert len(iset) == comb(n + r, r)
    return iset


class Polynomial:
    """Sparse real polynomial in ``n`` variables.

    Zero coefficients are never stored.
    """

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Mapping[Sequence[int], float] | None = None):
        self.n = int(n)
        clean: dict[MultiIndex, float] = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.n:
                raise ValueError(f"exponent {alpha} has wrong length for n={self.n}")
            if min(alpha, default=0) < 0:
                raise ValueError(f"negative exponent {alpha}")
            c = float(c)
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + c
        self.terms = {a: c for a, c in clean.items() if c != 0.0}

    @classmethod
    def constant(cls, n: int, c: float) -> Polynomial:
        return cls(n, {(0,) * n: c})

    @classmethod
    def variable(cls, n: int, i: int) -> Polynomial:
        alpha = [0] * n
        alpha[i] = 1
        return cls(n, {tuple(alpha): 1.0})

    @classmethod
    def from_vector(cls, iset: IndexSet, coeffs: Sequence[float]) -> Polynomial:
        return cls(iset.n, dict(zip(iset.indices, coeffs)))

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, alpha: Sequence[int]) -> float:
        return self.terms.get(tuple(alpha), 0.0)

    def to_vector(self, iset: IndexSet) -> np.ndarray:
        pos = iset.position
        out = np.zeros(len(iset))
        for a, c in self.terms.items():
            if a not in pos:
                raise ValueError(f"term {a} is outside N({iset.n},{iset.r})")
            out[pos[a]] = c
        return out

    def __call__(self, z) -> float | np.ndarray:
        return evaluate(self, z)

    def __add__(self, other: Polynomial) -> Polynomial:
        _check_dims(self, other)
        out = dict(self.terms)
        for a, c in other.terms.items():
            out[a] = out.get(a, 0.0) + c
        return Polynomial(self.n, out)

    def __sub__(self, other: Polynomial) -> Polynomial:
        return self + other.scale(-1.0)

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return multiply(self, other)
        return self.scale(float(other))

    __rmul__ = __mul__

    def scale(self, c: float) -> Polynomial:
        return Polynomial(self.n, {a: c * v for a, v in self.terms.items()})

    def __eq__(self, other) -> bool:
        return isinstance(other, Polynomial) and self.n == other.n and self.terms == other.terms

    def __repr__(self) -> str:
        if not self.terms:
            return f"Polynomial(n={self.n}, 0)"
        body = " + ".join(f"{c:g}*z^{a}" for a, c in sorted(self.terms.items()))
        return f"Polynomial(n={self.n}, {body})"


def _check_dims(p: Polynomial, q: Polynomial) -> None:
    if p.n != q.n:
        raise ValueError(f"dimension mismatch: {p.n} vs {q.n}")


def evaluate(p: Polynomial, z) -> float | np.ndarray:
    """Evaluate ``p`` at one point (shape (n,)) or at many points (shape (N, n))."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = z.reshape(1, -1) if single else z
    if Z.shape[1] != p.n:
        raise ValueError(f"point dimension {Z.shape[1]} does not match n={p.n}")
    out = np.zeros(Z.shape[0])
    for alpha, c in p.terms.items():
        out += c * np.prod(Z ** np.asarray(alpha), axis=1)
    return float(out[0]) if single else out


def multiply(p: Polynomial, q: Polynomial) -> Polynomial:
    """Exact coefficient convolution."""
    _check_dims(p, q)
    out: dict[MultiIndex, float] = {}
    for a, ca in p.terms.items():
        for b, cb in q.terms.items():
            k = add_index(a, b)
            out[k] = out.get(k, 0.0) + ca * cb
    return Polynomial(p.n, out)


def power(p: Polynomial, k: int) -> Polynomial:
    out = Polynomial.constant(p.n, 1.0)
    for _ in range(k):
        out = multiply(out, p)
    return out


def monomial_matrix(iset: IndexSet, Z: np.ndarray) -> np.ndarray:
    """Values ``Z[j]**alpha_k`` as an array of shape (len(Z), len(iset))."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    # powers per axis, then products; avoids 0**0 issues
    pw = [np.vander(Z[:, i], iset.r + 1, increasing=True) for i in range(iset.n)]
    E = iset.exponents()
    out = np.ones((Z.shape[0], len(iset)))
    for i in range(iset.n):
        out *= pw[i][:, E[:, i]]
    return out


def gram_to_polynomial(G: np.ndarray, iset: IndexSet) -> Polynomial:
    """Polynomial ``b(z)^T G b(z)`` for the monomial vector ``b`` of ``iset``."""
    out: dict[MultiIndex, float] = {}
    for j, a in enumerate(iset.indices):
        for k, b in enumerate(iset.indices):
            if G[j, k] != 0.0:
                key = add_index(a, b)
                out[key] = out.get(key, 0.0) + G[j, k]
    return Polynomial(iset.n, out)


# ---------------------------------------------------------------------------
# evaluable bases for the Gram representation h = phi^T Q phi

class Basis:
    """A basis ``phi_1..phi_N`` of the polynomials of degree at most ``r``."""

    iset: IndexSet

    @property
    def n(self) -> int:
        return self.iset.n

    @property
    def r(self) -> int:
        return self.iset.r

    def __len__(self) -> int:
        return len(self.iset)

    def evaluate(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def monomial_coefficients(self) -> np.ndarray:
        """Matrix M with ``phi_j = sum_alpha M[alpha, j] z^alpha`` (rows follow ``iset``)."""
        raise NotImplementedError

    def is_monomial(self) -> bool:
        return False


@dataclass(frozen=True)
class MonomialBasis(Basis):
    iset: IndexSet

    def evaluate(self, Z: np.ndarray) -> np.ndarray:
        return monomial_matrix(self.iset, Z)

    def monomial_coefficients(self) -> np.ndarray:
        return np.eye(len(self.iset))

    def is_monomial(self) -> bool:
        return True


@dataclass(frozen=True)
class RecurrenceFamily:
    """Orthonormal univariate polynomials from three-term recurrence data.

    ``p_0 = 1/b[0]`` and ``b[k+1] p_{k+1} = (x - a[k]) p_k - b[k] p_{k-1}``.
    """

    a: np.ndarray
    b: np.ndarray

    @property
    def degree(self) -> int:
        return len(self.a) - 1

    def evaluate(self, x: np.ndarray, deg: int | None = None) -> np.ndarray:
        deg = self.degree if deg is None else deg
        if deg > self.degree:
            raise ValueError(f"family has degree {self.degree}, asked for {deg}")
        x = np.asarray(x, dtype=float)
        P = np.zeros((x.size, deg + 1))
        P[:, 0] = 1.0 / self.b[0]
        if deg >= 1:
            P[:, 1] = (x - self.a[0]) * P[:, 0] / self.b[1]
        for k in range(1, deg):
            P[:, k + 1] = ((x - self.a[k]) * P[:, k] - self.b[k] * P[:, k - 1]) / self.b[k + 1]
        return P

    def monomial_coefficients(self, deg: int | None = None) -> np.ndarray:
        """Column k holds the power-basis coefficients of p_k."""
        deg = self.degree if deg is None else deg
        C = np.zeros((deg + 1, deg + 1))
        C[0, 0] = 1.0 / self.b[0]
        if deg >= 1:
            C[1, 1] = C[0, 0] / self.b[1]
            C[0, 1] = -self.a[0] * C[0, 0] / self.b[1]
        for k in range(1, deg):
            shifted = np.zeros(deg + 1)
            shifted[1:] = C[:-1, k]
            C[:, k + 1] = (shifted - self.a[k] * C[:, k] - self.b[k] * C[:, k - 1]) / self.b[k + 1]
        return C


def stieltjes(nodes: np.ndarray, weights: np.ndarray, deg: int) -> RecurrenceFamily:
    """Discretized Stieltjes procedure: recurrence data of the polynomials
    orthonormal for the discrete measure ``sum_j weights[j] delta(nodes[j])``.

    Exact for a Gauss-type rule with more than ``deg`` nodes.
    """
    x = np.asarray(nodes, dtype=float)
    w = np.asarray(weights, dtype=float)
    a = np.zeros(deg + 1)
    b = np.zeros(deg + 1)
    b[0] = np.sqrt(w.sum())
    p_prev = np.zeros_like(x)
    p = np.full_like(x, 1.0 / b[0])
    for k in range(deg + 1):
        a[k] = np.sum(w * x * p * p)
        if k == deg:
            break
        q = (x - a[k]) * p - b[k] * p_prev
        # one reorthogonalization pass against p_k keeps high degrees clean
        q -= np.sum(w * q * p) * p
        b[k + 1] = np.sqrt(np.sum(w * q * q))
        if not np.isfinite(b[k + 1]) or b[k + 1] <= 0:
            raise ValueError(f"discrete measure supports no polynomial of degree {k + 1}")
        p_prev, p = p, q / b[k + 1]
    return RecurrenceFamily(a, b)


@dataclass(frozen=True)
class TensorBasis(Basis):
    """Products ``prod_i p^{(i)}_{alpha_i}(z_i)`` of univariate families."""

    iset: IndexSet
    families: tuple[RecurrenceFamily, ...]

    def evaluate(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        E = self.iset.exponents()
        out = np.ones((Z.shape[0], len(self.iset)))
        for i, fam in enumerate(self.families):
            out *= fam.evaluate(Z[:, i], self.iset.r)[:, E[:, i]]
        return out

    def monomial_coefficients(self) -> np.ndarray:
        iset = self.iset
        pos = iset.position
        cols = [fam.monomial_coefficients(iset.r) for fam in self.families]
        M = np.zeros((len(iset), len(iset)))
        for j, alpha in enumerate(iset.indices):
            # expand the product of univariate coefficient vectors
            terms = {(): 1.0}
            for i, ai in enumerate(alpha):
                c = cols[i][: ai + 1, ai]
                terms = {t + (k,): v * c[k] for t, v in terms.items() for k in range(ai + 1) if c[k] != 0.0}
            for t, v in terms.items():
                M[pos[t], j] += v
        return M


@dataclass(frozen=True)
class TransformedBasis(Basis):
    """``phi = base @ T``: columns of ``T`` are coefficients in ``base``."""

    base: Basis
    T: np.ndarray

    @property
    def iset(self) -> IndexSet:  # type: ignore[override]
        return self.base.iset

    def evaluate(self, Z: np.ndarray) -> np.ndarray:
        return self.base.evaluate(Z) @ self.T

    def monomial_coefficients(self) -> np.ndarray:
        return self.base.monomial_coefficients() @ self.T


def legendre_family(lo: float, hi: float, deg: int) -> RecurrenceFamily:
    """Legendre polynomials orthonormal for Lebesgue measure on [lo, hi]."""
    x, w = np.polynomial.legendre.leggauss(deg + 2)
    half = 0.5 * (hi - lo)
    return stieltjes(half * x + 0.5 * (hi + lo), half * w, deg)


def gram_polynomial(G: np.ndarray, basis: Basis) -> Polynomial:
    """Monomial expansion of ``phi^T G phi``."""
    M = basis.monomial_coefficients()
    return gram_to_polynomial(M @ G @ M.T, basis.iset)


def callable_weight(weight: Polynomial | Callable | None) -> Callable[[np.ndarray], np.ndarray] | None:
    """Normalize a weight (polynomial, vectorized callable or None) to a callable."""
    if weight is None:
        return None
    if isinstance(weight, Polynomial):
        return lambda Z: evaluate(weight, Z)
    return weight


def weight_degree(weight) -> int:
    if weight is None:
        return 0
    if isinstance(weight, Polynomial):
        return weight.degree
    return int(getattr(weight, "degree", 0))


def iter_products(polys: Iterable[Polynomial], n: int) -> Polynomial:
    out = Polynomial.constant(n, 1.0)
    for p in polys:
        out = multiply(out, p)
    return out
