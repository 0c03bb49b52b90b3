"""Quadrature rules and the two reference-measure representations.

A *reference* is whatever the modeling layer integrates against: it lifts
a weighted (and possibly event-restricted) integral to a Gram matrix over a
polynomial basis.  :class:`MomentReference` works from a moment table and
the monomial basis.  :class:`QuadratureReference` holds a weighted point set
for the measure and works with bases orthonormalized on that point set,
which keeps high-degree problems well conditioned.  Both support the
pushforward ``mu -> h mu``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import laguerre, legendre
from scipy.special import roots_jacobi
from scipy.stats import norm

from .cubature import reference_simplex_rule, simplex_rule
from .moments import (DomainSpec, InsufficientDegreeError, MeasureSpec, MomentTable,
                      UnsupportedError, check_pair, event_restricted_table, knapsack_vertices,
                      narrowed_intervals, pushforward_update, split_event, triangulate)
from .polybasis import (Basis, IndexSet, MonomialBasis, Polynomial, TensorBasis,
                        TransformedBasis, callable_weight, index_set, legendre_family,
                        monomial_matrix, stieltjes, weight_degree)


class InstabilityError(RuntimeError):
    """Numerical breakdown: the basis or pencil is too ill-conditioned."""


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return self.weights @ values

    def scaled(self, factor: np.ndarray) -> QuadratureRule:
        return QuadratureRule(self.nodes, self.weights * factor)


def _empty(n: int) -> QuadratureRule:
    return QuadratureRule(np.zeros((0, n)), np.zeros(0))


def gauss_legendre(a: float, b: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = legendre.leggauss(N)
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


# nodes used for integrands that are not polynomial times the weight
SMOOTH_NODES = {"exponential": 100, "lognormal": 200}
LOGNORMAL_SPAN = 12.0


def axis_rule(measure: MeasureSpec, domain: DomainSpec, axis: int, a: float, b: float,
              degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule for ``int_a^b f(t) rho_axis(t) dt``.

    Exact for polynomials of degree ``degree`` under Lebesgue/uniform measure
    and on exponential tails; high-accuracy otherwise.
    """
    lo, hi = domain.axis_interval(axis) if domain.is_product() else (-np.inf, np.inf)
    a, b = max(a, lo), min(b, hi)
    if not a < b:
        return np.zeros(0), np.zeros(0)
    exact_n = degree // 2 + 1
    kind = measure.kind
    if kind in ("lebesgue", "uniform"):
        x, w = gauss_legendre(a, b, exact_n)
        if kind == "uniform":
            w = w / (hi - lo)
        return x, w
    if kind == "exponential":
        if not np.isfinite(b):
            x, w = laguerre.laggauss(max(exact_n, 2))
            return x + a, w * np.exp(-a)
        x, w = gauss_legendre(a, b, max(exact_n, SMOOTH_NODES["exponential"]))
        return x, w * np.exp(-x)
    if kind == "lognormal":
        m, v = measure.location[axis], measure.scale[axis]
        # substitute t = exp(m + v s); integrand becomes f(t) phi(s)
        top = LOGNORMAL_SPAN + 0.5 * degree * v + 6.0
        sa = -LOGNORMAL_SPAN if a <= 0 else max(-LOGNORMAL_SPAN, (np.log(a) - m) / v)
        sb = top if not np.isfinite(b) else min(top, (np.log(b) - m) / v)
        if not sa < sb:
            return np.zeros(0), np.zeros(0)
        s, w = gauss_legendre(sa, sb, max(exact_n, SMOOTH_NODES["lognormal"]))
        return np.exp(m + v * s), w * norm.pdf(s)
    raise UnsupportedError(f"no axis rule for {kind}")


def tensor_rule(parts: list[tuple[np.ndarray, np.ndarray]]) -> QuadratureRule:
    n = len(parts)
    if any(len(x) == 0 for x, _ in parts):
        return _empty(n)
    grids = np.meshgrid(*[x for x, _ in parts], indexing="ij")
    wgrids = np.meshgrid(*[w for _, w in parts], indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=1)
    weights = np.prod(np.stack([g.reshape(-1) for g in wgrids], axis=1), axis=1)
    return QuadratureRule(nodes, weights)


def polytope_rule(points: np.ndarray, degree: int) -> QuadratureRule:
    q = degree // 2 + 1
    nodes, weights = [], []
    for S in triangulate(points):
        P, W = simplex_rule(S, q)
        nodes.append(P)
        weights.append(W)
    return QuadratureRule(np.vstack(nodes), np.concatenate(weights))


def disk_rule(center, matrix, degree: int) -> QuadratureRule:
    """Polar product rule on an ellipse ``T u + t``, exact to ``degree``."""
    q = degree // 2 + 2
    x, w = roots_jacobi(q, 0, 1)  # weight (1 + x) on [-1, 1]
    rad = (x + 1) / 2
    wr = w / 4
    m = degree + 1
    th = 2 * np.pi * np.arange(m) / m
    U = np.stack([np.outer(rad, np.cos(th)).ravel(), np.outer(rad, np.sin(th)).ravel()], axis=1)
    W = np.outer(wr, np.full(m, 2 * np.pi / m)).ravel()
    T = np.asarray(matrix, dtype=float)
    return QuadratureRule(U @ T.T + np.asarray(center), W * abs(np.linalg.det(T)))


def reference_rule(domain: DomainSpec, measure: MeasureSpec, degree: int) -> QuadratureRule:
    """Rule for ``int_K f dmu``."""
    check_pair(domain, measure)
    n = domain.n
    if domain.is_product():
        return tensor_rule([axis_rule(measure, domain, i, -np.inf, np.inf, degree) for i in range(n)])
    if domain.kind == "simplex":
        U, W = reference_simplex_rule(n, degree // 2 + 1)
        return QuadratureRule(U.copy(), W.copy())
    if domain.kind == "knapsack":
        pts = knapsack_vertices(domain.lower, domain.upper, domain.weights, domain.rhs, domain.sense)
        rule = polytope_rule(pts, degree)
        if measure.kind == "uniform":
            rule = rule.scaled(np.full(len(rule), 1.0 / np.prod(np.subtract(domain.upper, domain.lower))))
        return rule
    if domain.kind in ("ball", "ellipsoid") and n == 2:
        T = np.array(domain.matrix) if domain.kind == "ellipsoid" else domain.radius * np.eye(2)
        return disk_rule(domain.center, T, degree)
    raise UnsupportedError(f"no quadrature rule for a {n}-dimensional {domain.kind}")


def _nested_halfspace(measure, domain, intervals, w, c, sense, degree, axis0=0) -> QuadratureRule:
    """Rule on ``prod intervals ∩ {w.z >= c}`` (or ``<=``) for separable measures, w > 0."""
    n = len(intervals)
    lo = np.array([iv[0] for iv in intervals])
    hi = np.array([iv[1] for iv in intervals])
    if n == 1:
        t = c / w[0]
        a, b = (max(lo[0], t), hi[0]) if sense == ">=" else (lo[0], min(hi[0], t))
        x, wt = axis_rule(measure, domain, axis0, a, b, degree)
        return QuadratureRule(x.reshape(-1, 1), wt)
    rest_w = w[1:]
    rmin = float(rest_w @ lo[1:])
    rmax = float(rest_w @ hi[1:]) if np.all(np.isfinite(hi[1:])) else np.inf
    # breakpoints in z_0 where the remaining constraint changes character
    brk = sorted({(c - rmin) / w[0]} | ({(c - rmax) / w[0]} if np.isfinite(rmax) else set()))
    edges = [lo[0]] + [t for t in brk if lo[0] < t < hi[0]] + [hi[0]]
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, wt = axis_rule(measure, domain, axis0, a, b, degree)
        for xi, wi in zip(x, wt):
            cr = c - w[0] * xi
            if (sense == ">=" and cr <= rmin) or (sense == "<=" and cr >= rmax):
                inner = tensor_rule([axis_rule(measure, domain, axis0 + 1 + k, lo[1 + k], hi[1 + k], degree)
                                     for k in range(n - 1)])
            elif (sense == ">=" and cr > rmax) or (sense == "<=" and cr < rmin):
                continue
            else:
                inner = _nested_halfspace(measure, domain, intervals[1:], rest_w, cr, sense, degree, axis0 + 1)
            if len(inner) == 0:
                continue
            nodes.append(np.column_stack([np.full(len(inner), xi), inner.nodes]))
            weights.append(wi * inner.weights)
    if not nodes:
        return _empty(n)
    return QuadratureRule(np.vstack(nodes), np.concatenate(weights))


def restricted_rule(domain: DomainSpec, measure: MeasureSpec, event, degree: int) -> QuadratureRule:
    """Rule for ``int_{K ∩ C} f dmu``."""
    check_pair(domain, measure)
    n = domain.n
    slabs, halves = split_event(event)
    if len(halves) > 1:
        raise UnsupportedError("at most one halfspace per event is supported")
    if not domain.is_product():
        raise UnsupportedError(f"events on a {domain.kind} domain are not supported in quadrature form")
    iv = narrowed_intervals(domain, slabs)
    if any(lo >= hi for lo, hi in iv):
        return _empty(n)
    if not halves:
        return tensor_rule([axis_rule(measure, domain, i, *iv[i], degree) for i in range(n)])
    h = halves[0]
    if measure.kind in ("lebesgue", "uniform"):
        lo, hi = zip(*iv)
        pts = knapsack_vertices(lo, hi, h.w, h.c, h.sense)
        if len(pts) < n + 1:
            return _empty(n)
        rule = polytope_rule(pts, degree)
        if measure.kind == "uniform":
            lo0, hi0 = domain.bounding_box()
            rule = rule.scaled(np.full(len(rule), 1.0 / np.prod(hi0 - lo0)))
        return rule
    w = np.asarray(h.w, dtype=float)
    if np.any(w <= 0):
        raise UnsupportedError("halfspace events under orthant measures need a positive normal")
    return _nested_halfspace(measure, domain, iv, w, h.c, h.sense, degree)


# ---------------------------------------------------------------------------
# references

def _event_key(event):
    return repr(event)


class MomentReference:
    """Reference measure given by a moment table; monomial Gram bases."""

    def __init__(self, table: MomentTable, densities: tuple[Polynomial, ...] = (),
                 cubature_tol: float = 1e-6, _cache: dict | None = None):
        self.table = table
        self.densities = tuple(densities)
        self.cubature_tol = cubature_tol
        self._cache = {} if _cache is None else _cache

    @property
    def domain(self) -> DomainSpec:
        return self.table.domain

    @property
    def measure(self) -> MeasureSpec:
        return self.table.measure

    @property
    def n(self) -> int:
        return self.table.n

    @property
    def available_degree(self) -> int:
        return self.table.max_degree - sum(h.degree for h in self.densities)

    def moments(self, event=None) -> MomentTable:
        key = (_event_key(event), len(self.densities))
        if key in self._cache:
            return self._cache[key]
        if event is None:
            base = self.table
        else:
            bkey = (_event_key(event), 0)
            if bkey not in self._cache:
                self._cache[bkey] = event_restricted_table(self.table, event, tol=self.cubature_tol)
            base = self._cache[bkey]
        deg = base.max_degree
        for h in self.densities:
            deg -= h.degree
            base = pushforward_update(base, h, deg)
        self._cache[key] = base
        return base

    def default_basis(self, r: int) -> MonomialBasis:
        return MonomialBasis(index_set(self.n, r))

    def lift(self, basis: Basis, weight=None, event=None) -> np.ndarray:
        if weight is not None and not isinstance(weight, Polynomial):
            raise TypeError("moment references need polynomial weights")
        H = self.moments(event).hankel(basis.r, weight)
        if basis.is_monomial():
            return H
        M = basis.monomial_coefficients()
        return M.T @ H @ M

    def gram_error(self, basis: Basis) -> np.ndarray | None:
        """Entrywise error bounds of ``lift(basis)`` (monomial bases only)."""
        if not basis.is_monomial():
            return None
        return self.moments().hankel_error(basis.r)

    def coefficients(self, iset: IndexSet, weight=None, event=None) -> np.ndarray:
        table = self.moments(event)
        w = weight.terms if weight is not None else {(0,) * self.n: 1.0}
        return np.array([sum(c * table[tuple(x + y for x, y in zip(a, d))] for d, c in w.items())
                         for a in iset.indices])

    def reweighted(self, density) -> MomentReference:
        h = density.h if hasattr(density, "h") else density
        return MomentReference(self.table, self.densities + (h,), self.cubature_tol, self._cache)

    def axis_moment(self, axis: int, k: int) -> float:
        """Moment of the axis-marginal measure (product reference only)."""
        from .moments import slab_restricted_moment
        lo, hi = self.domain.axis_interval(axis)
        return slab_restricted_moment(axis, (lo, hi), k, self.measure, self.domain)


class QuadratureReference:
    """Reference measure given by a weighted point set.

    ``degree`` is the polynomial degree the base rules integrate exactly (or
    to high accuracy for non-polynomial densities).  Densities appended by
    :meth:`reweighted` multiply the weights and use up degree.
    """

    def __init__(self, domain: DomainSpec, measure: MeasureSpec, degree: int,
                 densities: tuple = (), cond_limit: float = 1e14, _cache: dict | None = None):
        check_pair(domain, measure)
        self.domain = domain
        self.measure = measure
        self.degree = int(degree)
        self.densities = tuple(densities)
        self.cond_limit = cond_limit
        self._cache = {} if _cache is None else _cache
        self._local: dict = {}

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def available_degree(self) -> int:
        return self.degree - sum(d.degree for d in self.densities)

    def rule(self, event=None) -> QuadratureRule:
        key = _event_key(event)
        if key in self._local:
            return self._local[key]
        if key not in self._cache:
            if event is None:
                self._cache[key] = reference_rule(self.domain, self.measure, self.degree)
            else:
                self._cache[key] = restricted_rule(self.domain, self.measure, event, self.degree)
        rule = self._cache[key]
        for d in self.densities:
            if len(rule):
                # SOS densities are nonnegative; clip rounding noise
                rule = rule.scaled(np.maximum(d.evaluate(rule.nodes), 0.0))
        self._local[key] = rule
        return rule

    def axis_family(self, axis: int, deg: int):
        """Orthonormal family of the axis marginal of the base measure."""
        key = ("family", axis, deg)
        if key not in self._cache:
            if self.domain.is_product():
                x, w = axis_rule(self.measure, self.domain, axis, -np.inf, np.inf, 2 * deg + 2)
                if self.measure.kind == "lognormal":
                    x, w = axis_rule(self.measure, self.domain, axis, -np.inf, np.inf, 4 * deg + 8)
                self._cache[key] = (stieltjes(x, w, deg), x, w)
            else:
                lo, hi = self.domain.bounding_box()
                fam = legendre_family(lo[axis], hi[axis], deg)
                self._cache[key] = (fam, None, None)
        return self._cache[key]

    def tensor_basis(self, r: int) -> TensorBasis:
        fams = tuple(self.axis_family(i, r)[0] for i in range(self.n))
        return TensorBasis(index_set(self.n, r), fams)

    def default_basis(self, r: int) -> TransformedBasis:
        """Basis orthonormal for the current measure (graded Gram-Schmidt by QR)."""
        key = ("basis", r)
        if key in self._local:
            return self._local[key]
        if 2 * r > self.available_degree:
            raise InsufficientDegreeError(f"rule supports degree {self.available_degree}, basis needs {2 * r}")
        base = self.tensor_basis(r)
        rule = self.rule()
        Phi = base.evaluate(rule.nodes)
        S = np.sqrt(rule.weights)[:, None] * Phi
        if not np.all(np.isfinite(S)):
            raise InstabilityError("basis values overflow on the quadrature nodes")
        Rm = np.linalg.qr(S, mode="r")
        d = np.abs(np.diag(Rm))
        if d.min() <= 0 or (d.max() / d.min()) ** 2 > self.cond_limit:
            raise InstabilityError(
                f"orthonormalization breaks down: condition estimate {(d.max() / max(d.min(), 1e-300)) ** 2:.3g}")
        # fix signs so that the leading coefficient is positive
        s = np.sign(np.diag(Rm))
        Rm = Rm * s[:, None]
        T = np.linalg.solve(Rm, np.eye(len(d)))
        basis = TransformedBasis(base, T)
        self._local[key] = basis
        return basis

    def _values(self, basis: Basis, event) -> tuple[np.ndarray, QuadratureRule]:
        rule = self.rule(event)
        key = ("phi", id(basis), _event_key(event))
        if key not in self._local:
            self._local[key] = (basis, basis.evaluate(rule.nodes))
        return self._local[key][1], rule

    def lift(self, basis: Basis, weight=None, event=None) -> np.ndarray:
        need = 2 * basis.r + weight_degree(weight)
        if need > self.available_degree:
            raise InsufficientDegreeError(f"rule supports degree {self.available_degree}, need {need}")
        Phi, rule = self._values(basis, event)
        if len(rule) == 0:
            return np.zeros((len(basis), len(basis)))
        w = rule.weights
        f = callable_weight(weight)
        if f is not None:
            w = w * f(rule.nodes)
        G = Phi.T @ (w[:, None] * Phi)
        return 0.5 * (G + G.T)

    def coefficients(self, iset: IndexSet, weight=None, event=None) -> np.ndarray:
        rule = self.rule(event)
        if len(rule) == 0:
            return np.zeros(len(iset))
        w = rule.weights
        f = callable_weight(weight)
        if f is not None:
            w = w * f(rule.nodes)
        return w @ monomial_matrix(iset, rule.nodes)

    def reweighted(self, density) -> QuadratureReference:
        return QuadratureReference(self.domain, self.measure, self.degree, self.densities + (density,),
                                   self.cond_limit, self._cache)


Reference = MomentReference | QuadratureReference


def as_reference(source) -> Reference:
    if isinstance(source, (MomentReference, QuadratureReference)):
        return source
    if isinstance(source, MomentTable):
        return MomentReference(source)
    raise TypeError(f"cannot use {type(source).__name__} as a reference measure")


def axis_weight(family, axis: int, k: int, degree: int) -> Callable:
    """Vectorized ``z -> p_k(z_axis)`` carrying its degree for bookkeeping."""

    def f(Z):
        return family.evaluate(np.atleast_2d(Z)[:, axis], k)[:, k]

    f.degree = degree
    return f
