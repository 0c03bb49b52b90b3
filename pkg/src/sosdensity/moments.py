"""Moment oracles ``m_alpha(K) = int_K z^alpha dmu(z)``.

Closed forms cover simplices, boxes, balls, ellipsoids and the separable
orthant measures.  Knapsack polytopes (box cut by one halfspace) are
triangulated and each simplex is handled exactly.  Moments restricted to
halfspaces under the lognormal or exponential measure go through adaptive
simplex cubature.  Tables can be cached on disk.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from itertools import product
from math import lgamma, log
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import convolve
from scipy.spatial import ConvexHull, Delaunay
from scipy.special import gammainc, gammaincc
from scipy.stats import norm

from .cubature import adaptive_simplex
from .polybasis import (IndexSet, MultiIndex, Polynomial, add_index, index_set,
                        monomial_matrix, multiply, power)

EPS = float(np.finfo(float).eps)


class UnsupportedError(ValueError):
    """The requested (domain, measure, event) combination has no oracle."""


class DegenerateDomainError(ValueError):
    """The region has zero volume."""


class InsufficientDegreeError(ValueError):
    """A table does not carry enough moments for the request."""


# ---------------------------------------------------------------------------
# specs

@dataclass(frozen=True)
class DomainSpec:
    """Integration domain.

    kinds: ``simplex`` (canonical simplex), ``box``, ``ball``, ``ellipsoid``
    (image ``T u + t`` of the unit ball), ``orthant`` (nonnegative orthant)
    and ``knapsack`` (box intersected with ``w.z <= c`` or ``w.z >= c``).
    """

    kind: str
    n: int
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()
    center: tuple[float, ...] = ()
    radius: float = 0.0
    matrix: tuple[tuple[float, ...], ...] = ()
    weights: tuple[float, ...] = ()
    rhs: float = 0.0
    sense: str = "<="

    def __post_init__(self):
        if self.kind in ("box", "knapsack"):
            if len(self.lower) != self.n or len(self.upper) != self.n:
                raise ValueError("box bounds must have length n")
            if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
                raise ValueError("box bounds need lower < upper on every axis")
        if self.kind == "knapsack":
            if len(self.weights) != self.n or not any(self.weights):
                raise ValueError("knapsack weights must have length n and not all vanish")
            if self.sense not in ("<=", ">="):
                raise ValueError(f"unknown halfspace sense {self.sense!r}")
        if self.kind == "ball" and self.radius <= 0:
            raise ValueError("ball radius must be positive")
        if self.kind == "ellipsoid":
            T = np.asarray(self.matrix, dtype=float)
            if T.shape != (self.n, self.n) or abs(np.linalg.det(T)) < 1e-300:
                raise ValueError("ellipsoid map must be an invertible n x n matrix")
        if self.kind not in ("simplex", "box", "ball", "ellipsoid", "orthant", "knapsack"):
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def simplex(cls, n: int) -> DomainSpec:
        return cls("simplex", n)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> DomainSpec:
        return cls("box", len(lower), lower=tuple(map(float, lower)), upper=tuple(map(float, upper)))

    @classmethod
    def cube(cls, n: int, lo: float = -1.0, hi: float = 1.0) -> DomainSpec:
        return cls.box([lo] * n, [hi] * n)

    @classmethod
    def ball(cls, n: int, center: Sequence[float] | None = None, radius: float = 1.0) -> DomainSpec:
        c = tuple(map(float, center)) if center is not None else (0.0,) * n
        return cls("ball", n, center=c, radius=float(radius))

    @classmethod
    def ellipsoid(cls, matrix, shift: Sequence[float] | None = None) -> DomainSpec:
        T = np.asarray(matrix, dtype=float)
        n = T.shape[0]
        t = tuple(map(float, shift)) if shift is not None else (0.0,) * n
        return cls("ellipsoid", n, center=t, matrix=tuple(tuple(row) for row in T))

    @classmethod
    def orthant(cls, n: int) -> DomainSpec:
        return cls("orthant", n)

    @classmethod
    def knapsack(cls, lower, upper, weights, rhs: float, sense: str = "<=") -> DomainSpec:
        return cls("knapsack", len(lower), lower=tuple(map(float, lower)), upper=tuple(map(float, upper)),
                   weights=tuple(map(float, weights)), rhs=float(rhs), sense=sense)

    def is_product(self) -> bool:
        return self.kind in ("box", "orthant")

    def axis_interval(self, i: int) -> tuple[float, float]:
        if self.kind == "box":
            return self.lower[i], self.upper[i]
        if self.kind == "orthant":
            return 0.0, np.inf
        raise UnsupportedError(f"{self.kind} domain is not a product of intervals")

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind in ("box", "knapsack"):
            return np.array(self.lower), np.array(self.upper)
        if self.kind == "simplex":
            return np.zeros(self.n), np.ones(self.n)
        if self.kind == "ball":
            c = np.array(self.center)
            return c - self.radius, c + self.radius
        if self.kind == "ellipsoid":
            T = np.array(self.matrix)
            ext = np.sqrt(np.sum(T ** 2, axis=1))
            c = np.array(self.center)
            return c - ext, c + ext
        raise UnsupportedError("orthant has no bounding box")

    def contains(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(Z)
        if self.kind == "simplex":
            return np.all(Z >= 0, axis=1) & (Z.sum(axis=1) <= 1)
        if self.kind == "orthant":
            return np.all(Z >= 0, axis=1)
        if self.kind == "ball":
            return np.sum((Z - np.array(self.center)) ** 2, axis=1) <= self.radius ** 2
        if self.kind == "ellipsoid":
            U = np.linalg.solve(np.array(self.matrix), (Z - np.array(self.center)).T).T
            return np.sum(U ** 2, axis=1) <= 1
        inside = np.all((Z >= np.array(self.lower)) & (Z <= np.array(self.upper)), axis=1)
        if self.kind == "knapsack":
            s = Z @ np.array(self.weights)
            inside &= (s <= self.rhs) if self.sense == "<=" else (s >= self.rhs)
        return inside

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v not in ((), 0.0) or k in ("kind", "n")}


@dataclass(frozen=True)
class MeasureSpec:
    """Reference measure.

    ``lebesgue``: unit density.  ``uniform``: constant density normalized to
    mass one over the domain's box.  ``exponential``: ``exp(-sum z_i)`` on the
    orthant.  ``lognormal``: product of lognormal densities with location
    ``location`` and scale ``scale``.
    """

    kind: str
    location: tuple[float, ...] = ()
    scale: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("lebesgue", "uniform", "exponential", "lognormal"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.kind == "lognormal":
            if len(self.location) != len(self.scale) or not self.scale:
                raise ValueError("lognormal needs matching location and scale vectors")
            if min(self.scale) <= 0:
                raise ValueError("lognormal scales must be positive")

    @classmethod
    def lebesgue(cls) -> MeasureSpec:
        return cls("lebesgue")

    @classmethod
    def uniform(cls) -> MeasureSpec:
        return cls("uniform")

    @classmethod
    def exponential(cls) -> MeasureSpec:
        return cls("exponential")

    @classmethod
    def lognormal(cls, location: Sequence[float], scale: Sequence[float]) -> MeasureSpec:
        return cls("lognormal", tuple(map(float, location)), tuple(map(float, scale)))

    @property
    def separable(self) -> bool:
        return True

    def density(self, Z: np.ndarray, domain: DomainSpec) -> np.ndarray:
        """Density with respect to Lebesgue measure at the rows of ``Z`` (inside K)."""
        Z = np.atleast_2d(Z)
        if self.kind == "lebesgue":
            return np.ones(Z.shape[0])
        if self.kind == "uniform":
            lo, hi = domain.bounding_box()
            return np.full(Z.shape[0], 1.0 / np.prod(hi - lo))
        if self.kind == "exponential":
            return np.exp(-Z.sum(axis=1))
        out = np.ones(Z.shape[0])
        for i, (m, v) in enumerate(zip(self.location, self.scale)):
            z = np.maximum(Z[:, i], 1e-300)
            out *= norm.pdf((np.log(z) - m) / v) / (v * z)
        return out

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v != () or k == "kind"}


def check_pair(domain: DomainSpec, measure: MeasureSpec) -> None:
    ok = {
        "lebesgue": ("simplex", "box", "ball", "ellipsoid", "knapsack"),
        "uniform": ("box", "knapsack"),
        "exponential": ("orthant",),
        "lognormal": ("orthant",),
    }
    if domain.kind not in ok[measure.kind]:
        raise UnsupportedError(f"no moment oracle for {measure.kind} measure on a {domain.kind} domain")
    if measure.kind == "lognormal" and len(measure.location) != domain.n:
        raise ValueError("lognormal parameters do not match the dimension")


# ---------------------------------------------------------------------------
# events

@dataclass(frozen=True)
class Halfspace:
    """``w.z >= c`` (sense ``>=``) or ``w.z <= c``."""

    w: tuple[float, ...]
    c: float
    sense: str = ">="

    def __post_init__(self):
        if self.sense not in ("<=", ">="):
            raise ValueError(f"unknown halfspace sense {self.sense!r}")
        if not any(self.w):
            raise ValueError("halfspace normal must be nonzero")

    def indicator(self, Z: np.ndarray) -> np.ndarray:
        s = np.atleast_2d(Z) @ np.array(self.w)
        return (s >= self.c) if self.sense == ">=" else (s <= self.c)

    def complement(self) -> Halfspace:
        return Halfspace(self.w, self.c, "<=" if self.sense == ">=" else ">=")


@dataclass(frozen=True)
class AxisSlab:
    """``a <= z_axis <= b``; either end may be infinite."""

    axis: int
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"slab needs a < b, got [{self.a}, {self.b}]")

    def indicator(self, Z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(Z)[:, self.axis]
        return (z >= self.a) & (z <= self.b)


@dataclass(frozen=True)
class Intersection:
    parts: tuple

    def indicator(self, Z: np.ndarray) -> np.ndarray:
        out = np.ones(np.atleast_2d(Z).shape[0], dtype=bool)
        for p in self.parts:
            out &= p.indicator(Z)
        return out


EventSet = Halfspace | AxisSlab | Intersection


def intersect(*events) -> EventSet | None:
    parts: list = []
    for e in events:
        if e is None:
            continue
        parts.extend(e.parts if isinstance(e, Intersection) else [e])
    if not parts:
        return None
    return parts[0] if len(parts) == 1 else Intersection(tuple(parts))


def split_event(event) -> tuple[list[AxisSlab], list[Halfspace]]:
    parts = event.parts if isinstance(event, Intersection) else [event]
    slabs = [p for p in parts if isinstance(p, AxisSlab)]
    halves = [p for p in parts if isinstance(p, Halfspace)]
    return slabs, halves


def narrowed_intervals(domain: DomainSpec, slabs: Iterable[AxisSlab]) -> list[tuple[float, float]]:
    """Per-axis intervals of a product domain after intersecting with slabs."""
    iv = [domain.axis_interval(i) for i in range(domain.n)]
    for s in slabs:
        lo, hi = iv[s.axis]
        iv[s.axis] = (max(lo, s.a), min(hi, s.b))
    return iv


# ---------------------------------------------------------------------------
# closed forms

def _log_factorial(k: int) -> float:
    return lgamma(k + 1.0)


def simplex_moment(alpha: Sequence[int]) -> float:
    """``prod alpha_i! / (|alpha| + n)!`` over the canonical simplex."""
    n = len(alpha)
    val = sum(_log_factorial(a) for a in alpha) - _log_factorial(sum(alpha) + n)
    out = float(np.exp(val))
    if not np.isfinite(out):
        raise OverflowError(f"simplex moment for {tuple(alpha)} is not finite")
    return out


def box_moment(alpha: Sequence[int], lower: Sequence[float], upper: Sequence[float]) -> float:
    out = 1.0
    for a, lo, hi in zip(alpha, lower, upper):
        out *= (hi ** (a + 1) - lo ** (a + 1)) / (a + 1)
    return out


def unit_ball_moment(alpha: Sequence[int]) -> float:
    """``prod Gamma((a_i+1)/2) / Gamma((n+|a|)/2 + 1)``; zero if some a_i is odd."""
    if any(a % 2 for a in alpha):
        return 0.0
    n, s = len(alpha), sum(alpha)
    val = sum(lgamma((a + 1) / 2.0) for a in alpha) - lgamma((n + s) / 2.0 + 1.0)
    return float(np.exp(val))


def ellipsoid_moment(alpha: Sequence[int], matrix, shift: Sequence[float] | None = None) -> float:
    """Moment over ``{T u + t : |u| <= 1}`` by expanding ``(T u + t)^alpha``."""
    T = np.asarray(matrix, dtype=float)
    n = T.shape[0]
    det = abs(np.linalg.det(T))
    if det < 1e-300:
        raise ValueError("singular ellipsoid map")
    t = np.zeros(n) if shift is None else np.asarray(shift, dtype=float)
    poly = Polynomial.constant(n, 1.0)
    for i, a in enumerate(alpha):
        if a == 0:
            continue
        terms = {(0,) * n: t[i]}
        for j in range(n):
            e = [0] * n
            e[j] = 1
            terms[tuple(e)] = terms.get(tuple(e), 0.0) + T[i, j]
        poly = multiply(poly, power(Polynomial(n, terms), a))
    return det * sum(c * unit_ball_moment(b) for b, c in poly.terms.items())


def ball_moment(alpha: Sequence[int], center: Sequence[float] | None = None, radius: float = 1.0) -> float:
    n = len(alpha)
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not np.any(c) and radius == 1.0:
        return unit_ball_moment(alpha)
    return ellipsoid_moment(alpha, radius * np.eye(n), c)


def exponential_orthant_moment(alpha: Sequence[int]) -> float:
    with np.errstate(over="ignore"):
        out = float(np.exp(sum(_log_factorial(a) for a in alpha)))
    if not np.isfinite(out):
        raise OverflowError(f"exponential moment for {tuple(alpha)} is not finite")
    return out


def lognormal_moment(alpha: Sequence[int], location: Sequence[float], scale: Sequence[float]) -> float:
    val = sum(a * m + 0.5 * (a * v) ** 2 for a, m, v in zip(alpha, location, scale))
    with np.errstate(over="ignore"):
        out = float(np.exp(val))
    if not np.isfinite(out):
        raise OverflowError(f"lognormal moment for {tuple(alpha)} is not finite")
    return out


# ---------------------------------------------------------------------------
# polytopes: triangulate and integrate each simplex exactly

def _dense_total_degree(n: int, D: int) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(D + 1)] * n, indexing="ij")
    return sum(grids)


def simplex_moments_dense(V: np.ndarray, D: int) -> np.ndarray:
    """All moments of degree <= D over the simplex with vertex rows ``V``.

    Returns a dense array ``M[alpha]`` of shape ``(D+1,)*n`` (entries with
    ``|alpha| > D`` are zero).  Writing ``z = sum_j lam_j v_j`` with ``lam``
    uniform on the standard simplex and expanding, the moment equals
    ``|det| alpha! / (n+|alpha|)!`` times the coefficient of ``t^alpha`` in
    ``prod_j G_j(t)``, ``G_j(t) = sum_beta |beta|!/beta! v_j^beta t^beta``.
    """
    V = np.asarray(V, dtype=float)
    n = V.shape[1]
    det = abs(np.linalg.det(V[1:] - V[0]))
    deg = _dense_total_degree(n, D)
    idx = np.indices((D + 1,) * n)
    lfac = np.array([_log_factorial(k) for k in range(n * D + n + 1)])
    log_multi = lfac[deg] - sum(lfac[idx[i]] for i in range(n))
    mask = deg <= D
    prod_arr = None
    for v in V:
        G = np.exp(log_multi)
        for i in range(n):
            G = G * np.power(v[i], idx[i]) if v[i] != 0 else G * (idx[i] == 0)
        G = np.where(mask, G, 0.0)
        if prod_arr is None:
            prod_arr = G
        else:
            prod_arr = convolve(prod_arr, G, method="direct")[(slice(0, D + 1),) * n]
            prod_arr = np.where(mask, prod_arr, 0.0)
    scale = np.exp(sum(lfac[idx[i]] for i in range(n)) - lfac[np.minimum(deg + n, D + n)])
    return np.where(mask, det * scale * prod_arr, 0.0)


def knapsack_vertices(lower, upper, w, c, sense: str = "<=") -> np.ndarray:
    """Vertices of ``box ∩ {w.z <= c}`` (or ``>=``)."""
    lower, upper, w = (np.asarray(a, dtype=float) for a in (lower, upper, w))
    n = len(lower)
    sign = 1.0 if sense == "<=" else -1.0
    corners = np.array(list(product(*zip(lower, upper))))
    slack = sign * (c - corners @ w)
    tol = 1e-12 * (1 + abs(c) + np.abs(corners @ w).max())
    pts = [p for p, s in zip(corners, slack) if s >= -tol]
    # crossings of the hyperplane with box edges
    for k, p in enumerate(corners):
        for i in range(n):
            if p[i] != lower[i]:
                continue
            q = p.copy()
            q[i] = upper[i]
            sp, sq = c - p @ w, c - q @ w
            if (sp > tol and sq < -tol) or (sp < -tol and sq > tol):
                t = sp / (sp - sq)
                pts.append(p + t * (q - p))
    pts = np.unique(np.round(np.array(pts), 14), axis=0) if pts else np.zeros((0, n))
    return pts


def triangulate(points: np.ndarray, method: str = "delaunay") -> list[np.ndarray]:
    """Split the convex hull of ``points`` into simplices (vertex arrays)."""
    points = np.asarray(points, dtype=float)
    n = points.shape[1]
    if points.shape[0] < n + 1:
        raise DegenerateDomainError("polytope has fewer than n+1 vertices")
    if n == 1:
        return [np.array([[points.min()], [points.max()]])]
    try:
        if method == "delaunay":
            simplices = [points[s] for s in Delaunay(points).simplices]
        elif method == "fan":
            hull = ConvexHull(points)
            apex = hull.vertices[0]
            simplices = [np.vstack([points[apex], points[f]]) for f in hull.simplices if apex not in f]
        else:
            raise ValueError(f"unknown triangulation {method!r}")
    except Exception as exc:  # qhull raises on flat input
        if isinstance(exc, ValueError) and "unknown triangulation" in str(exc):
            raise
        raise DegenerateDomainError(f"polytope is degenerate: {exc}") from None
    out = [S for S in simplices if abs(np.linalg.det(S[1:] - S[0])) > 1e-14]
    if not out:
        raise DegenerateDomainError("polytope has zero volume")
    return out


def polytope_moments_dense(points: np.ndarray, D: int, method: str = "delaunay") -> np.ndarray:
    total = None
    for S in triangulate(points, method):
        M = simplex_moments_dense(S, D)
        total = M if total is None else total + M
    return total


def knapsack_moment(alpha: Sequence[int], domain: DomainSpec, method: str = "delaunay") -> float:
    """Lebesgue moment over ``box ∩ halfspace``."""
    if domain.kind != "knapsack":
        raise ValueError("knapsack_moment needs a knapsack domain")
    pts = knapsack_vertices(domain.lower, domain.upper, domain.weights, domain.rhs, domain.sense)
    M = polytope_moments_dense(pts, sum(alpha), method)
    return float(M[tuple(alpha)])


# ---------------------------------------------------------------------------
# one-dimensional restricted moments

def slab_restricted_moment(axis: int, interval: tuple[float, float], k: int, measure: MeasureSpec,
                           domain: DomainSpec | None = None) -> float:
    """``int_a^b t^k rho_axis(t) dt`` for the axis marginal of a separable measure.

    For Lebesgue and uniform measures ``domain`` supplies the axis range (and the
    uniform normalization); the interval is clipped to it.
    """
    a, b = map(float, interval)
    if not a < b:
        raise ValueError(f"invalid interval [{a}, {b}]")
    if measure.kind in ("lebesgue", "uniform"):
        if domain is None:
            raise ValueError("Lebesgue/uniform slab moments need the box domain")
        lo, hi = domain.axis_interval(axis)
        a, b = max(a, lo), min(b, hi)
        if a >= b:
            return 0.0
        val = (b ** (k + 1) - a ** (k + 1)) / (k + 1)
        return val / (hi - lo) if measure.kind == "uniform" else val
    a = max(a, 0.0)
    if a >= b:
        return 0.0
    if measure.kind == "exponential":
        s = k + 1.0
        if a > s:
            upper = gammaincc(s, a) - (gammaincc(s, b) if np.isfinite(b) else 0.0)
        else:
            upper = (gammainc(s, b) if np.isfinite(b) else 1.0) - gammainc(s, a)
        return float(np.exp(_log_factorial(k)) * upper)
    if measure.kind == "lognormal":
        m, v = measure.location[axis], measure.scale[axis]
        lo = -np.inf if a <= 0 else (log(a) - m - k * v * v) / v
        hi = np.inf if not np.isfinite(b) else (log(b) - m - k * v * v) / v
        mass = norm.sf(lo) - norm.sf(hi) if lo > 0 else norm.cdf(hi) - norm.cdf(lo)
        return float(np.exp(k * m + 0.5 * (k * v) ** 2) * mass)
    raise UnsupportedError(f"no slab moments for {measure.kind}")


# ---------------------------------------------------------------------------
# moment tables

@dataclass
class MomentTable:
    """Moments ``m_alpha`` for all ``|alpha| <= max_degree``."""

    domain: DomainSpec
    measure: MeasureSpec
    max_degree: int
    values: dict[MultiIndex, float] = field(repr=False)
    tolerance: float = 0.0
    errors: dict[MultiIndex, float] | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.domain.n

    def __getitem__(self, alpha: Sequence[int]) -> float:
        alpha = tuple(alpha)
        if sum(alpha) > self.max_degree:
            raise InsufficientDegreeError(f"moment {alpha} exceeds table degree {self.max_degree}")
        return self.values[alpha]

    def vector(self, iset: IndexSet) -> np.ndarray:
        return np.array([self[a] for a in iset.indices])

    def hankel(self, r: int, weight: Polynomial | None = None) -> np.ndarray:
        """``H[a, b] = sum_d w_d m_{a+b+d}`` over ``N(n, r)``."""
        iset = index_set(self.n, r)
        need = 2 * r + (weight.degree if weight is not None else 0)
        if need > self.max_degree:
            raise InsufficientDegreeError(f"need moments up to degree {need}, table has {self.max_degree}")
        w = weight.terms if weight is not None else {(0,) * self.n: 1.0}
        H = np.zeros((len(iset), len(iset)))
        for j, a in enumerate(iset.indices):
            for k in range(j, len(iset)):
                ab = add_index(a, iset.indices[k])
                H[j, k] = sum(c * self.values[add_index(ab, d)] for d, c in w.items())
                H[k, j] = H[j, k]
        return H

    def error_bound(self, alpha: MultiIndex) -> float:
        """Absolute error bound of ``m_alpha``: propagated if tracked, else one rounding."""
        if self.errors is not None:
            return self.errors[alpha]
        return EPS * abs(self.values[alpha]) + self.tolerance

    def hankel_error(self, r: int) -> np.ndarray:
        """Entrywise error bounds of :meth:`hankel` (without weight)."""
        iset = index_set(self.n, r)
        return np.array([[self.error_bound(add_index(a, b)) for b in iset.indices] for a in iset.indices])


def _values_from_dense(M: np.ndarray, n: int, D: int) -> dict[MultiIndex, float]:
    return {a: float(M[a]) for a in index_set(n, D).indices}


def build_table(domain: DomainSpec, measure: MeasureSpec, max_degree: int) -> MomentTable:
    """Complete moment table of ``mu`` over ``K`` up to ``max_degree``."""
    check_pair(domain, measure)
    n, D = domain.n, int(max_degree)
    iset = index_set(n, D)
    kind = domain.kind
    if kind == "simplex":
        vals = {a: simplex_moment(a) for a in iset}
    elif kind == "box":
        vals = {a: box_moment(a, domain.lower, domain.upper) for a in iset}
    elif kind == "ball":
        vals = {a: ball_moment(a, domain.center, domain.radius) for a in iset}
    elif kind == "ellipsoid":
        vals = {a: ellipsoid_moment(a, domain.matrix, domain.center) for a in iset}
    elif kind == "knapsack":
        pts = knapsack_vertices(domain.lower, domain.upper, domain.weights, domain.rhs, domain.sense)
        vals = _values_from_dense(polytope_moments_dense(pts, D), n, D)
    elif measure.kind == "exponential":
        vals = {a: exponential_orthant_moment(a) for a in iset}
    else:
        vals = {a: lognormal_moment(a, measure.location, measure.scale) for a in iset}
    if measure.kind == "uniform":
        vol = float(np.prod(np.subtract(domain.upper, domain.lower)))
        vals = {a: v / vol for a, v in vals.items()}
    return MomentTable(domain, measure, D, vals)


def event_restricted_table(base: MomentTable, event, max_degree: int | None = None,
                           tol: float = 1e-6, budget: int = 1_000_000) -> MomentTable:
    """Moments ``m_alpha(K ∩ C)`` of the base (domain, measure) pair.

    Axis slabs are exact for every separable measure on a product domain.
    Under Lebesgue/uniform measure a box cut by slabs and at most one
    halfspace is a knapsack polytope.  Under the orthant measures a single
    halfspace ``w.z >= c`` with ``w > 0`` uses ``m(K) - int_{K \\ C}``, the
    complement being a simplex integrated by adaptive cubature.
    """
    domain, measure = base.domain, base.measure
    D = base.max_degree if max_degree is None else int(max_degree)
    if D > base.max_degree:
        raise InsufficientDegreeError(f"base table has degree {base.max_degree} < {D}")
    n = domain.n
    iset = index_set(n, D)
    slabs, halves = split_event(event)
    if len(halves) > 1:
        raise UnsupportedError("at most one halfspace per event is supported")
    if domain.kind in ("box", "orthant") and not halves:
        iv = narrowed_intervals(domain, slabs)
        if any(lo >= hi for lo, hi in iv):
            return MomentTable(domain, measure, D, {a: 0.0 for a in iset})
        per_axis = [[slab_restricted_moment(i, iv[i], k, measure, domain) for k in range(D + 1)]
                    for i in range(n)]
        vals = {a: float(np.prod([per_axis[i][a[i]] for i in range(n)])) for a in iset}
        return MomentTable(domain, measure, D, vals)
    if domain.kind == "box" and measure.kind in ("lebesgue", "uniform"):
        iv = narrowed_intervals(domain, slabs)
        if any(lo >= hi for lo, hi in iv):
            return MomentTable(domain, measure, D, {a: 0.0 for a in iset})
        lo, hi = zip(*iv)
        h = halves[0]
        pts = knapsack_vertices(lo, hi, h.w, h.c, h.sense)
        try:
            M = polytope_moments_dense(pts, D)
        except DegenerateDomainError:
            M = np.zeros((D + 1,) * n)
        vals = _values_from_dense(M, n, D)
        if measure.kind == "uniform":
            vol = float(np.prod(np.subtract(domain.upper, domain.lower)))
            vals = {a: v / vol for a, v in vals.items()}
        return MomentTable(domain, measure, D, vals)
    if domain.kind == "orthant" and not slabs and measure.kind in ("exponential", "lognormal"):
        h = halves[0]
        w = np.asarray(h.w, dtype=float)
        if np.any(w <= 0):
            raise UnsupportedError("orthant halfspace events need a positive normal")
        if h.c <= 0:
            # the lower side is empty (or a null set)
            inner = {a: 0.0 for a in iset}
        else:
            V = np.vstack([np.zeros(n), np.diag(h.c / w)])
            scale = np.maximum(1.0, np.abs(base.vector(iset)))

            def f(P):
                return monomial_matrix(iset, P) * measure.density(P, domain)[:, None]

            res = adaptive_simplex(f, V, tol=tol, scale=scale, budget=budget)
            inner = dict(zip(iset.indices, res.value))
        if h.sense == "<=":
            vals = inner
        else:
            vals = {a: base[a] - inner[a] for a in iset}
        return MomentTable(domain, measure, D, vals, tolerance=tol)
    raise UnsupportedError(f"no restricted moments for {measure.kind} on {domain.kind} with this event")


def pushforward_update(table: MomentTable, h: Polynomial, new_max_degree: int) -> MomentTable:
    """Moments of ``h dmu``: ``m'_alpha = sum_beta h_beta m_{alpha+beta}``.

    A first-order bound on the accumulated rounding error is carried along
    in ``errors``; the sums cancel heavily at high degree.
    """
    if table.max_degree < new_max_degree + h.degree:
        raise InsufficientDegreeError(
            f"need source degree {new_max_degree + h.degree}, table has {table.max_degree}")
    vals, errs = {}, {}
    for a in index_set(table.n, new_max_degree):
        s = e = 0.0
        for b, c in h.terms.items():
            ab = add_index(a, b)
            m = table.values[ab]
            s += c * m
            e += abs(c) * (table.error_bound(ab) + EPS * abs(m))
        vals[a], errs[a] = s, e
    return MomentTable(table.domain, table.measure, new_max_degree, vals, table.tolerance, errs)


# ---------------------------------------------------------------------------
# disk cache
#
# Layout (little-endian):
#   magic b"SOSMOM", u16 format version, u16 n, u32 max degree,
#   32-byte sha256 of the canonical domain JSON, 32-byte sha256 of the
#   canonical measure JSON, u64 record count, then per record n x u16
#   exponents followed by one f64 value, in graded index order.

CACHE_ENV = "SOSDENSITY_CACHE_DIR"
CACHE_MAGIC = b"SOSMOM"
CACHE_VERSION = 1


def cache_dir(path: str | os.PathLike | None = None) -> Path:
    if path is not None:
        return Path(path)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "sosdensity"


def _canonical(d: dict) -> bytes:
    return json.dumps(d, sort_keys=True, separators=(",", ":")).encode()


def table_key(domain: DomainSpec, measure: MeasureSpec, max_degree: int) -> str:
    h = hashlib.sha256(_canonical({"domain": domain.to_dict(), "measure": measure.to_dict(),
                                   "max_degree": int(max_degree)}))
    return h.hexdigest()[:32]


def write_table(table: MomentTable, path: str | os.PathLike) -> Path:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    iset = index_set(table.n, table.max_degree)
    header = CACHE_MAGIC + struct.pack("<HHI", CACHE_VERSION, table.n, table.max_degree)
    header += hashlib.sha256(_canonical(table.domain.to_dict())).digest()
    header += hashlib.sha256(_canonical(table.measure.to_dict())).digest()
    header += struct.pack("<Q", len(iset))
    rec = struct.Struct("<" + "H" * table.n + "d")
    body = b"".join(rec.pack(*a, table.values[a]) for a in iset)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".mom")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header + body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_table(path: str | os.PathLike, domain: DomainSpec, measure: MeasureSpec) -> MomentTable:
    data = Path(path).read_bytes()
    if data[:6] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a moment cache file")
    version, n, D = struct.unpack_from("<HHI", data, 6)
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    off = 14
    dh, mh = data[off:off + 32], data[off + 32:off + 64]
    if dh != hashlib.sha256(_canonical(domain.to_dict())).digest() or \
            mh != hashlib.sha256(_canonical(measure.to_dict())).digest():
        raise ValueError(f"{path}: cache file belongs to a different domain or measure")
    (count,) = struct.unpack_from("<Q", data, off + 64)
    rec = struct.Struct("<" + "H" * n + "d")
    pos = off + 72
    vals = {}
    for _ in range(count):
        *a, v = rec.unpack_from(data, pos)
        vals[tuple(a)] = v
        pos += rec.size
    return MomentTable(domain, measure, D, vals)


def cached_table(domain: DomainSpec, measure: MeasureSpec, max_degree: int,
                 directory: str | os.PathLike | None = None) -> MomentTable:
    path = cache_dir(directory) / f"{table_key(domain, measure, max_degree)}.mom"
    if path.exists():
        return read_table(path, domain, measure)
    table = build_table(domain, measure, max_degree)
    write_table(table, path)
    return table



def describe_cache_file(path: str | os.PathLike) -> dict:
    """Header fields of a cache file (dimension, degree, entry count, size)."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(86)
    if head[:6] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a moment cache file")
    version, n, D = struct.unpack_from("<HHI", head, 6)
    (count,) = struct.unpack_from("<Q", head, 78)
    return {"path": str(path), "version": version, "n": n, "max_degree": D, "entries": count,
            "bytes": path.stat().st_size}


def list_cache(directory: str | os.PathLike | None = None) -> list[dict]:
    d = cache_dir(directory)
    if not d.is_dir():
        return []
    return [describe_cache_file(p) for p in sorted(d.glob("*.mom"))]


def purge_cache(directory: str | os.PathLike | None = None) -> int:
    removed = 0
    for entry in list_cache(directory):
        Path(entry["path"]).unlink()
        removed += 1
    return removed
