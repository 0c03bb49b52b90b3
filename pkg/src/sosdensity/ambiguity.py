"""Linear constraints on SOS densities.

A density ``h`` with Gram matrix ``Q`` enters every constraint through
``<c, h> = sum_alpha c_alpha h_alpha``, i.e. through integrals
``int_{K ∩ C} w h dmu``.  A :class:`LinearFunctional` records such
integrals symbolically as (coefficient, weight, event) terms so that it can
be lifted to a Gram-space matrix under any reference measure and basis; it
may also carry explicit coefficients ``c_alpha``.

An :class:`AmbiguitySet` holds one density block per reference measure
(one for plain sets, several for mixtures) plus nonnegative auxiliary
variables (mixture weights, histogram slacks).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .moments import (AxisSlab, InsufficientDegreeError, MomentTable, UnsupportedError, intersect,
                      slab_restricted_moment)
from .polybasis import Basis, IndexSet, MultiIndex, Polynomial, add_index, index_set
from .quadrature import MomentReference, QuadratureReference, as_reference, axis_weight

RELATIONS = ("=", "<=", ">=", "interval")


@dataclass(frozen=True)
class Term:
    coef: float
    weight: Polynomial | Callable | None = None
    event: object = None


@dataclass(frozen=True)
class LinearFunctional:
    """``h -> sum_k coef_k int_{K ∩ C_k} w_k h dmu + sum_alpha c_alpha h_alpha``."""

    terms: tuple[Term, ...] = ()
    coefficients: Mapping[MultiIndex, float] | None = None
    label: str = ""

    @classmethod
    def integral(cls, weight=None, event=None, coef: float = 1.0, label: str = "") -> LinearFunctional:
        return cls((Term(float(coef), weight, event),), None, label)

    @classmethod
    def explicit(cls, coefficients: Mapping[Sequence[int], float], label: str = "") -> LinearFunctional:
        return cls((), {tuple(a): float(c) for a, c in coefficients.items()}, label)

    def __add__(self, other: LinearFunctional) -> LinearFunctional:
        coefs = dict(self.coefficients or {})
        for a, c in (other.coefficients or {}).items():
            coefs[a] = coefs.get(a, 0.0) + c
        return LinearFunctional(self.terms + other.terms, coefs or None, self.label or other.label)

    def scale(self, s: float) -> LinearFunctional:
        terms = tuple(Term(s * t.coef, t.weight, t.event) for t in self.terms)
        coefs = {a: s * c for a, c in self.coefficients.items()} if self.coefficients else None
        return LinearFunctional(terms, coefs, self.label)

    @property
    def degree(self) -> int:
        """Largest weight degree among the terms (callables carry ``.degree``)."""
        from .polybasis import weight_degree
        return max([weight_degree(t.weight) for t in self.terms] + [0])

    def lift(self, reference, basis: Basis) -> np.ndarray:
        """Matrix ``M`` with ``<M, Q> = <c, h>`` for ``h = phi^T Q phi``."""
        N = len(basis)
        out = np.zeros((N, N))
        for t in self.terms:
            if t.coef != 0.0:
                out += t.coef * reference.lift(basis, t.weight, t.event)
        if self.coefficients:
            iset = basis.iset
            H = np.zeros((N, N))
            for j, a in enumerate(iset.indices):
                for k in range(j, N):
                    v = self.coefficients.get(add_index(a, iset.indices[k]), 0.0)
                    H[j, k] = H[k, j] = v
            if not basis.is_monomial():
                M = basis.monomial_coefficients()
                H = M.T @ H @ M
            out += H
        return out

    def coefficient_vector(self, reference, iset: IndexSet) -> np.ndarray:
        """``c`` over ``iset`` (monomial pairing)."""
        c = np.zeros(len(iset))
        for t in self.terms:
            if t.coef != 0.0:
                if t.weight is not None and not isinstance(t.weight, Polynomial):
                    raise UnsupportedError("explicit coefficients need polynomial weights")
                c += t.coef * reference.coefficients(iset, t.weight, t.event)
        if self.coefficients:
            pos = iset.position
            for a, v in self.coefficients.items():
                if a not in pos:
                    raise InsufficientDegreeError(f"coefficient index {a} outside N({iset.n},{iset.r})")
                c[pos[a]] += v
        return c

    def evaluate(self, h: Polynomial, reference) -> float:
        """``<c, h>`` for a density given in monomial form."""
        deg = max([h.degree, 0] + [sum(a) for a in (self.coefficients or {})])
        iset = index_set(h.n, deg)
        return float(self.coefficient_vector(reference, iset) @ h.to_vector(iset))


@dataclass(frozen=True)
class AmbiguityConstraint:
    """``sum_b <f_b, h_b> + aux . u  (relation)  rhs``.

    ``functionals[b]`` applies to density block ``b``; ``None`` means the
    block does not enter.  A single functional given to a multi-block set is
    applied to every block.
    """

    functionals: tuple[LinearFunctional | None, ...]
    relation: str
    rhs: float | tuple[float, float]
    aux: Mapping[int, float] = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        if self.relation == "interval":
            lo, hi = self.rhs
            if lo > hi:
                raise ValueError(f"interval needs lo <= hi, got [{lo}, {hi}]")

    @property
    def functional(self) -> LinearFunctional | None:
        return self.functionals[0]

    def shifted(self, offset: int) -> AmbiguityConstraint:
        return AmbiguityConstraint(self.functionals, self.relation, self.rhs,
                                   {k + offset: v for k, v in self.aux.items()}, self.label)

    def for_blocks(self, nblocks: int) -> tuple[LinearFunctional | None, ...]:
        if len(self.functionals) == nblocks:
            return self.functionals
        if len(self.functionals) == 1:
            return self.functionals * nblocks
        raise ValueError(f"constraint has {len(self.functionals)} blocks, set has {nblocks}")


@dataclass(frozen=True)
class ConstraintBlock:
    """Constraints sharing local auxiliary variables ``0..n_aux-1``."""

    constraints: tuple[AmbiguityConstraint, ...]
    n_aux: int = 0
    aux_labels: tuple[str, ...] = ()


def _single(f: LinearFunctional, relation: str, rhs, label: str) -> AmbiguityConstraint:
    if isinstance(rhs, (tuple, list)):
        lo, hi = float(rhs[0]), float(rhs[1])
        return AmbiguityConstraint((f,), "interval", (lo, hi), {}, label)
    return AmbiguityConstraint((f,), relation, float(rhs), {}, label)


def _check_degree(reference, r: int, extra: int = 0) -> None:
    ref = as_reference(reference)
    if 2 * r + extra > ref.available_degree:
        raise InsufficientDegreeError(
            f"reference supports degree {ref.available_degree}, need {2 * r + extra}")


def monomial_weight(n: int, beta: Sequence[int]) -> Polynomial:
    return Polynomial(n, {tuple(beta): 1.0})


# ---------------------------------------------------------------------------
# builders

def normalization(reference, r: int) -> AmbiguityConstraint:
    """``int_K h dmu = 1``."""
    _check_degree(reference, r)
    return _single(LinearFunctional.integral(label="normalization"), "=", 1.0, "normalization")


def moment_constraint(reference, r: int, beta: Sequence[int], rhs, relation: str = "=") -> AmbiguityConstraint:
    """``int z^beta h dmu`` equal to (or within) ``rhs``; an interval ``(lo, hi)`` relaxes it."""
    ref = as_reference(reference)
    beta = tuple(int(b) for b in beta)
    if len(beta) != ref.n:
        raise ValueError("moment exponent has the wrong dimension")
    _check_degree(ref, r, sum(beta))
    f = LinearFunctional.integral(monomial_weight(ref.n, beta), label=f"moment{beta}")
    return _single(f, relation, rhs, f"moment{beta}")


def confidence_constraint(reference, r: int, event, gamma, relation: str = "=") -> AmbiguityConstraint:
    """``P[z in C] (relation) gamma`` under ``h dmu``."""
    _check_degree(reference, r)
    return _single(LinearFunctional.integral(event=event, label="confidence"), relation, gamma, "confidence")


def conditional_probability_constraint(reference, r: int, given, event, gamma: float,
                                       relation: str = "=") -> AmbiguityConstraint:
    """``P[C1 ∩ C2] - gamma P[C1] (relation) 0``, the multiplied-out form of
    ``P[C2 | C1] (relation) gamma``."""
    _check_degree(reference, r)
    f = (LinearFunctional.integral(event=intersect(given, event))
         + LinearFunctional.integral(event=given, coef=-gamma))
    return _single(f, relation, 0.0, "conditional probability")


def conditional_moment_constraint(reference, r: int, beta: Sequence[int], event, gamma: float,
                                  relation: str = "=") -> AmbiguityConstraint:
    """``E[z^beta 1_C] - gamma P[C] (relation) 0``."""
    ref = as_reference(reference)
    beta = tuple(int(b) for b in beta)
    _check_degree(ref, r, sum(beta))
    f = (LinearFunctional.integral(monomial_weight(ref.n, beta), event)
         + LinearFunctional.integral(event=event, coef=-gamma))
    return _single(f, relation, 0.0, f"conditional moment{beta}")


def marginal_matching(reference, r: int, axis: int) -> ConstraintBlock:
    """Force the ``axis`` marginal of ``h dmu`` to equal that of ``mu``.

    The reference must be the product of the target marginals.  Moment
    references get the coefficient form: ``sum_{alpha_i = l} h_alpha
    prod_{j != i} m_{alpha_j}(K_j)`` equals 1 for ``l = 0`` and 0 for
    ``l = 1..2r``.  Quadrature references get the equivalent form
    ``int h p_l(z_i) dmu = int p_l dmu_i`` with ``p_l`` orthonormal for the
    marginal, which stays well conditioned at high degree.
    """
    ref = as_reference(reference)
    dom = ref.domain
    if not dom.is_product():
        raise UnsupportedError("marginal matching needs a product domain and product reference measure")
    if ref.densities:
        raise UnsupportedError("marginal matching needs the base (product) reference measure")
    if not 0 <= axis < ref.n:
        raise ValueError(f"axis {axis} out of range")
    _check_degree(ref, r, 2 * r)
    n = ref.n
    out = []
    if isinstance(ref, MomentReference):
        D = 2 * r
        axm = [[ref.axis_moment(j, k) for k in range(D + 1)] for j in range(n)]
        for ell in range(D + 1):
            coefs = {}
            for a in index_set(n, D).indices:
                if a[axis] != ell:
                    continue
                coefs[a] = float(np.prod([axm[j][a[j]] for j in range(n) if j != axis]))
            f = LinearFunctional.explicit(coefs, label=f"marginal{axis}[{ell}]")
            out.append(AmbiguityConstraint((f,), "=", 1.0 if ell == 0 else 0.0, {}, f"marginal{axis}[{ell}]"))
        return ConstraintBlock(tuple(out))
    fam, x, w = ref.axis_family(axis, 2 * r)
    mass = float(np.sum(w)) if w is not None else None
    if mass is None:
        raise UnsupportedError("marginal matching needs a product reference measure")
    # int p_l dmu_i = sqrt(mass) for l = 0, else 0; scale so the rhs reads delta_{l0}
    for ell in range(2 * r + 1):
        wt = _scaled_axis_weight(fam, axis, ell, 1.0 / np.sqrt(mass))
        f = LinearFunctional.integral(wt, label=f"marginal{axis}[{ell}]")
        out.append(AmbiguityConstraint((f,), "=", 1.0 if ell == 0 else 0.0, {}, f"marginal{axis}[{ell}]"))
    return ConstraintBlock(tuple(out))


def _scaled_axis_weight(fam, axis: int, ell: int, s: float):
    base = axis_weight(fam, axis, ell, ell)

    def f(Z):
        return s * base(Z)

    f.degree = ell
    return f


def histogram_matching(reference, r: int, axes: int | Sequence[int], bins: Sequence[tuple[float, float]],
                       targets, mode: str = "exact", tol: float | None = None) -> ConstraintBlock:
    """Match marginal bin probabilities on one or several axes.

    ``targets`` holds one probability per bin (a list of such sequences when
    several axes are given).  ``mode='l1'`` allows a total absolute mismatch
    of ``tol``, shared by all listed axes, through slack pairs
    ``functional - target = s_plus - s_minus``.
    """
    if isinstance(axes, (int, np.integer)):
        axes = [int(axes)]
        targets = [targets]
    axes = list(axes)
    if len(targets) != len(axes):
        raise ValueError("need one target sequence per axis")
    edges = sorted(bins)
    for (a0, b0), (a1, b1) in zip(edges[:-1], edges[1:]):
        if a1 < b0:
            raise ValueError(f"bins [{a0}, {b0}] and [{a1}, {b1}] overlap")
    for t in targets:
        if len(t) != len(bins):
            raise ValueError("need one target per bin")
        if min(t) < 0:
            raise ValueError("bin targets must be nonnegative")
    if mode not in ("exact", "l1"):
        raise ValueError(f"unknown histogram mode {mode!r}")
    if mode == "l1" and (tol is None or tol < 0):
        raise ValueError("l1 mode needs a nonnegative tolerance")
    _check_degree(reference, r)
    nb = len(bins)
    out = []
    labels = []
    for k, ax in enumerate(axes):
        for j, (a, b) in enumerate(bins):
            f = LinearFunctional.integral(event=AxisSlab(ax, a, b), label=f"bin{ax}[{a},{b}]")
            aux = {}
            if mode == "l1":
                p = 2 * (k * nb + j)
                aux = {p: -1.0, p + 1: 1.0}
                labels += [f"s+{ax}[{j}]", f"s-{ax}[{j}]"]
            out.append(AmbiguityConstraint((f,), "=", float(targets[k][j]), aux, f"bin{ax}[{a},{b}]"))
    if mode == "exact":
        return ConstraintBlock(tuple(out))
    naux = 2 * nb * len(axes)
    budget = AmbiguityConstraint((None,), "<=", float(tol), {i: 1.0 for i in range(naux)}, "l1 budget")
    return ConstraintBlock(tuple(out) + (budget,), naux, tuple(labels))


def bin_masses(reference, axis: int, bins: Sequence[tuple[float, float]]) -> list[float]:
    """Probabilities of the bins under the axis marginal of the base measure."""
    ref = as_reference(reference)
    return [slab_restricted_moment(axis, (a, b), 0, ref.measure, ref.domain) for a, b in bins]


# ---------------------------------------------------------------------------
# sets

@dataclass
class AmbiguitySet:
    """Densities ``h_b`` (one per reference) with linear constraints."""

    references: tuple
    r: int
    constraints: list[AmbiguityConstraint] = field(default_factory=list)
    n_aux: int = 0
    aux_labels: list[str] = field(default_factory=list)
    sealed: bool = False

    @classmethod
    def plain(cls, reference, r: int) -> AmbiguitySet:
        ref = as_reference(reference)
        out = cls((ref,), r)
        out.add(normalization(ref, r))
        return out

    @property
    def domain(self):
        return self.references[0].domain

    @property
    def measure(self):
        return self.references[0].measure

    @property
    def n(self) -> int:
        return self.references[0].n

    @property
    def nblocks(self) -> int:
        return len(self.references)

    def new_aux(self, label: str = "") -> int:
        self._check_open()
        self.n_aux += 1
        self.aux_labels.append(label)
        return self.n_aux - 1

    def add(self, item: AmbiguityConstraint | ConstraintBlock) -> AmbiguitySet:
        self._check_open()
        if isinstance(item, ConstraintBlock):
            off = self.n_aux
            self.n_aux += item.n_aux
            self.aux_labels += list(item.aux_labels) or [""] * item.n_aux
            self.constraints += [c.shifted(off) for c in item.constraints]
        else:
            if any(k >= self.n_aux for k in item.aux):
                raise ValueError("constraint refers to an unallocated auxiliary variable")
            item.for_blocks(self.nblocks)
            self.constraints.append(item)
        return self

    def extend(self, items) -> AmbiguitySet:
        for it in items:
            self.add(it)
        return self

    def seal(self) -> AmbiguitySet:
        self.sealed = True
        return self

    def _check_open(self):
        if self.sealed:
            raise RuntimeError("ambiguity set is sealed")

    def reweighted(self, densities: Sequence) -> AmbiguitySet:
        """Same constraints with each reference pushed forward through ``densities``."""
        refs = tuple(ref.reweighted(d) for ref, d in zip(self.references, densities))
        return AmbiguitySet(refs, self.r, list(self.constraints), self.n_aux, list(self.aux_labels))


def ambiguity_set(reference, r: int, constraints=()) -> AmbiguitySet:
    return AmbiguitySet.plain(reference, r).extend(constraints)


def mixture_ambiguity(references: Sequence, r: int,
                      weight_bounds: Sequence[tuple[float, float] | None] | None = None) -> AmbiguitySet:
    """Distributions ``sum_i h_i mu_i`` with mixture weights ``gamma_i = int h_i dmu_i``.

    ``gamma >= 0`` sums to one; ``weight_bounds[i] = (lo, hi)`` boxes ``gamma_i``.
    """
    refs = tuple(as_reference(x) for x in references)
    if not refs:
        raise ValueError("mixture needs at least one component")
    if any(ref.domain != refs[0].domain for ref in refs):
        raise ValueError("mixture components must share the domain")
    for ref in refs:
        _check_degree(ref, r)
    p = len(refs)
    out = AmbiguitySet(refs, r)
    for i in range(p):
        out.new_aux(f"gamma{i}")
    for i in range(p):
        fs = tuple(LinearFunctional.integral(label="mass") if b == i else None for b in range(p))
        out.add(AmbiguityConstraint(fs, "=", 0.0, {i: -1.0}, f"component {i} mass"))
    out.add(AmbiguityConstraint((None,) * p, "=", 1.0, {i: 1.0 for i in range(p)}, "weights sum"))
    for i, bnd in enumerate(weight_bounds or []):
        if bnd is None:
            continue
        out.add(AmbiguityConstraint((None,) * p, "interval", (float(bnd[0]), float(bnd[1])), {i: 1.0},
                                    f"weight {i} bounds"))
    return out


__all__ = [
    "Term", "LinearFunctional", "AmbiguityConstraint", "ConstraintBlock", "AmbiguitySet",
    "normalization", "moment_constraint", "confidence_constraint", "conditional_probability_constraint",
    "conditional_moment_constraint", "marginal_matching", "histogram_matching", "bin_masses",
    "mixture_ambiguity", "ambiguity_set", "monomial_weight", "MomentTable", "QuadratureReference",
]
