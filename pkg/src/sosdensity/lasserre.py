"""Upper (and lower) bounds on polynomial extrema from SOS densities.

For a polynomial ``p`` and a reference measure ``mu`` the bound of order
``r`` is the extremal generalized eigenvalue of the pencil ``(A, B)`` with
``A = int p phi phi^T dmu`` and ``B = int phi phi^T dmu``.  The eigenvector
``v`` gives the density ``h = (v^T phi)^2``.  The iterated heuristic pushes
``mu`` forward through the density found and repeats.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, eigh, solve_triangular

from .moments import DomainSpec, MeasureSpec, MomentTable, build_table, pushforward_update
from .polybasis import Basis, MonomialBasis, Polynomial, gram_polynomial, index_set
from .quadrature import InstabilityError, MomentReference, QuadratureReference

COND_LIMIT = 1e14
DEGENERACY_TOL = 1e-9


@dataclass
class GenEigPair:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if self.A.shape != self.B.shape or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("pencil matrices must be square and of equal size")
        for M in (self.A, self.B):
            if np.all(np.isfinite(M)) and not np.allclose(M, M.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(M).max())):
                raise ValueError("pencil matrices must be symmetric")


def assemble_AB(p: Polynomial, table: MomentTable, r: int) -> GenEigPair:
    """Hankel pencil over the monomials of degree at most ``r``."""
    return GenEigPair(table.hankel(r, p), table.hankel(r))


def _echelon_vector(V: np.ndarray, coords: np.ndarray | None) -> np.ndarray:
    """First vector of the reduced row-echelon basis of ``span(V)``.

    Rows are read in graded order (in ``coords`` if given); pivots are taken
    greedily, so the vector returned has the earliest possible pivot and
    vanishes on the other pivot coordinates.
    """
    C = V if coords is None else coords @ V
    k = V.shape[1]
    if k == 1:
        return V[:, 0]
    M = C.copy()
    Vw = V.copy()
    col = 0
    for row in range(M.shape[0]):
        if col == k:
            break
        j = col + int(np.argmax(np.abs(M[row, col:])))
        if abs(M[row, j]) <= 1e-8 * np.abs(M).max():
            continue
        M[:, [col, j]] = M[:, [j, col]]
        Vw[:, [col, j]] = Vw[:, [j, col]]
        piv = M[row, col]
        M[:, col] /= piv
        Vw[:, col] /= piv
        for c in range(k):
            if c != col:
                f = M[row, c]
                M[:, c] -= f * M[:, col]
                Vw[:, c] -= f * Vw[:, col]
        col += 1
    return Vw[:, 0]


def extremal_gen_eig(pair: GenEigPair, sense: str = "min", coordinates: np.ndarray | None = None,
                     cond_limit: float = COND_LIMIT, degeneracy_tol: float = DEGENERACY_TOL,
                     gram_error: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Extremal eigenpair of ``A v = lam B v`` with ``v^T B v = 1``.

    A degenerate extremal eigenvalue (within ``degeneracy_tol * max(1, |lam|)``)
    resolves to the first vector of the reduced echelon basis of the
    eigenspace, read in the graded coordinates ``coordinates @ v``.  The value returned is
    ``v^T A v``.  ``gram_error`` holds entrywise error bounds on ``B``; if
    their scaled norm reaches the smallest eigenvalue, ``B`` is no longer
    certified positive definite.

    Raises
    ------
    InstabilityError
        if ``B`` is not numerically positive definite, its diagonally scaled
        condition number exceeds ``cond_limit``, or the residual check fails.
    """
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    A, B = pair.A, pair.B
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise InstabilityError("pencil has non-finite entries")
    dB = np.diag(B)
    if np.any(dB <= 0) or not np.all(np.isfinite(B)):
        raise InstabilityError("Gram matrix has a nonpositive diagonal entry")
    D = 1.0 / np.sqrt(dB)
    Bs = B * D[:, None] * D[None, :]
    As = A * D[:, None] * D[None, :]
    ev = np.linalg.eigvalsh(Bs)
    if ev[0] <= 0 or ev[-1] / ev[0] > cond_limit:
        cond = np.inf if ev[0] <= 0 else ev[-1] / ev[0]
        raise InstabilityError(f"Gram matrix condition number {cond:.3g} exceeds {cond_limit:.3g}")
    if gram_error is not None:
        e = np.linalg.norm(gram_error * D[:, None] * D[None, :], 2)
        if e >= ev[0]:
            raise InstabilityError(f"Gram matrix not certified positive definite: error bound {e:.3g} "
                                   f">= smallest eigenvalue {ev[0]:.3g}")
    L = cholesky(Bs, lower=True)
    C = solve_triangular(L, solve_triangular(L, As, lower=True).T, lower=True)
    C = 0.5 * (C + C.T)
    w, U = eigh(C)
    if sense == "max":
        w, U = -w[::-1], U[:, ::-1]
    lam = w[0]
    tol = degeneracy_tol * max(1.0, abs(lam))
    k = int(np.sum(w - lam <= tol))
    V = D[:, None] * solve_triangular(L.T, U[:, :k], lower=False)
    v = _echelon_vector(V, coordinates)
    v = v / np.sqrt(v @ B @ v)
    # sign: first nonzero graded coordinate positive
    c = v if coordinates is None else coordinates @ v
    nz = np.flatnonzero(np.abs(c) > 1e-12 * np.abs(c).max())
    if nz.size and c[nz[0]] < 0:
        v = -v
    value = float(v @ A @ v)
    # residual at the vector's own Rayleigh quotient; a vector taken from a
    # cluster may sit up to the cluster width away from the extremal value
    width = float(w[k - 1] - w[0])
    Bv = B @ v
    resid = np.linalg.norm(A @ v - value * Bv)
    bound = 1e-8 * (np.linalg.norm(A, 2) + abs(value) * np.linalg.norm(B, 2)) * max(1.0, np.linalg.norm(v))
    if resid > bound + width * np.linalg.norm(Bv):
        raise InstabilityError(f"eigen-residual {resid:.3g} exceeds {bound:.3g}")
    return value, v


@dataclass
class DensityCertificate:
    """SOS density ``h = phi^T Q phi`` of degree ``2r`` with its objective value."""

    value: float
    r: int
    basis: Basis
    gram: np.ndarray
    normalization_residual: float = 0.0
    reference: object = field(default=None, repr=False)

    @property
    def degree(self) -> int:
        return 2 * self.r

    @property
    def h(self) -> Polynomial:
        return gram_polynomial(self.gram, self.basis)

    def evaluate(self, Z: np.ndarray) -> np.ndarray:
        Phi = self.basis.evaluate(np.atleast_2d(Z))
        return np.einsum("ij,ij->i", Phi @ self.gram, Phi)

    def expectation(self, weight=None, event=None) -> float:
        """``int weight h dmu`` over ``event`` under the reference it was built on."""
        G = self.reference.lift(self.basis, weight, event)
        return float(np.sum(G * self.gram))


def density_from_eigvec(v: np.ndarray, basis: Basis, value: float, reference=None,
                        B: np.ndarray | None = None) -> DensityCertificate:
    Q = np.outer(v, v)
    resid = abs(float(v @ B @ v) - 1.0) if B is not None else 0.0
    return DensityCertificate(float(value), basis.r, basis, Q, resid, reference)


def _coordinates(basis: Basis) -> np.ndarray | None:
    T = getattr(basis, "T", None)
    return None if T is None else T


def _solve_order(p: Polynomial, reference, r: int, sense: str) -> DensityCertificate:
    basis = reference.default_basis(r)
    A = reference.lift(basis, p)
    B = reference.lift(basis)
    err = reference.gram_error(basis) if hasattr(reference, "gram_error") else None
    value, v = extremal_gen_eig(GenEigPair(A, B), sense, _coordinates(basis), gram_error=err)
    return density_from_eigvec(v, basis, value, reference, B)


def _reference(domain, measure, degree, method):
    if method == "monomial":
        return MomentReference(build_table(domain, measure, degree))
    if method == "quadrature":
        return QuadratureReference(domain, measure, degree)
    raise ValueError(f"unknown method {method!r}")


def lasserre_bound(p: Polynomial, domain: DomainSpec, measure: MeasureSpec, r: int, sense: str = "min",
                   method: str = "quadrature", reference=None) -> DensityCertificate:
    """Bound of order ``r`` on ``min_K p`` (``sense='min'``) or ``max_K p``.

    ``method='monomial'`` works from moments in the monomial basis;
    ``'quadrature'`` uses a basis orthonormal on a quadrature rule.
    """
    if r < 0:
        raise ValueError("order must be nonnegative")
    ref = reference if reference is not None else _reference(domain, measure, 2 * r + p.degree, method)
    return _solve_order(p, ref, r, sense)


@dataclass
class HeuristicResult:
    certificates: list[DensityCertificate]
    unstable: bool = False
    message: str = ""

    @property
    def values(self) -> list[float]:
        return [c.value for c in self.certificates]

    @property
    def value(self) -> float:
        return self.certificates[-1].value if self.certificates else float("nan")


def heuristic_bound(p: Polynomial, domain: DomainSpec, measure: MeasureSpec, r: int, R: int,
                    sense: str = "min", method: str = "quadrature") -> HeuristicResult:
    """Iterate ``R`` times: solve at order ``r`` and push the measure forward.

    Stops early, flagging ``unstable``, if a step breaks down numerically;
    the certificates found so far are kept.
    """
    if r < 1 or R < 1:
        raise ValueError("order and iteration count must be positive")
    d = p.degree
    certs: list[DensityCertificate] = []
    if method == "monomial":
        table = build_table(domain, measure, 2 * r * R + d)
        for k in range(1, R + 1):
            ref = MomentReference(table)
            try:
                cert = _solve_order(p, ref, r, sense)
            except InstabilityError as exc:
                return HeuristicResult(certs, True, f"iteration {k}: {exc}")
            certs.append(cert)
            if k < R:
                table = pushforward_update(table, cert.h, 2 * r * (R - k) + d)
        return HeuristicResult(certs)
    ref = _reference(domain, measure, 2 * r * R + d, method)
    for k in range(1, R + 1):
        try:
            cert = _solve_order(p, ref, r, sense)
        except InstabilityError as exc:
            return HeuristicResult(certs, True, f"iteration {k}: {exc}")
        certs.append(cert)
        ref = ref.reweighted(cert)
    return HeuristicResult(certs)


def monomial_pencil(p: Polynomial, domain: DomainSpec, measure: MeasureSpec, r: int) -> GenEigPair:
    return assemble_AB(p, build_table(domain, measure, 2 * r + p.degree), r)


__all__ = [
    "GenEigPair", "DensityCertificate", "HeuristicResult", "InstabilityError", "assemble_AB",
    "extremal_gen_eig", "density_from_eigvec", "lasserre_bound", "heuristic_bound", "monomial_pencil",
    "index_set", "MonomialBasis",
]
