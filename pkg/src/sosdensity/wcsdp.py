"""Worst-case expectation SDPs over ambiguity sets.

The decision variables are one PSD Gram matrix ``Q_b`` per density block
and nonnegative auxiliaries ``u``.  Every constraint row reads
``sum_b <A_b, Q_b> + a.u  (= or <=)  rhs`` and the objective is
``sum_b <C_b, Q_b> + c.u``.

Two interior-point backends are wired in: CVXOPT (default; the problem is
posed as the *dual* of a ``conelp`` so that the Gram matrices come back as
the conic multipliers) and Clarabel (primal form, packed triangles).  A
presolve removes redundant rows and faces of the PSD cone on which every
feasible ``Q`` vanishes, which is common when a histogram forces the density
to be zero on a region.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import linprog

from .ambiguity import AmbiguitySet, LinearFunctional, ambiguity_set
from .lasserre import DensityCertificate, lasserre_bound
from .moments import MomentTable, UnsupportedError
from .polybasis import Basis, Polynomial
from .quadrature import InstabilityError, as_reference

log = logging.getLogger(__name__)

STATUSES = ("optimal", "infeasible", "unbounded", "numericalFailure")
BACKENDS = ("cvxopt", "clarabel")


@dataclass
class Row:
    mats: list[np.ndarray | None]
    aux: np.ndarray
    kind: str  # "eq" or "le"
    rhs: float
    label: str = ""


@dataclass
class ConicProblem:
    sizes: list[int]
    objective: list[np.ndarray]
    aux_cost: np.ndarray
    rows: list[Row]
    sense: str = "max"
    bases: list[Basis] = field(default_factory=list)
    references: list = field(default_factory=list)
    aux_labels: list[str] = field(default_factory=list)

    @property
    def gram_size(self) -> int:
        return self.sizes[0]

    @property
    def n_aux(self) -> int:
        return len(self.aux_cost)

    @property
    def equalities(self) -> list[Row]:
        return [r for r in self.rows if r.kind == "eq"]

    @property
    def inequalities(self) -> list[Row]:
        return [r for r in self.rows if r.kind == "le"]

    def activity(self, row: Row, Qs: Sequence[np.ndarray], u: np.ndarray) -> float:
        s = float(row.aux @ u) if len(u) else 0.0
        for M, Q in zip(row.mats, Qs):
            if M is not None:
                s += float(np.sum(M * Q))
        return s

    def residuals(self, Qs, u) -> np.ndarray:
        """Equalities: ``|activity - rhs|``; inequalities: ``max(0, activity - rhs)``."""
        out = []
        for row in self.rows:
            d = self.activity(row, Qs, u) - row.rhs
            out.append(abs(d) if row.kind == "eq" else max(0.0, d))
        return np.array(out)

    def objective_value(self, Qs, u) -> float:
        v = sum(float(np.sum(C * Q)) for C, Q in zip(self.objective, Qs))
        return v + (float(self.aux_cost @ u) if len(u) else 0.0)


@dataclass
class SolveReport:
    status: str
    value: float = float("nan")
    dual_value: float = float("nan")
    densities: list[DensityCertificate] = field(default_factory=list)
    aux: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residual: float = float("nan")
    iterations: int = 0
    time: float = 0.0
    backend: str = ""
    message: str = ""

    @property
    def density(self) -> DensityCertificate | None:
        return self.densities[0] if self.densities else None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# assembly

def _functional_for(objective, nblocks: int):
    if isinstance(objective, LinearFunctional):
        return [objective] * nblocks
    objs = list(objective)
    if len(objs) != nblocks:
        raise ValueError(f"objective has {len(objs)} blocks, set has {nblocks}")
    return objs


def assemble(objective: LinearFunctional | Sequence[LinearFunctional | None], aset: AmbiguitySet,
             sense: str = "max", aux_cost: Sequence[float] | None = None) -> ConicProblem:
    """Lift the objective and every constraint of ``aset`` to Gram space.

    A single objective functional is applied to every density block.
    """
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    refs = list(aset.references)
    bases = [ref.default_basis(aset.r) for ref in refs]
    sizes = [len(b) for b in bases]
    if any(b.n != bases[0].n for b in bases):
        raise ValueError("blocks disagree on the dimension")
    objs = _functional_for(objective, len(refs))
    C = [f.lift(ref, b) if f is not None else np.zeros((s, s)) for f, ref, b, s in zip(objs, refs, bases, sizes)]
    cu = np.zeros(aset.n_aux) if aux_cost is None else np.asarray(aux_cost, dtype=float)
    rows: list[Row] = []
    for con in aset.constraints:
        fs = con.for_blocks(len(refs))
        mats = [f.lift(ref, b) if f is not None else None for f, ref, b in zip(fs, refs, bases)]
        a = np.zeros(aset.n_aux)
        for k, v in con.aux.items():
            a[k] = v
        if con.relation == "=":
            rows.append(Row(mats, a, "eq", float(con.rhs), con.label))
        elif con.relation == "<=":
            rows.append(Row(mats, a, "le", float(con.rhs), con.label))
        elif con.relation == ">=":
            rows.append(Row(_neg(mats), -a, "le", -float(con.rhs), con.label))
        else:
            lo, hi = con.rhs
            if lo == hi:
                rows.append(Row(mats, a, "eq", lo, con.label))
            else:
                rows.append(Row(mats, a, "le", hi, con.label + " (upper)"))
                rows.append(Row(_neg(mats), -a, "le", -lo, con.label + " (lower)"))
    return ConicProblem(sizes, C, cu, rows, sense, bases, refs, list(aset.aux_labels))


def _neg(mats):
    return [None if M is None else -M for M in mats]


# ---------------------------------------------------------------------------
# presolve

@dataclass
class _Reduced:
    keep: list[np.ndarray]  # surviving Gram indices per block
    rows: list[Row]
    infeasible: bool = False
    message: str = ""


def _row_vector(row: Row, sizes, keep=None) -> np.ndarray:
    parts = []
    for b, n in enumerate(sizes):
        M = row.mats[b]
        J = keep[b] if keep is not None else np.arange(n)
        if M is None:
            parts.append(np.zeros(len(J) * (len(J) + 1) // 2))
        else:
            parts.append(svec(M[np.ix_(J, J)]))
    parts.append(row.aux)
    return np.concatenate(parts)


def _drop_trivial(rows: list[Row], sizes, tol: float = 1e-9) -> tuple[list[Row], str]:
    out = []
    for row in rows:
        v = _row_vector(row, sizes)
        if np.max(np.abs(v), initial=0.0) > 0:
            out.append(row)
            continue
        if row.kind == "eq" and abs(row.rhs) > tol:
            return [], f"row '{row.label}' reads 0 = {row.rhs:g}"
        if row.kind == "le" and row.rhs < -tol:
            return [], f"row '{row.label}' reads 0 <= {row.rhs:g}"
    return out, ""


def _independent_equalities(rows: list[Row], sizes, rank_tol: float = 1e-10,
                            tol: float = 1e-8) -> tuple[list[Row], str]:
    eq = [r for r in rows if r.kind == "eq"]
    le = [r for r in rows if r.kind == "le"]
    if len(eq) < 2:
        return rows, ""
    V = np.array([_row_vector(r, sizes) for r in eq])
    b = np.array([r.rhs for r in eq])
    s = np.max(np.abs(V), axis=1)
    V, b = V / s[:, None], b / s
    _, R, piv = sla.qr(V.T, pivoting=True, mode="economic")
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > rank_tol * d[0]))
    keep = np.sort(piv[:rank])
    if rank < len(eq):
        X = np.linalg.lstsq(V[keep].T, V.T, rcond=None)[0]
        gap = np.max(np.abs(X.T @ b[keep] - b))
        if gap > tol:
            return [], f"equality rows are inconsistent (mismatch {gap:.3g})"
    return [eq[k] for k in keep] + le, ""


def _facial_reduction(rows: list[Row], sizes, n_aux: int, off_tol: float = 1e-7,
                      zero_tol: float = 1e-11, inf_tol: float = 1e-8, max_rounds: int = 50) -> _Reduced:
    """Remove diagonal faces: Gram indices on which every feasible Q vanishes.

    Searches for ``y`` with ``sum y_i A_i`` diagonal and nonnegative,
    ``sum y_i a_i >= 0`` on the auxiliaries and ``b^T y <= 0``.  A strictly
    negative ``b^T y`` certifies infeasibility; ``b^T y = 0`` forces the
    rows and columns on the support of the diagonal to zero.
    """
    keep = [np.arange(n) for n in sizes]
    eq = [r for r in rows if r.kind == "eq"]
    if not eq:
        return _Reduced(keep, rows)
    scale = np.array([max(np.max(np.abs(_row_vector(r, sizes))), 1e-300) for r in eq])
    b = np.array([r.rhs for r in eq]) / scale
    for _ in range(max_rounds):
        m = len(eq)
        A_off, A_diag = [], []
        for blk, J in enumerate(keep):
            k = len(J)
            if k == 0:
                continue
            iu = np.triu_indices(k, 1)
            off = np.zeros((len(iu[0]), m))
            dia = np.zeros((k, m))
            for i, row in enumerate(eq):
                M = row.mats[blk]
                if M is None:
                    continue
                M = M[np.ix_(J, J)] / scale[i]
                M = np.where(np.abs(M) < zero_tol, 0.0, M)
                off[:, i] = M[iu]
                dia[:, i] = np.diag(M)
            A_off.append(off)
            A_diag.append(dia)
        if not A_diag:
            break
        Aoff = np.vstack(A_off)
        Adiag = np.vstack(A_diag)
        Aaux = np.array([r.aux for r in eq]).T / scale if n_aux else np.zeros((0, m))
        A_ub = np.vstack([Aoff, -Aoff, -Adiag, -Aaux])
        b_ub = np.concatenate([np.full(2 * len(Aoff), off_tol), np.zeros(len(Adiag) + len(Aaux))])
        A_eq = Adiag.sum(axis=0, keepdims=True)
        res = linprog(b, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(None, None)] * m,
                      method="highs")
        if res.status != 0:
            break
        if res.fun < -inf_tol:
            return _Reduced(keep, rows, True, f"facial reduction certificate b.y = {res.fun:.3g}")
        if res.fun > inf_tol:
            break
        w = Adiag @ res.x
        support = w > 1e-7 * w.max()
        pos = 0
        changed = False
        for blk, J in enumerate(keep):
            k = len(J)
            if k == 0:
                continue
            s = support[pos:pos + k]
            pos += k
            if s.any():
                keep[blk] = J[~s]
                changed = True
        if not changed:
            break
    return _Reduced(keep, rows)


def presolve(problem: ConicProblem, facial: bool = True) -> _Reduced:
    rows, msg = _drop_trivial(problem.rows, problem.sizes)
    if msg:
        return _Reduced([np.arange(n) for n in problem.sizes], [], True, msg)
    rows, msg = _independent_equalities(rows, problem.sizes)
    if msg:
        return _Reduced([np.arange(n) for n in problem.sizes], [], True, msg)
    if not facial:
        return _Reduced([np.arange(n) for n in problem.sizes], rows)
    red = _facial_reduction(rows, problem.sizes, problem.n_aux)
    if red.infeasible:
        return red
    # rows may have become trivial or dependent on the reduced face
    sizes = problem.sizes
    sub = ConicProblem([len(J) for J in red.keep], [], problem.aux_cost,
                       [_restrict(r, red.keep, np.max(np.abs(_row_vector(r, sizes)))) for r in rows])
    rows2, msg = _drop_trivial(sub.rows, sub.sizes)
    if msg:
        return _Reduced(red.keep, [], True, msg + " after facial reduction")
    rows2, msg = _independent_equalities(rows2, sub.sizes)
    if msg:
        return _Reduced(red.keep, [], True, msg + " after facial reduction")
    return _Reduced(red.keep, rows2)


def _restrict(row: Row, keep, scale: float | None = None, zero_tol: float = 1e-11) -> Row:
    """Principal submatrices on ``keep``; entries below ``zero_tol * scale``
    (the unrestricted row size) are cancellation noise and set to zero."""
    mats = []
    for M, J in zip(row.mats, keep):
        if M is None:
            mats.append(None)
            continue
        S = M[np.ix_(J, J)]
        if scale is not None:
            S = np.where(np.abs(S) < zero_tol * scale, 0.0, S)
        mats.append(S)
    aux = row.aux if scale is None else np.where(np.abs(row.aux) < zero_tol * scale, 0.0, row.aux)
    return Row(mats, aux, row.kind, row.rhs, row.label)


# ---------------------------------------------------------------------------
# packing helpers

def svec(M: np.ndarray) -> np.ndarray:
    """Upper triangle, column-major, off-diagonals scaled by sqrt(2)."""
    n = M.shape[0]
    i, j = np.triu_indices(n)
    order = np.lexsort((i, j))
    i, j = i[order], j[order]
    return np.where(i == j, 1.0, np.sqrt(2.0)) * M[i, j]


def smat(v: np.ndarray, n: int) -> np.ndarray:
    i, j = np.triu_indices(n)
    order = np.lexsort((i, j))
    i, j = i[order], j[order]
    M = np.zeros((n, n))
    vals = v / np.where(i == j, 1.0, np.sqrt(2.0))
    M[i, j] = vals
    M[j, i] = vals
    return M


# ---------------------------------------------------------------------------
# backends

@dataclass
class _RawSolution:
    status: str
    value: float
    dual_value: float
    Qs: list[np.ndarray]
    u: np.ndarray
    iterations: int = 0
    message: str = ""


def _solve_cvxopt(sizes, C, cu, rows, tol: float) -> _RawSolution:
    from cvxopt import matrix, solvers

    le = [r for r in rows if r.kind == "le"]
    n_le = len(le)
    n_aux = len(cu)
    m = len(rows)
    nl = n_le + n_aux
    ns = sum(n * n for n in sizes)
    G = np.zeros((nl + ns, m))
    j_le = 0
    for i, row in enumerate(rows):
        if row.kind == "le":
            G[j_le, i] = 1.0
            j_le += 1
        G[n_le:nl, i] = row.aux
        off = nl
        for M, n in zip(row.mats, sizes):
            if M is not None:
                G[off:off + n * n, i] = M.ravel(order="F")
            off += n * n
    h = np.zeros(nl + ns)
    h[n_le:nl] = -cu
    off = nl
    for M, n in zip(C, sizes):
        h[off:off + n * n] = -M.ravel(order="F")
        off += n * n
    c = -np.array([r.rhs for r in rows], dtype=float)
    dims = {"l": nl, "q": [], "s": list(sizes)}
    last = ""
    for t in (tol, 1e-8, 1e-7):
        opts = {"show_progress": False, "abstol": t, "reltol": t, "feastol": t, "maxiters": 200}
        try:
            sol = solvers.conelp(matrix(c), matrix(G), matrix(h), dims, options=opts)
        except (ArithmeticError, ValueError) as exc:
            last = f"cvxopt: {exc}"
            continue
        st = sol["status"]
        it = int(sol.get("iterations", 0))
        if st == "dual infeasible":
            return _RawSolution("infeasible", np.nan, np.nan, [], np.zeros(0), it, "cvxopt: dual infeasible")
        if st == "primal infeasible":
            return _RawSolution("unbounded", np.inf, np.inf, [], np.zeros(0), it, "cvxopt: primal infeasible")
        z = np.array(sol["z"]).ravel()
        u = z[n_le:nl].copy()
        Qs = []
        off = nl
        for n in sizes:
            Q = z[off:off + n * n].reshape(n, n, order="F")
            Qs.append(0.5 * (Q + Q.T))
            off += n * n
        val, dval = sol["dual objective"], sol["primal objective"]
        if st == "optimal":
            return _RawSolution("optimal", val, dval, Qs, u, it)
        # unknown: accept a solution that is accurate anyway
        pres, dres = sol.get("primal infeasibility"), sol.get("dual infeasibility")
        if (val is not None and dval is not None and pres is not None and dres is not None
                and abs(val - dval) <= 1e-6 * (1 + abs(val)) and max(pres, dres) <= 1e-6):
            return _RawSolution("optimal", val, dval, Qs, u, it, "cvxopt: accepted near-optimal point")
        last = f"cvxopt: status {st}"
    return _RawSolution("numericalFailure", np.nan, np.nan, [], np.zeros(0), 0, last)


def _solve_clarabel(sizes, C, cu, rows, tol: float) -> _RawSolution:
    import clarabel

    nv = [n * (n + 1) // 2 for n in sizes]
    n_aux = len(cu)
    nx = sum(nv) + n_aux
    eq = [r for r in rows if r.kind == "eq"]
    le = [r for r in rows if r.kind == "le"]

    def rowvec(row):
        parts = [svec(M) if M is not None else np.zeros(k) for M, k in zip(row.mats, nv)]
        return np.concatenate(parts + [row.aux])

    blocks = []
    bvec = []
    if eq:
        blocks.append(sp.csc_matrix(np.array([rowvec(r) for r in eq])))
        bvec += [r.rhs for r in eq]
    if le:
        blocks.append(sp.csc_matrix(np.array([rowvec(r) for r in le])))
        bvec += [r.rhs for r in le]
    if n_aux:
        blocks.append(sp.hstack([sp.csc_matrix((n_aux, sum(nv))), -sp.identity(n_aux)]).tocsc())
        bvec += [0.0] * n_aux
    blocks.append(sp.hstack([-sp.identity(sum(nv)), sp.csc_matrix((sum(nv), n_aux))]).tocsc())
    bvec += [0.0] * sum(nv)
    A = sp.vstack(blocks).tocsc()
    q = -np.concatenate([svec(M) for M in C] + [cu])
    P = sp.csc_matrix((nx, nx))
    cones = []
    if eq:
        cones.append(clarabel.ZeroConeT(len(eq)))
    if le or n_aux:
        cones.append(clarabel.NonnegativeConeT(len(le) + n_aux))
    cones += [clarabel.PSDTriangleConeT(n) for n in sizes]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_iter = 300
    solver = clarabel.DefaultSolver(P, q, A, np.array(bvec, dtype=float), cones, settings)
    sol = solver.solve()
    st = str(sol.status)
    it = int(getattr(sol, "iterations", 0))
    if "PrimalInfeasible" in st:
        return _RawSolution("infeasible", np.nan, np.nan, [], np.zeros(0), it, f"clarabel: {st}")
    if "DualInfeasible" in st:
        return _RawSolution("unbounded", np.inf, np.inf, [], np.zeros(0), it, f"clarabel: {st}")
    if st not in ("Solved", "AlmostSolved"):
        return _RawSolution("numericalFailure", np.nan, np.nan, [], np.zeros(0), it, f"clarabel: {st}")
    x = np.array(sol.x)
    Qs, off = [], 0
    for n, k in zip(sizes, nv):
        Qs.append(smat(x[off:off + k], n))
        off += k
    return _RawSolution("optimal", -sol.obj_val, -sol.obj_val_dual, Qs, x[off:], it,
                        "" if st == "Solved" else f"clarabel: {st}")


def solve(problem: ConicProblem, backend: str = "cvxopt", tol: float = 1e-9, facial: bool = True) -> SolveReport:
    """Solve the lifted problem; statuses are reported, never raised."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    t0 = time.perf_counter()
    sgn = 1.0 if problem.sense == "max" else -1.0
    red = presolve(problem, facial=facial)
    if red.infeasible:
        return SolveReport("infeasible", backend=backend, time=time.perf_counter() - t0, message=red.message)
    keep = red.keep
    sizes = [len(J) for J in keep]
    C = [sgn * M[np.ix_(J, J)] for M, J in zip(problem.objective, keep)]
    rows = red.rows  # already restricted to the surviving face
    # blocks reduced to nothing drop out of the cone
    live = [b for b, n in enumerate(sizes) if n > 0]
    rows_live = [Row([r.mats[b] for b in live], r.aux, r.kind, r.rhs, r.label) for r in rows]
    sizes_live = [sizes[b] for b in live]
    cu = sgn * problem.aux_cost
    if not sizes_live:
        return SolveReport("numericalFailure", backend=backend, message="every Gram block vanished in presolve")
    raw = (_solve_cvxopt if backend == "cvxopt" else _solve_clarabel)(sizes_live, [C[b] for b in live], cu,
                                                                      rows_live, tol)
    elapsed = time.perf_counter() - t0
    if raw.status != "optimal":
        val = sgn * raw.value if raw.status == "unbounded" else np.nan
        return SolveReport(raw.status, val, val, [], np.zeros(0), np.nan, raw.iterations, elapsed, backend,
                           raw.message)
    Qs = []
    it = iter(raw.Qs)
    for b, n in enumerate(problem.sizes):
        Q = np.zeros((n, n))
        if sizes[b] > 0:
            J = keep[b]
            Q[np.ix_(J, J)] = next(it)
        Qs.append(Q)
    res = problem.residuals(Qs, raw.u)
    dens = [DensityCertificate(sgn * raw.value, basis.r, basis, Q, 0.0, ref)
            for basis, Q, ref in zip(problem.bases, Qs, problem.references)]
    msg = raw.message
    removed = sum(problem.sizes) - sum(sizes)
    if removed:
        msg = (msg + "; " if msg else "") + f"presolve fixed {removed} Gram indices to zero"
    return SolveReport("optimal", sgn * raw.value, sgn * raw.dual_value, dens, raw.u,
                       float(res.max(initial=0.0)), raw.iterations, elapsed, backend, msg)


# ---------------------------------------------------------------------------
# SDPA export

def to_sdpa(problem: ConicProblem) -> str:
    """Sparse SDPA text of the dual ``min b.y : sum y_i F_i - F_0 >= 0``.

    Its primal, ``max <F_0, Y> : <F_i, Y> = b_i, Y >= 0``, is the problem
    itself: one PSD block per density plus one diagonal block holding the
    auxiliaries and the inequality slacks.  Maximization form is assumed
    (minimization problems are exported with the objective negated).
    """
    sgn = 1.0 if problem.sense == "max" else -1.0
    le_idx = [i for i, r in enumerate(problem.rows) if r.kind == "le"]
    ndiag = problem.n_aux + len(le_idx)
    nblocks = len(problem.sizes) + (1 if ndiag else 0)
    lines = [f'"sosdensity export: {len(problem.rows)} rows, blocks {problem.sizes}, aux {problem.n_aux}"',
             str(len(problem.rows)), str(nblocks),
             " ".join([str(n) for n in problem.sizes] + ([str(-ndiag)] if ndiag else [])),
             " ".join(f"{r.rhs:.17g}" for r in problem.rows)]

    def entries(mat_no, mats, diag):
        out = []
        for b, M in enumerate(mats):
            if M is None:
                continue
            i, j = np.nonzero(np.triu(M))
            for a, c in zip(i, j):
                out.append(f"{mat_no} {b + 1} {a + 1} {c + 1} {M[a, c]:.17g}")
        for k, v in enumerate(diag):
            if v != 0.0:
                out.append(f"{mat_no} {len(problem.sizes) + 1} {k + 1} {k + 1} {v:.17g}")
        return out

    lines += entries(0, [sgn * M for M in problem.objective],
                     np.concatenate([sgn * problem.aux_cost, np.zeros(len(le_idx))]))
    for i, r in enumerate(problem.rows):
        slack = np.zeros(len(le_idx))
        if r.kind == "le":
            slack[le_idx.index(i)] = 1.0
        lines += entries(i + 1, r.mats, np.concatenate([r.aux, slack]))
    return "\n".join(lines) + "\n"


def write_sdpa(problem: ConicProblem, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_sdpa(problem))


def read_sdpa(path) -> ConicProblem:
    """Parse a sparse SDPA file back into a (maximization) problem.

    The diagonal block, if present, is read as nonnegative auxiliaries, so
    inequality rows come back as equalities with explicit slacks.
    """
    with open(path) as fh:
        raw = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith(('"', "*"))]
    m = int(raw[0].split()[0])
    nb = int(raw[1].split()[0])
    sizes = [int(float(s)) for s in raw[2].replace(",", " ").replace("{", " ").replace("}", " ").split()][:nb]
    b = np.array([float(s) for s in raw[3].replace(",", " ").replace("{", " ").replace("}", " ").split()][:m])
    psd = [abs(s) for s in sizes if s > 0]
    ndiag = sum(-s for s in sizes if s < 0)
    mats = [[np.zeros((n, n)) for n in psd] for _ in range(m + 1)]
    diag = [np.zeros(ndiag) for _ in range(m + 1)]
    for ln in raw[4:]:
        k, blk, i, j, v = ln.split()
        k, blk, i, j, v = int(k), int(blk) - 1, int(i) - 1, int(j) - 1, float(v)
        if sizes[blk] < 0:
            diag[k][i] = v
        else:
            mats[k][blk][i, j] = v
            mats[k][blk][j, i] = v
    rows = [Row(mats[k + 1], diag[k + 1], "eq", float(b[k]), f"row{k}") for k in range(m)]
    return ConicProblem(psd, mats[0], diag[0], rows, "max")


# ---------------------------------------------------------------------------
# applications

def wc_expectation(objective: LinearFunctional, aset: AmbiguitySet, backend: str = "cvxopt",
                   sense: str = "max", tol: float = 1e-9) -> SolveReport:
    return solve(assemble(objective, aset, sense), backend, tol)


def wc_probability(event, aset: AmbiguitySet, backend: str = "cvxopt", sense: str = "max",
                   tol: float = 1e-9) -> SolveReport:
    """Worst-case probability of ``event`` over the set."""
    f = LinearFunctional.integral(event=event, label="probability")
    return wc_expectation(f, aset, backend, sense, tol)


@dataclass
class HeuristicRun:
    reports: list[SolveReport]
    unstable: bool = False
    message: str = ""

    @property
    def values(self) -> list[float]:
        return [r.value for r in self.reports]


def wc_heuristic(objective: LinearFunctional, aset: AmbiguitySet, R: int, backend: str = "cvxopt",
                 sense: str = "max", tol: float = 1e-9) -> HeuristicRun:
    """Re-solve the constrained problem under the reference pushed forward
    through the optimal densities, ``R`` times in total."""
    reports = []
    for k in range(1, R + 1):
        try:
            rep = wc_expectation(objective, aset, backend, sense, tol)
        except InstabilityError as exc:
            return HeuristicRun(reports, True, f"iteration {k}: {exc}")
        reports.append(rep)
        if not rep.ok:
            return HeuristicRun(reports, rep.status == "numericalFailure", f"iteration {k}: {rep.status}")
        if k < R:
            aset = aset.reweighted(rep.densities)
    return HeuristicRun(reports)


def geneig_crosscheck(p: Polynomial, reference, r: int, sense: str = "min", backend: str = "cvxopt",
                      tol: float = 1e-9) -> tuple[float, float, float]:
    """Normalization-only SDP against the extremal generalized eigenvalue."""
    ref = as_reference(reference)
    aset = ambiguity_set(ref, r)
    rep = wc_expectation(LinearFunctional.integral(p, label="objective"), aset, backend,
                         "min" if sense == "min" else "max", tol)
    eig = lasserre_bound(p, ref.domain, ref.measure, r, sense, reference=ref).value
    return rep.value, eig, abs(rep.value - eig)


@dataclass(frozen=True)
class Feasible:
    value: float


@dataclass(frozen=True)
class Hyperplane:
    """Cut ``normal . x <= offset``; the query point violates it."""

    normal: np.ndarray
    offset: float
    value: float


def _in_nonnegative_orthant(domain) -> bool:
    if domain.kind in ("simplex", "orthant"):
        return True
    if domain.kind in ("box", "knapsack"):
        return min(domain.lower) >= 0
    lo, _ = domain.bounding_box()
    return bool(np.all(lo >= 0))


def separation_oracle(x: Sequence[float], family: Callable, aset: AmbiguitySet, backend: str = "cvxopt",
                      tol: float = 1e-9) -> Feasible | Hyperplane:
    """Separate ``x`` from ``{x : sup_P E_P f(x, z) <= 0}``.

    ``family(x)`` returns a mapping ``beta -> (f_beta(x), subgradient of
    f_beta at x)`` with ``f(x, z) = sum_beta f_beta(x) z^beta``; the
    ``f_beta`` must be convex.  Needs the support in the nonnegative orthant.
    """
    if not _in_nonnegative_orthant(aset.domain):
        raise UnsupportedError("separation needs a support inside the nonnegative orthant")
    x = np.asarray(x, dtype=float)
    coefs = family(x)
    n = aset.n
    p = Polynomial(n, {tuple(beta): float(v) for beta, (v, _) in coefs.items()})
    rep = wc_expectation(LinearFunctional.integral(p, label="constraint"), aset, backend, "max", tol)
    if not rep.ok:
        raise RuntimeError(f"worst-case problem not solved: {rep.status} ({rep.message})")
    if rep.value <= 0:
        return Feasible(rep.value)
    g = np.zeros_like(x)
    for beta, (_, grad) in coefs.items():
        mono = Polynomial(n, {tuple(beta): 1.0})
        e = sum(d.expectation(mono) for d in rep.densities)
        g = g + e * np.asarray(grad, dtype=float)
    return Hyperplane(g, float(g @ x - rep.value), rep.value)


__all__ = [
    "ConicProblem", "Row", "SolveReport", "assemble", "solve", "presolve", "to_sdpa", "write_sdpa",
    "read_sdpa", "wc_expectation", "wc_probability", "wc_heuristic", "HeuristicRun", "geneig_crosscheck",
    "separation_oracle", "Feasible", "Hyperplane", "svec", "smat", "MomentTable",
]
