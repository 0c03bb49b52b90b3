"""Adaptive cubature of vector-valued integrands over simplices.

Cells are simplices.  Each cell is integrated with two collapsed
Gauss-Jacobi product rules of different order; their difference is the
local error estimate.  The cell with the largest scaled error is split by
bisecting its longest edge until the summed error meets the tolerance or
the evaluation budget runs out.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Callable

import numpy as np
from scipy.special import roots_jacobi


class CubatureError(RuntimeError):
    """Raised when the tolerance is not met within the evaluation budget."""


@lru_cache(maxsize=64)
def reference_simplex_rule(n: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Conical product rule with ``q`` points per direction on the unit simplex.

    Exact for polynomials of degree ``2q - 1``.  Weights sum to ``1/n!``.
    """
    # u_1 = t_1, u_2 = (1-t_1) t_2, ... with Jacobian prod (1-t_k)^{n-k}
    grids, wts = [], []
    for k in range(1, n + 1):
        x, w = roots_jacobi(q, n - k, 0)
        grids.append((x + 1.0) / 2.0)
        wts.append(w / 2.0 ** (n - k + 1))
    T = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, n)
    W = np.ones(T.shape[0])
    for k in range(n):
        W = W * np.meshgrid(*wts, indexing="ij")[k].reshape(-1)
    U = np.zeros_like(T)
    rest = np.ones(T.shape[0])
    for k in range(n):
        U[:, k] = rest * T[:, k]
        rest = rest * (1.0 - T[:, k])
    return U, W


def simplex_volume(V: np.ndarray) -> float:
    V = np.asarray(V, dtype=float)
    n = V.shape[1]
    return abs(np.linalg.det(V[1:] - V[0])) / factorial(n)


def simplex_rule(V: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Map the reference rule onto the simplex with vertex rows ``V``."""
    V = np.asarray(V, dtype=float)
    n = V.shape[1]
    U, W = reference_simplex_rule(n, q)
    E = V[1:] - V[0]
    return V[0] + U @ E, W * abs(np.linalg.det(E))


@dataclass
class CubatureResult:
    value: np.ndarray
    error: np.ndarray
    evaluations: int
    cells: int


def adaptive_simplex(f: Callable[[np.ndarray], np.ndarray], V: np.ndarray, tol: float = 1e-6,
                     scale: np.ndarray | float = 1.0, budget: int = 1_000_000,
                     orders: tuple[int, int] = (6, 8)) -> CubatureResult:
    """Integrate the vector integrand ``f`` over the simplex ``V``.

    ``f`` maps points of shape (N, n) to values of shape (N, k).  The
    stopping rule is ``max_k sum_cells err_k / scale_k <= tol``.

    Raises
    ------
    CubatureError
        if the budget is exhausted first.
    """
    lo, hi = orders
    scale = np.asarray(scale, dtype=float)
    evals = 0

    def integrate(cell):
        nonlocal evals
        P1, W1 = simplex_rule(cell, lo)
        P2, W2 = simplex_rule(cell, hi)
        F1, F2 = f(P1), f(P2)
        evals += len(W1) + len(W2)
        q1, q2 = W1 @ F1, W2 @ F2
        return q2, np.abs(q2 - q1)

    V = np.asarray(V, dtype=float)
    val, err = integrate(V)
    heap = [(-float(np.max(err / scale)), 0, V, val, err)]
    total_val, total_err = val.copy(), err.copy()
    counter = 1
    while np.max(total_err / scale) > tol:
        if evals >= budget:
            raise CubatureError(
                f"adaptive cubature stopped at {evals} evaluations with scaled error "
                f"{np.max(total_err / scale):.3g} > {tol:g}")
        _, _, cell, cval, cerr = heapq.heappop(heap)
        total_val -= cval
        total_err -= cerr
        # bisect the longest edge
        m = cell.shape[0]
        best, pair = -1.0, (0, 1)
        for i in range(m):
            for j in range(i + 1, m):
                d = np.sum((cell[i] - cell[j]) ** 2)
                if d > best:
                    best, pair = d, (i, j)
        i, j = pair
        mid = 0.5 * (cell[i] + cell[j])
        for k in (i, j):
            child = cell.copy()
            child[k] = mid
            cv, ce = integrate(child)
            total_val += cv
            total_err += ce
            heapq.heappush(heap, (-float(np.max(ce / scale)), counter, child, cv, ce))
            counter += 1
    # recombine to limit drift from repeated subtraction
    value = np.sum([c[3] for c in heap], axis=0)
    error = np.sum([c[4] for c in heap], axis=0)
    return CubatureResult(value, error, evals, len(heap))
