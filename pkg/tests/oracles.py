"""Independent reference values used by the tests.

The Monte-Carlo oracle samples the reference measure directly (it never
touches the package's moment code) and returns, per multi-index, the
estimate of ``int_{K ∩ C} z^alpha dmu`` with its standard error.
"""
from __future__ import annotations

from math import gamma, pi

import numpy as np

from sosdensity.moments import DomainSpec, MeasureSpec
from sosdensity.polybasis import index_set

MC_SAMPLES = 10_000_000
MC_CHUNK = 1_000_000


def _sampler(domain: DomainSpec, measure: MeasureSpec):
    """Returns ``draw(rng, k) -> points`` and the total mass of ``mu`` on ``K``.

    Points are drawn from ``mu`` restricted to ``K`` normalized to mass one, or
    from an enclosing box (knapsack) with the mass of that box; the indicator
    of ``K`` is applied by the caller.
    """
    n = domain.n
    kind = domain.kind
    if measure.kind == "exponential":
        return (lambda rng, k: rng.exponential(size=(k, n))), 1.0
    if measure.kind == "lognormal":
        loc, sc = np.array(measure.location), np.array(measure.scale)
        return (lambda rng, k: np.exp(loc + sc * rng.standard_normal((k, n)))), 1.0
    if kind in ("box", "knapsack"):
        lo, hi = np.array(domain.lower), np.array(domain.upper)
        vol = float(np.prod(hi - lo))
        mass = 1.0 if measure.kind == "uniform" else vol
        return (lambda rng, k: lo + (hi - lo) * rng.random((k, n))), mass
    if kind == "simplex":
        return (lambda rng, k: rng.dirichlet(np.ones(n + 1), size=k)[:, :n]), 1.0 / gamma(n + 1)
    if kind in ("ball", "ellipsoid"):
        unit = pi ** (n / 2) / gamma(n / 2 + 1)
        if kind == "ball":
            T = domain.radius * np.eye(n)
        else:
            T = np.array(domain.matrix)
        t = np.array(domain.center)

        def draw(rng, k):
            g = rng.standard_normal((k, n))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            u = g * rng.random((k, 1)) ** (1.0 / n)
            return u @ T.T + t

        return draw, unit * abs(np.linalg.det(T))
    raise ValueError(f"no sampler for {kind}/{measure.kind}")


def _power_sums(P: list[np.ndarray]) -> np.ndarray:
    """``S[a_1..a_n] = sum_j prod_i P_i[j, a_i]`` as one matrix product."""
    tail = P[-1]
    for Pi in reversed(P[1:-1]):
        tail = (Pi[:, :, None] * tail[:, None, :]).reshape(Pi.shape[0], -1)
    if len(P) == 1:
        return tail.sum(axis=0)
    d = P[0].shape[1]
    return (P[0].T @ tail).reshape((d,) * len(P))


def monte_carlo_moments(domain: DomainSpec, measure: MeasureSpec, degree: int, event=None,
                        samples: int = MC_SAMPLES, seed: int = 0):
    """Estimates and standard errors of the moments up to ``degree``."""
    draw, mass = _sampler(domain, measure)
    rng = np.random.default_rng(seed)
    iset = index_set(domain.n, degree)
    E = iset.exponents()
    s1 = np.zeros(len(iset))
    s2 = np.zeros(len(iset))
    done = 0
    while done < samples:
        k = min(MC_CHUNK, samples - done)
        Z = draw(rng, k)
        keep = np.ones(k, dtype=bool)
        if domain.kind == "knapsack":
            keep &= domain.contains(Z)
        if event is not None:
            keep &= event.indicator(Z)
        Zk = Z[keep]
        P = [np.vander(Zk[:, i], degree + 1, increasing=True) for i in range(domain.n)]
        s1 += _power_sums(P)[tuple(E.T)]
        s2 += _power_sums([p * p for p in P])[tuple(E.T)]
        done += k
    mean = s1 / samples
    var = s2 / samples - mean ** 2
    return iset, mass * mean, mass * np.sqrt(np.maximum(var, 0.0) / samples)


def literal_heuristic_mp(p: dict, r: int, R: int, dps: int = 50) -> list:
    """Iterated bound on ``[-1, 1]^2`` with Lebesgue measure in ``dps``-digit
    arithmetic, straight from moments in the monomial basis.

    ``p`` maps exponent pairs to coefficients.  Moments are exact rationals;
    each step solves ``A v = lam B v`` through a Cholesky reduction, takes the
    smallest eigenvalue, forms ``h = (v . b)^2`` and pushes the moments
    forward, truncating to degree ``2 r (R - k) + deg p``.
    """
    import mpmath as mp
    from fractions import Fraction

    with mp.workdps(dps):
        d = max(a + b for a, b in p)
        D = 2 * r * R + d

        def box1(k):
            return Fraction(0) if k % 2 else Fraction(2, k + 1)

        m = {}
        for i in range(D + 1):
            for j in range(D + 1 - i):
                f = box1(i) * box1(j)
                m[(i, j)] = mp.mpf(f.numerator) / f.denominator
        idx = [(g - j, j) for g in range(r + 1) for j in range(g + 1)]
        N = len(idx)
        values = []
        for k in range(1, R + 1):
            A, B = mp.matrix(N), mp.matrix(N)
            for s, a in enumerate(idx):
                for t, b in enumerate(idx):
                    ab = (a[0] + b[0], a[1] + b[1])
                    B[s, t] = m[ab]
                    A[s, t] = sum(c * m[(ab[0] + e[0], ab[1] + e[1])] for e, c in p.items())
            Li = mp.inverse(mp.cholesky(B))
            w, U = mp.eigsy(Li * A * Li.T)
            j = min(range(N), key=lambda q: w[q])
            v = Li.T * U[:, j]
            values.append(float(w[j]))
            if k == R:
                break
            h = {}
            for s, a in enumerate(idx):
                for t, b in enumerate(idx):
                    key = (a[0] + b[0], a[1] + b[1])
                    h[key] = h.get(key, 0) + v[s] * v[t]
            Dn = 2 * r * (R - k) + d
            m = {(i, j2): sum(c * m[(i + e[0], j2 + e[1])] for e, c in h.items())
                 for i in range(Dn + 1) for j2 in range(Dn + 1 - i)}
        return values
