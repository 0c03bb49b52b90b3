from math import sqrt

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import literal_heuristic_mp
from sosdensity.experiments import matyas, motzkin
from sosdensity.lasserre import (GenEigPair, assemble_AB, density_from_eigvec, extremal_gen_eig, heuristic_bound,
                                 lasserre_bound)
from sosdensity.moments import DomainSpec, MeasureSpec, build_table
from sosdensity.polybasis import MonomialBasis, Polynomial, evaluate, index_set
from sosdensity.quadrature import InstabilityError, MomentReference

UNIT = DomainSpec.box([0], [1])
LEB = MeasureSpec.lebesgue()
SQUARE = DomainSpec.cube(2)
X = Polynomial.variable(1, 0)
LO, HI = (3 - sqrt(3)) / 6, (3 + sqrt(3)) / 6


def unit_pair():
    return assemble_AB(X, build_table(UNIT, LEB, 3), 1)


def test_assemble_AB_example():
    pair = unit_pair()
    np.testing.assert_allclose(pair.B, [[1, 1 / 2], [1 / 2, 1 / 3]], rtol=1e-15)
    np.testing.assert_allclose(pair.A, [[1 / 2, 1 / 3], [1 / 3, 1 / 4]], rtol=1e-15)


def test_assemble_AB_constant_and_order_zero():
    t = build_table(SQUARE, LEB, 8)
    pair = assemble_AB(Polynomial.constant(2, 3.5), t, 3)
    np.testing.assert_allclose(pair.A, 3.5 * pair.B)
    p = matyas()
    pair = assemble_AB(p, t, 0)
    assert pair.A.shape == (1, 1)
    assert pair.A[0, 0] == pytest.approx(sum(c * t[a] for a, c in p.terms.items()))
    assert pair.B[0, 0] == 4.0


def test_gen_eig_pair_validation():
    with pytest.raises(ValueError):
        GenEigPair(np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        GenEigPair(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2))


def test_closed_form_extremes():
    pair = unit_pair()
    lam, v = extremal_gen_eig(pair, "min")
    assert lam == pytest.approx(LO, abs=1e-9)
    assert v @ pair.B @ v == pytest.approx(1.0, abs=1e-12)
    lam, v = extremal_gen_eig(pair, "max")
    assert lam == pytest.approx(HI, abs=1e-9)
    resid = np.linalg.norm(pair.A @ v - lam * pair.B @ v)
    assert resid <= 1e-8 * (np.linalg.norm(pair.A, 2) + abs(lam) * np.linalg.norm(pair.B, 2))


def test_scalar_multiple_pencil():
    B = build_table(SQUARE, LEB, 6).hankel(3)
    for sense in ("min", "max"):
        lam, _ = extremal_gen_eig(GenEigPair(2.5 * B, B), sense)
        assert lam == pytest.approx(2.5, rel=1e-12)


def test_ill_conditioned_gram_is_rejected():
    # the condition number is measured after diagonal scaling
    extremal_gen_eig(GenEigPair(np.eye(2), np.diag([1.0, 1e-16])))
    B = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-15]])
    with pytest.raises(InstabilityError):
        extremal_gen_eig(GenEigPair(np.eye(2), B))
    with pytest.raises(InstabilityError):
        extremal_gen_eig(GenEigPair(np.eye(2), np.diag([1.0, -1.0])))
    with pytest.raises(InstabilityError):
        extremal_gen_eig(GenEigPair(np.array([[np.nan, 0.0], [0.0, 1.0]]), np.eye(2)))


def test_degenerate_eigenvalue_resolves_to_first_echelon_vector():
    # near-tie between the first two coordinates; the tolerance decides
    A = np.diag([1.0 + 5e-8, 1.0, 2.0])
    lam, v = extremal_gen_eig(GenEigPair(A, np.eye(3)), "min", degeneracy_tol=1e-9)
    assert lam == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(np.abs(v), [0, 1, 0], atol=1e-12)
    lam, v = extremal_gen_eig(GenEigPair(A, np.eye(3)), "min", degeneracy_tol=1e-7)
    np.testing.assert_allclose(v, [1, 0, 0], atol=1e-12)
    assert lam == pytest.approx(1.0 + 5e-8, abs=1e-15)


def test_degenerate_rule_is_basis_independent():
    # a two-dimensional eigenspace rotated arbitrarily: same vector back
    rng = np.random.default_rng(3)
    Qm, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    A = np.diag([1.0, 1.0, 3.0])
    A[:2, :2] = Qm @ A[:2, :2] @ Qm.T
    _, v = extremal_gen_eig(GenEigPair(A, np.eye(3)), "min")
    np.testing.assert_allclose(v, [1, 0, 0], atol=1e-12)


def test_density_from_eigvec_examples():
    t = build_table(UNIT, LEB, 4)
    pair = assemble_AB(X, t, 1)
    basis = MonomialBasis(index_set(1, 1))
    cert = density_from_eigvec(np.array([1.0, 0.0]), basis, 0.5, MomentReference(t), pair.B)
    assert cert.h == Polynomial.constant(1, 1.0)
    lam, v = extremal_gen_eig(pair, "min")
    cert = density_from_eigvec(v, basis, lam, MomentReference(t), pair.B)
    h = cert.h
    # h is proportional to (x - (3 + sqrt 3)/6)^2
    c2 = h.coefficient((2,))
    assert h.coefficient((1,)) / c2 == pytest.approx(-2 * HI, rel=1e-10)
    assert h.coefficient((0,)) / c2 == pytest.approx(HI ** 2, rel=1e-10)
    assert cert.expectation(X) == pytest.approx(LO, rel=1e-10)
    assert cert.expectation() == pytest.approx(1.0, abs=1e-10)
    assert cert.normalization_residual <= 1e-12
    z = np.random.default_rng(0).uniform(-3, 3, (100, 1))
    assert np.all(cert.evaluate(z) >= 0)


def test_lasserre_bound_constant_polynomial():
    for r in (0, 2, 5):
        for method in ("quadrature", "monomial"):
            cert = lasserre_bound(Polynomial.constant(2, 1.7), SQUARE, LEB, r, method=method)
            assert cert.value == pytest.approx(1.7, rel=1e-10)


@pytest.mark.parametrize("fn", [matyas, motzkin])
@pytest.mark.parametrize("sense", ["min", "max"])
def test_monotone_in_order(fn, sense):
    vals = [lasserre_bound(fn(), SQUARE, LEB, r, sense).value for r in range(7)]
    steps = np.diff(vals)
    if sense == "min":
        assert np.all(steps <= 1e-10)
        assert min(vals) >= 0.0
    else:
        assert np.all(steps >= -1e-10)


@pytest.mark.parametrize("fn", [matyas, motzkin])
def test_quadrature_and_monomial_routes_agree(fn):
    for r in range(0, 9):
        a = lasserre_bound(fn(), SQUARE, LEB, r, method="quadrature").value
        b = lasserre_bound(fn(), SQUARE, LEB, r, method="monomial").value
        assert a == pytest.approx(b, rel=1e-8, abs=1e-10)


@pytest.mark.parametrize("fn,r", [(matyas, 4), (motzkin, 6), (matyas, 12)])
def test_certificate_consistency(fn, r):
    # recompute E_h[p] from the monomial expansion of h and the exact table
    p = fn()
    cert = lasserre_bound(p, SQUARE, LEB, r)
    h = cert.h
    t = build_table(SQUARE, LEB, h.degree + p.degree)
    mass = sum(c * t[a] for a, c in h.terms.items())
    val = sum(c * cp * t[tuple(x + y for x, y in zip(a, b))] for a, c in h.terms.items() for b, cp in p.terms.items())
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert val == pytest.approx(cert.value, rel=1e-8)
    Z = np.random.default_rng(r).uniform(-1, 1, (1000, 2))
    assert np.all(evaluate(h, Z) >= -1e-10)


def test_heuristic_single_iteration_equals_direct_bound():
    for fn in (matyas, motzkin):
        for method in ("quadrature", "monomial"):
            direct = lasserre_bound(fn(), SQUARE, LEB, 3, method=method).value
            assert heuristic_bound(fn(), SQUARE, LEB, 3, 1, method=method).value == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("fn", [matyas, motzkin])
@pytest.mark.parametrize("r,R", [(2, 2), (2, 3), (3, 2)])
def test_heuristic_dominance_and_monotonicity(fn, r, R):
    res = heuristic_bound(fn(), SQUARE, LEB, r, R)
    assert not res.unstable
    assert np.all(np.diff(res.values) <= 1e-10)
    direct = lasserre_bound(fn(), SQUARE, LEB, r * R).value
    assert res.value >= direct - 1e-10


def test_heuristic_examples():
    assert heuristic_bound(matyas(), SQUARE, LEB, 10, 2).value == pytest.approx(0.4989, abs=1e-2)
    assert heuristic_bound(motzkin(), SQUARE, LEB, 2, 10).value == pytest.approx(0.4588, abs=1e-2)


def test_heuristic_reports_breakdown():
    ref = heuristic_bound(matyas(), SQUARE, LEB, 1, 2)
    assert len(ref.certificates) == 2 and not ref.unstable
    # monomial moments lose positive definiteness after repeated reweighting
    bad = heuristic_bound(matyas(), SQUARE, LEB, 8, 3, method="monomial")
    assert bad.unstable and len(bad.certificates) == 2
    assert "certified" in bad.message
    assert bad.value == bad.values[-1] >= 0.48
    with pytest.raises(ValueError):
        heuristic_bound(matyas(), SQUARE, LEB, 0, 2)


def test_heuristic_against_high_precision_literal_algorithm():
    # 50-digit arithmetic, exact rational moments, no shared code
    p = {(2, 0): 26, (0, 2): 26, (1, 1): -48}
    for r, R in [(5, 4), (4, 5)]:
        want = literal_heuristic_mp(p, r, R)
        got = heuristic_bound(matyas(), SQUARE, LEB, r, R).values
        np.testing.assert_allclose(got, want, rtol=1e-7)
        mono = heuristic_bound(matyas(), SQUARE, LEB, r, R, method="monomial")
        # the monomial path may stop early, but never reports an uncertified value
        assert len(mono.values) == R or mono.unstable
        np.testing.assert_allclose(mono.values, want[:len(mono.values)], rtol=1e-3)


@given(st.integers(0, 10_000), st.integers(0, 3))
def test_random_pencils_bracket_the_range(seed, r):
    rng = np.random.default_rng(seed)
    iset = index_set(2, 3)
    p = Polynomial.from_vector(iset, rng.normal(size=len(iset)))
    lo = lasserre_bound(p, SQUARE, LEB, r, "min").value
    hi = lasserre_bound(p, SQUARE, LEB, r, "max").value
    Z = rng.uniform(-1, 1, (4000, 2))
    vals = evaluate(p, Z)
    assert lo >= vals.min() - 1e-9 - 0.05 * np.ptp(vals)
    assert lo <= hi + 1e-12
    mean = sum(c * (0 if any(a % 2 for a in al) else np.prod([1 / (a + 1) for a in al])) for al, c in p.terms.items())
    assert lo <= mean + 1e-10 <= hi + 2e-10
