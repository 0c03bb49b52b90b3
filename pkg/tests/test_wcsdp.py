from math import sqrt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sosdensity.ambiguity import (LinearFunctional, ambiguity_set, confidence_constraint, moment_constraint)
from sosdensity.experiments import matyas, portfolio_event, portfolio_set
from sosdensity.lasserre import DensityCertificate, assemble_AB
from sosdensity.moments import AxisSlab, DomainSpec, MeasureSpec, UnsupportedError, build_table
from sosdensity.polybasis import MonomialBasis, Polynomial, evaluate, index_set
from sosdensity.quadrature import MomentReference, QuadratureReference
from sosdensity.wcsdp import (Feasible, Hyperplane, assemble, geneig_crosscheck, read_sdpa, separation_oracle,
                              solve, to_sdpa, wc_expectation, wc_probability, write_sdpa)

UNIT = DomainSpec.box([0], [1])
LEB = MeasureSpec.lebesgue()
X = Polynomial.variable(1, 0)
LO, HI = (3 - sqrt(3)) / 6, (3 + sqrt(3)) / 6


def unit_ref(degree=6):
    return MomentReference(build_table(UNIT, LEB, degree))


def test_gram_to_coefficients():
    ref = unit_ref()
    basis = MonomialBasis(index_set(1, 1))
    Q = np.array([[2.0, 0.3], [0.3, 5.0]])
    h = DensityCertificate(0.0, 1, basis, Q, 0.0, ref).h
    assert h.coefficient((0,)) == 2.0
    assert h.coefficient((1,)) == pytest.approx(0.6)
    assert h.coefficient((2,)) == 5.0


def test_assemble_examples():
    ref = unit_ref()
    prob = assemble(LinearFunctional.integral(X), ambiguity_set(ref, 1))
    assert prob.sizes == [2]
    pair = assemble_AB(X, ref.table, 1)
    np.testing.assert_allclose(prob.objective[0], [[1 / 2, 1 / 3], [1 / 3, 1 / 4]], rtol=1e-15)
    np.testing.assert_allclose(prob.objective[0], pair.A, rtol=1e-15)
    norm = assemble(LinearFunctional.integral(), ambiguity_set(ref, 1))
    np.testing.assert_allclose(norm.objective[0], pair.B, rtol=1e-15)
    np.testing.assert_allclose(norm.rows[0].mats[0], pair.B, rtol=1e-15)
    with pytest.raises(ValueError):
        assemble(LinearFunctional.integral(X), ambiguity_set(ref, 1), sense="sup")


@pytest.mark.parametrize("backend", ["cvxopt", "clarabel"])
def test_solve_examples(backend):
    ref = unit_ref()
    f = LinearFunctional.integral(X)
    hi = wc_expectation(f, ambiguity_set(ref, 1), backend, "max")
    assert hi.ok and hi.value == pytest.approx(HI, abs=1e-7)
    lo = wc_expectation(f, ambiguity_set(ref, 1), backend, "min")
    assert lo.ok and lo.value == pytest.approx(LO, abs=1e-7)
    pinned = wc_expectation(f, ambiguity_set(ref, 1, [moment_constraint(ref, 1, (1,), 0.5)]), backend)
    assert pinned.ok and pinned.value == pytest.approx(0.5, abs=1e-7)
    for rep in (hi, lo, pinned):
        assert abs(rep.value - rep.dual_value) <= 1e-6 * (1 + abs(rep.value))
        assert rep.residual <= 1e-7
        assert rep.density.expectation() == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("backend", ["cvxopt", "clarabel"])
def test_infeasible_status(backend):
    ref = unit_ref()
    aset = ambiguity_set(ref, 2, [confidence_constraint(ref, 2, AxisSlab(0, 0.5, 1.0), 1.0)])
    rep = wc_probability(AxisSlab(0, 0.0, 0.5), aset, backend)
    assert rep.status == "infeasible" and not rep.ok
    assert rep.densities == []


def test_backends_agree_and_are_deterministic():
    ref = QuadratureReference(DomainSpec.cube(2), MeasureSpec.uniform(), 8)
    ev = portfolio_event([0.75, 0.25], [0.8, 0.7], [1.2, 1.3], 0.9)
    a = wc_probability(ev, portfolio_set(ref, 3, 2), "cvxopt")
    b = wc_probability(ev, portfolio_set(ref, 3, 2), "clarabel")
    assert a.ok and b.ok
    assert a.value == pytest.approx(b.value, abs=1e-6)
    again = wc_probability(ev, portfolio_set(ref, 3, 2), "cvxopt")
    assert again.value == a.value
    np.testing.assert_array_equal(again.density.gram, a.density.gram)


def test_sdpa_round_trip(tmp_path):
    ref = unit_ref(8)
    aset = ambiguity_set(ref, 2, [moment_constraint(ref, 2, (1,), (0.3, 0.6))])
    prob = assemble(LinearFunctional.integral(event=AxisSlab(0, 0.0, 0.3)), aset)
    text = to_sdpa(prob)
    body = [ln for ln in text.splitlines() if not ln.startswith(('"', "*"))]
    assert int(body[0].split()[0]) == len(prob.rows)
    assert int(body[1].split()[0]) == 2  # one PSD block plus the diagonal block
    path = tmp_path / "p.dat-s"
    write_sdpa(prob, path)
    back = read_sdpa(path)
    # inequality slacks come back as auxiliaries, so only the comment line differs
    assert to_sdpa(back).splitlines()[1:] == text.splitlines()[1:]
    a = solve(prob)
    b = solve(back)
    assert a.ok and b.ok
    assert b.value == pytest.approx(a.value, abs=1e-7)


def test_geneig_crosscheck_examples():
    sdp, eig, gap = geneig_crosscheck(X, unit_ref(), 1, "min")
    assert eig == pytest.approx(LO, abs=1e-12)
    assert gap <= 1e-6 * (1 + abs(eig))
    sq = QuadratureReference(DomainSpec.cube(2), LEB, 8)
    sdp, eig, gap = geneig_crosscheck(matyas(), sq, 3, "min")
    assert gap <= 1e-5
    sdp, eig, gap = geneig_crosscheck(Polynomial.constant(2, 2.5), sq, 2, "max")
    assert sdp == pytest.approx(2.5, abs=1e-7) and eig == pytest.approx(2.5, rel=1e-12)


def linear_family(x):
    # f(x, z) = x z - 1
    return {(1,): (x[0], np.array([1.0])), (0,): (-1.0, np.array([0.0]))}


def test_separation_oracle_examples():
    aset = ambiguity_set(unit_ref(), 1)
    res = separation_oracle([0.5], linear_family, aset)
    assert isinstance(res, Feasible)
    assert res.value == pytest.approx(0.5 * HI - 1, abs=1e-7)
    cut = separation_oracle([2.0], linear_family, aset)
    assert isinstance(cut, Hyperplane)
    assert cut.normal[0] == pytest.approx(HI, abs=1e-6)
    assert cut.value == pytest.approx(2 * HI - 1, abs=1e-7)
    # the query point violates the cut; points with x HI <= 1 satisfy it
    assert cut.normal @ np.array([2.0]) > cut.offset
    assert cut.normal @ np.array([1 / HI]) <= cut.offset + 1e-7

    def constant(x):
        return {(0,): (-0.3, np.zeros(1))}

    for x in (-5.0, 0.0, 7.0):
        assert isinstance(separation_oracle([x], constant, aset), Feasible)


def test_separation_oracle_needs_nonnegative_support():
    ref = MomentReference(build_table(DomainSpec.box([-1], [1]), LEB, 6))
    with pytest.raises(UnsupportedError):
        separation_oracle([1.0], linear_family, ambiguity_set(ref, 1))


@settings(max_examples=10)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.floats(-1, 1),
       st.lists(st.floats(-2, 2), min_size=2, max_size=2), st.lists(st.floats(0.2, 2), min_size=2, max_size=2),
       st.integers(0, 3))
def test_robust_counterpart_bound(c, c0, lo, width, r):
    # linear f over a box: the worst case is the best vertex
    lo = np.array(lo)
    hi = lo + np.array(width)
    dom = DomainSpec.box(lo, hi)
    ref = QuadratureReference(dom, LEB, 2 * r + 2)
    f = Polynomial(2, {(1, 0): c[0], (0, 1): c[1], (0, 0): c0})
    rep = wc_expectation(LinearFunctional.integral(f), ambiguity_set(ref, r))
    assert rep.ok
    vmax = c0 + sum(max(ci * a, ci * b) for ci, a, b in zip(c, lo, hi))
    assert rep.value <= vmax + 1e-6 * (1 + abs(vmax))


def test_portfolio_monotone_in_order_and_density_nonnegative():
    ev = portfolio_event([0.75, 0.25], [0.8, 0.7], [1.2, 1.3], 0.9)
    vals = []
    Z = np.random.default_rng(0).uniform(-1, 1, (1000, 2))
    for r in range(5):
        ref = QuadratureReference(DomainSpec.cube(2), MeasureSpec.uniform(), 2 * r + 2)
        rep = wc_probability(ev, portfolio_set(ref, r, 2))
        assert rep.ok and rep.residual <= 1e-7
        assert rep.density.expectation() == pytest.approx(1.0, abs=1e-8)
        assert np.all(rep.density.evaluate(Z) >= -1e-9)
        # activities rebuilt from h in moment space
        h = rep.density.h
        t = build_table(DomainSpec.cube(2), MeasureSpec.uniform(), h.degree + 1)
        for beta in ((1, 0), (0, 1)):
            m = sum(cf * t[tuple(a + b for a, b in zip(al, beta))] for al, cf in h.terms.items())
            assert abs(m) <= 1e-7
        vals.append(rep.value)
    assert np.all(np.diff(vals) > 0)
    np.testing.assert_allclose(vals[:2], [0.17, 0.39], atol=1e-2)
    assert evaluate(Polynomial.constant(2, 1.0), Z).shape == (1000,)
