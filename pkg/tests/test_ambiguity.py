import numpy as np
import pytest

from sosdensity.ambiguity import (AmbiguityConstraint, LinearFunctional, ambiguity_set, bin_masses,
                                  conditional_moment_constraint, conditional_probability_constraint,
                                  confidence_constraint, histogram_matching, marginal_matching, mixture_ambiguity,
                                  moment_constraint, normalization)
from sosdensity.moments import (AxisSlab, intersect, DomainSpec, Halfspace, InsufficientDegreeError, MeasureSpec,
                                UnsupportedError, build_table)
from sosdensity.polybasis import Polynomial, index_set
from sosdensity.quadrature import MomentReference, QuadratureReference
from sosdensity.wcsdp import wc_expectation, wc_probability

UNIT = DomainSpec.box([0], [1])
UNIF = MeasureSpec.uniform()
LEB = MeasureSpec.lebesgue()
ONE1 = Polynomial.constant(1, 1.0)
ONE2 = Polynomial.constant(2, 1.0)


def unit_ref(degree=8):
    return MomentReference(build_table(UNIT, UNIF, degree))


def square01(degree=8):
    return MomentReference(build_table(DomainSpec.box([0, 0], [1, 1]), UNIF, degree))


def coef(con, ref, r):
    return con.functional.coefficient_vector(ref, index_set(ref.n, 2 * r))


def test_normalization_examples():
    ref = unit_ref()
    np.testing.assert_allclose(coef(normalization(ref, 1), ref, 1), [1, 1 / 2, 1 / 3], rtol=1e-15)
    simplex = MomentReference(build_table(DomainSpec.simplex(2), LEB, 2))
    assert coef(normalization(simplex, 0), simplex, 0)[0] == pytest.approx(0.5, rel=1e-15)
    logn = MomentReference(build_table(DomainSpec.orthant(2), MeasureSpec.lognormal([-0.3, 0.4], [0.8, 0.5]), 2))
    assert coef(normalization(logn, 0), logn, 0)[0] == pytest.approx(1.0, rel=1e-12)
    assert normalization(ref, 1).relation == "=" and normalization(ref, 1).rhs == 1.0


def test_moment_constraint_examples():
    ref = MomentReference(build_table(DomainSpec.box([-1], [1]), LEB, 6))
    con = moment_constraint(ref, 1, (1,), 0.0)
    np.testing.assert_allclose(coef(con, ref, 1), [0, 2 / 3, 0], atol=1e-15)
    a = moment_constraint(ref, 1, (0,), 1.0)
    np.testing.assert_allclose(coef(a, ref, 1), coef(normalization(ref, 1), ref, 1))
    assert a.rhs == 1.0 and a.relation == "="
    with pytest.raises(InsufficientDegreeError):
        moment_constraint(ref, 3, (1,), 0.0)
    iv = moment_constraint(ref, 1, (1,), (-0.1, 0.1))
    assert iv.relation == "interval" and iv.rhs == (-0.1, 0.1)
    with pytest.raises(ValueError):
        AmbiguityConstraint((iv.functional,), "interval", (1.0, 0.0))


def test_portfolio_zero_mean_constraints():
    ref = MomentReference(build_table(DomainSpec.cube(2), UNIF, 6))
    cons = [moment_constraint(ref, 1, (1, 0), 0.0), moment_constraint(ref, 1, (0, 1), 0.0)]
    # the reference itself (h = 1) has vanishing means
    for c in cons:
        assert c.functional.evaluate(ONE2, ref) == pytest.approx(0.0, abs=1e-15)


def test_confidence_examples():
    ref = unit_ref()
    C = AxisSlab(0, 0.5, 1.0)
    con = confidence_constraint(ref, 0, C, 0.5)
    assert coef(con, ref, 0)[0] == pytest.approx(0.5, rel=1e-14)
    assert con.functional.evaluate(ONE1, ref) == pytest.approx(0.5, rel=1e-14)
    aset = ambiguity_set(ref, 0, [con])
    rep = wc_expectation(LinearFunctional.integral(Polynomial.variable(1, 0)), aset)
    assert rep.ok and rep.value == pytest.approx(0.5, abs=1e-7)


@pytest.mark.parametrize("r", [0, 1, 3])
def test_confidence_one_on_half_interval_is_infeasible(r):
    ref = unit_ref()
    aset = ambiguity_set(ref, r, [confidence_constraint(ref, r, AxisSlab(0, 0.5, 1.0), 1.0)])
    rep = wc_probability(AxisSlab(0, 0.0, 0.25), aset)
    assert rep.status == "infeasible"
    assert np.isnan(rep.value)


def test_conditional_probability_examples():
    ref = square01()
    C1 = AxisSlab(0, 0.0, 0.5)
    within = AxisSlab(0, 0.0, 0.75)
    vac = conditional_probability_constraint(ref, 2, C1, within, 1.0)
    np.testing.assert_allclose(coef(vac, ref, 2), 0.0, atol=1e-15)
    C2 = AxisSlab(1, 0.0, 0.5)
    zero = conditional_probability_constraint(ref, 2, C1, C2, 0.0)
    joint = confidence_constraint(ref, 2, intersect(C1, C2), 0.0)
    np.testing.assert_allclose(coef(zero, ref, 2), coef(joint, ref, 2), rtol=1e-13, atol=1e-16)
    assert zero.rhs == 0.0
    indep = conditional_probability_constraint(ref, 1, C1, C2, 0.5)
    assert indep.functional.evaluate(ONE2, ref) == pytest.approx(0.0, abs=1e-15)


def test_conditional_moment_examples():
    ref = unit_ref()
    whole = AxisSlab(0, 0.0, 1.0)
    c = conditional_moment_constraint(ref, 1, (1,), whole, 0.5)
    assert c.functional.evaluate(ONE1, ref) == pytest.approx(0.0, abs=1e-15)
    want = coef(moment_constraint(ref, 1, (1,), 0.5), ref, 1) - 0.5 * coef(normalization(ref, 1), ref, 1)
    np.testing.assert_allclose(coef(c, ref, 1), want, atol=1e-15)
    half = conditional_moment_constraint(ref, 1, (1,), AxisSlab(0, 0.0, 0.5), 0.25)
    assert half.functional.evaluate(ONE1, ref) == pytest.approx(0.0, abs=1e-15)


def test_marginal_matching_examples():
    ref = MomentReference(build_table(DomainSpec.box([0, 0], [1, 1]), UNIF, 8))
    block = marginal_matching(ref, 1, 0)
    assert len(block.constraints) == 3
    iset = index_set(2, 2)
    assert len(iset) == 6
    for con in block.constraints:
        assert con.functional.evaluate(ONE2, ref) - con.rhs == pytest.approx(0.0, abs=1e-12)
    # x1 - 1/2 shifts the axis-0 mean: excluded
    h = Polynomial(2, {(1, 0): 2.0})
    assert abs(block.constraints[1].functional.evaluate(h, ref)) > 1e-3
    qref = QuadratureReference(DomainSpec.box([0, 0], [1, 1]), UNIF, 8)
    for axis in (0, 1):
        for con in marginal_matching(qref, 2, axis).constraints:
            B = con.functional.lift(qref, qref.default_basis(0))
            assert B[0, 0] * 1.0 - con.rhs == pytest.approx(0.0, abs=1e-12)


def test_marginal_matching_needs_product_reference():
    ref = MomentReference(build_table(DomainSpec.simplex(2), LEB, 6))
    with pytest.raises(UnsupportedError):
        marginal_matching(ref, 1, 0)


def test_marginal_matching_residuals_at_optimum():
    ref = QuadratureReference(DomainSpec.box([0, 0], [1, 1]), UNIF, 10)
    aset = ambiguity_set(ref, 2, [marginal_matching(ref, 2, 0), marginal_matching(ref, 2, 1)])
    rep = wc_probability(Halfspace((1.0, 1.0), 1.5, ">="), aset)
    assert rep.ok and rep.residual <= 1e-7
    assert rep.density.expectation() == pytest.approx(1.0, abs=1e-8)
    # the worst case cannot beat the Frechet bound for uniform marginals
    assert rep.value <= 0.5 + 1e-6


def test_histogram_exact_and_l1():
    ref = unit_ref(6)
    bins = [(0.0, 0.25), (0.25, 0.5), (0.5, 1.0)]
    targets = bin_masses(ref, 0, bins)
    np.testing.assert_allclose(targets, [0.25, 0.25, 0.5], rtol=1e-14)
    block = histogram_matching(ref, 1, 0, bins, targets)
    for con in block.constraints:
        assert con.functional.evaluate(ONE1, ref) == pytest.approx(con.rhs, abs=1e-14)
    l1 = histogram_matching(ref, 1, 0, bins, targets, "l1", 0.05)
    assert l1.n_aux == 6 and len(l1.constraints) == 4
    with pytest.raises(ValueError):
        histogram_matching(ref, 1, 0, [(0.0, 0.5), (0.4, 1.0)], [0.5, 0.5])
    with pytest.raises(ValueError):
        histogram_matching(ref, 1, 0, bins, [0.5, -0.1, 0.6])


def test_histogram_l1_zero_tolerance_equals_exact():
    ref = unit_ref(8)
    bins = [(0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)]
    targets = [0.1, 0.2, 0.3, 0.4]
    ev = AxisSlab(0, 0.8, 1.0)
    exact = wc_probability(ev, ambiguity_set(ref, 2, [histogram_matching(ref, 2, 0, bins, targets)]))
    zero = wc_probability(ev, ambiguity_set(ref, 2, [histogram_matching(ref, 2, 0, bins, targets, "l1", 0.0)]))
    assert exact.ok and zero.ok
    assert zero.value == pytest.approx(exact.value, abs=1e-6)


def test_histogram_tolerance_monotone():
    ref = unit_ref(8)
    bins = [(0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)]
    targets = [0.1, 0.2, 0.3, 0.4]
    ev = AxisSlab(0, 0.8, 1.0)
    vals = [wc_probability(ev, ambiguity_set(ref, 2, [histogram_matching(ref, 2, 0, bins, targets, "l1", t)])).value
            for t in (0.0, 0.02, 0.05, 0.1)]
    assert np.all(np.diff(vals) >= -1e-7)


def test_mixture_single_component_equals_plain():
    ref = unit_ref(6)
    f = LinearFunctional.integral(Polynomial.variable(1, 0))
    plain = wc_expectation(f, ambiguity_set(ref, 1))
    mix = wc_expectation(f, mixture_ambiguity([ref], 1))
    assert mix.value == pytest.approx(plain.value, abs=1e-7)
    with pytest.raises(ValueError):
        mixture_ambiguity([], 1)


def test_mixture_symmetric_components():
    ref = unit_ref(6)
    f = LinearFunctional.integral(Polynomial.variable(1, 0))
    plain = wc_expectation(f, ambiguity_set(ref, 2))
    mix = wc_expectation(f, mixture_ambiguity([ref, unit_ref(6)], 2))
    assert mix.ok and mix.value == pytest.approx(plain.value, abs=1e-7)


def test_mixture_fixed_weight_equals_first_component():
    a = unit_ref(6)
    # second component: the measure 3 z^2 dz on [0, 1]
    b = MomentReference(build_table(UNIT, MeasureSpec.lebesgue(), 8)).reweighted(Polynomial(1, {(2,): 3.0}))
    f = LinearFunctional.integral(Polynomial.variable(1, 0))
    want = wc_expectation(f, ambiguity_set(a, 1)).value
    mix = mixture_ambiguity([a, b], 1, [(1.0, 1.0), None])
    rep = wc_expectation(f, mix)
    assert rep.ok and rep.value == pytest.approx(want, abs=1e-6)
    assert rep.aux[0] == pytest.approx(1.0, abs=1e-6)


def test_adding_constraints_never_increases_sup():
    ref = QuadratureReference(DomainSpec.cube(2), UNIF, 10)
    ev = Halfspace((0.15, 0.075), -0.05, "<=")
    cons = [moment_constraint(ref, 3, (1, 0), 0.0), moment_constraint(ref, 3, (0, 1), 0.0),
            moment_constraint(ref, 3, (2, 0), (0.0, 0.4), "interval")]
    vals = []
    for k in range(len(cons) + 1):
        rep = wc_probability(ev, ambiguity_set(ref, 3, cons[:k]))
        assert rep.ok
        vals.append(rep.value)
    assert np.all(np.diff(vals) <= 1e-7)


def test_sealed_set_rejects_additions():
    ref = unit_ref()
    aset = ambiguity_set(ref, 1).seal()
    with pytest.raises(RuntimeError):
        aset.add(normalization(ref, 1))
