from __future__ import annotations

from fractions import Fraction

import pytest

from vpdqft import brst
from vpdqft.errors import GaugeFunctionalError, InternalSignError, UnknownFieldError
from vpdqft.tensor_core import TensorExpr, field


def test_generator_images():
    s = brst.slope_operator
    assert s(field("h", "i_a")).is_zero()
    assert s(field("omegabar", "i_a")) == -field("h", "i_a")
    assert s(field("A", "s_m", "i^a"), abelian=True) == field("omega", "i^a", d=["s_m"])
    so = s(field("omega", "i^a"))
    assert so == -(field("omega", "i^b") * field("omega", "i^a", d=["i_b"]))


@pytest.mark.parametrize("name", ["A", "omega", "omegabar", "h", "psi"])
def test_nilpotent_on_generators(name):
    r = brst.nilpotency_check(brst.generators()[name])
    assert r.passed
    assert r.residual.is_zero() and r.two_parameter_residual.is_zero()


def test_nilpotent_on_random_corpus():
    for m in brst.monomial_corpus(40, seed=77):
        assert brst.nilpotency_check(m).passed, str(m)


def test_corpus_is_deterministic_and_varied():
    a = brst.monomial_corpus(20, seed=5)
    b = brst.monomial_corpus(20, seed=5)
    assert a == b
    assert len({str(x) for x in a}) > 10


def test_two_routes_agree():
    # canonicaliser-driven theta placement against the explicitly signed derivation
    exprs = list(brst.generators().values()) + brst.monomial_corpus(40, seed=13)
    exprs.append(field("omega", "i^a") * field("omegabar", "i_a") * field("A", "s_m", "i^b", d=["i_b"]))
    for e in exprs:
        assert brst.slope_operator(e) == brst.s_graded(e), str(e)


def test_grading():
    for e in brst.monomial_corpus(30, seed=2):
        se = brst.slope_operator(e)
        if se.is_zero():
            continue
        (g,) = brst.ghost_numbers(e)
        (p,) = brst.parities(e)
        assert brst.ghost_numbers(se) == {g + 1}
        assert brst.parities(se) == {1 - p}
    # delta_theta preserves ghost number because theta carries -1
    e = field("A", "s_m", "i^a")
    assert brst.ghost_numbers(brst.brst_variation(e)) == {0}


def test_strip_parameter_guards():
    with pytest.raises(InternalSignError):
        brst.strip_parameter(field("A", "s_m", "i^a"))


def test_unknown_field():
    with pytest.raises(UnknownFieldError):
        brst.slope_operator(field("B", "s_m", "g^a", "g_b"))


def test_odd_parameter_squares_to_zero():
    th = TensorExpr.from_raw([(Fraction(1), (), (brst.Factor("theta"),))])
    assert (th * th).is_zero()


def test_gauge_fermion_decomposition():
    dec = brst.s_of_gauge_fermion()
    assert dec.passed
    # Faddeev-Popov operator on the ghost: d^m (d_m omega + A_m . nabla omega - omega . nabla A_m)
    want = field("omega", "i^c", d=["s_m", "s^m"]) \
        + field("A", "s^m", "i^b", d=["s_m"]) * field("omega", "i^c", d=["i_b"]) \
        + field("A", "s^m", "i^b") * field("omega", "i^c", d=["i_b", "s_m"]) \
        - field("omega", "i^b", d=["s_m"]) * field("A", "s^m", "i^c", d=["i_b"]) \
        - field("omega", "i^b") * field("A", "s^m", "i^c", d=["i_b", "s_m"])
    assert dec.delta == want


@pytest.mark.parametrize("xi", [0, 1, Fraction(5, 2)])
def test_gauge_fermion_any_xi(xi):
    assert brst.s_of_gauge_fermion(xi=xi).passed


def test_gauge_functional_checked():
    with pytest.raises(GaugeFunctionalError):
        brst.gauge_fermion(field("A", "s_m", "i^a"))


def test_action_invariance_transforming_metric():
    rep = brst.brst_invariance_of_action()
    assert rep.passed
    assert rep.gauge_fixing_residual.is_zero()


def test_action_not_invariant_with_frozen_metric():
    rep = brst.brst_invariance_of_action(metric="frozen")
    assert not rep.passed
    assert isinstance(rep, brst.InvarianceFailureReport)
    assert not rep.classical_residual.is_zero()


def test_abelian_limit_invariant():
    assert brst.brst_invariance_of_action(abelian=True).passed


def test_numeric_torus_oracle():
    # grid integral of s L over a periodic box with divergence-free fields
    t_mean, t_size = brst.numeric_action_variation("transforming", seed=11)
    f_mean, f_size = brst.numeric_action_variation("frozen", seed=11)
    assert t_mean <= 1e-10 * t_size
    assert f_mean >= 1e-4 * f_size


def test_lagrangian_is_gauge_invariant():
    red = brst.action_reducer()
    L = brst.classical_lagrangian()
    assert not red.reduce(L).is_zero()
    assert not brst.gauge_variation(L).is_zero()
