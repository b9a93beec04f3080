from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from vpdqft import heat_kernel as hk
from vpdqft.errors import DomainError, FiniteOrderNotice, FormMismatchError, UnsupportedGaugeError
from vpdqft.tensor_core import ETA_DIAG, evaluate

ETA = np.diag(ETA_DIAG)

# the nine weights of the general pole formula (hard-coded reference for tests)
NINE = [Fraction(-1, 12), Fraction(-1, 24), Fraction(1, 2), Fraction(-1, 2), Fraction(1, 12),
        Fraction(-1, 12), Fraction(-1, 4), Fraction(-1, 48), Fraction(-1, 96)]


# ------------------------------------------------------------- pole oracle
#
# Independent route to the pole of int d^dp p^{m1..mr} / prod_j (p + Q_j)^2:
# after Wick rotation the 1/eps coefficient (in units of int 1/(p^2)^2) is the
# angular average of the degree -4 part of the integrand at large p.  That
# part is read off as the t^-4 Laurent coefficient of f(t u) on a big circle.

def _sphere_rule(n=20):
    x, w = np.polynomial.legendre.leggauss(n)
    a = (x + 1) * np.pi / 2
    wa = w * np.pi / 2 * np.sin(a) ** 2
    b = a
    wb = w * np.pi / 2 * np.sin(b)
    c = np.arange(2 * n) * np.pi / n
    wc = np.full(2 * n, np.pi / n)
    A, B, Cc = np.meshgrid(a, b, c, indexing="ij")
    W = (wa[:, None, None] * wb[None, :, None] * wc[None, None, :]).ravel()
    A, B, Cc = A.ravel(), B.ravel(), Cc.ravel()
    u = np.stack([np.cos(A), np.sin(A) * np.cos(B), np.sin(A) * np.sin(B) * np.cos(Cc),
                  np.sin(A) * np.sin(B) * np.sin(Cc)], axis=1)
    return u, W / W.sum()


def pole_oracle(r, shifts):
    u, w = _sphere_rule()
    R = 8.0 * (1 + max((np.linalg.norm(q) for q in shifts), default=0))
    theta = 2 * np.pi * np.arange(64) / 64
    t = R * np.exp(1j * theta)
    val = np.ones((len(u), len(t)), dtype=complex)
    for Q in shifts:
        uq = u @ Q
        val /= t[None, :] ** 2 + 2 * t[None, :] * uq[:, None] + Q @ Q
    coeff = np.mean(val * t[None, :] ** (r + 4), axis=1).real  # t^-4 coefficient times t^-r from p^r
    out = coeff * w
    tens = out
    spec = "z" + "".join("abcdefgh"[j] for j in range(r))
    ops = [tens] + [u] * r
    subs = ["z"] + ["z" + "abcdefgh"[j] for j in range(r)]
    return np.einsum(",".join(subs) + "->" + spec[1:], *ops)


def _euclid_provider(momenta):
    def provide(f):
        if f.name == "eta":
            return np.eye(4)
        v = np.asarray(momenta[f.tag], float)
        return ETA @ v if f.indices[0].up else v
    return provide


@pytest.mark.parametrize("r,n", [(0, 2), (1, 2), (2, 2), (2, 3), (3, 3), (4, 3), (4, 4), (3, 4), (0, 3)])
def test_pole_table_against_contour_oracle(r, n):
    rng = np.random.default_rng(10 * r + n)
    ks = {str(j): rng.normal(size=4) for j in range(2, n + 1)}
    shifts = [np.zeros(4)]
    acc = np.zeros(4)
    for j in range(2, n + 1):
        acc = acc + ks[str(j)]
        shifts.append(acc.copy())
    expr = hk.divergent_momentum_integral(r, n)
    got = evaluate(expr, _euclid_provider(ks), {"I": 1.0, "Omega4": 1.0, "eps": 1.0}) if not expr.is_zero() else 0.0
    want = pole_oracle(r, shifts)
    if expr.is_zero():
        assert np.allclose(want, 0, atol=1e-10)
        return
    free = [int(s.label[1:]) - 1 for s in expr.free_indices()]
    want = np.transpose(want, free) if r else want
    assert np.allclose(np.real(got), want, atol=1e-10)


def test_textbook_poles():
    # the bubble is the unit; p^m p^n / p^2 (p+k)^2 -> k^m k^n / 3 - k^2 eta / 12
    assert hk.divergent_momentum_integral(0, 2).coefficient(
        hk.divergent_momentum_integral(0, 2)) == 1
    assert hk.divergent_momentum_integral(0, 1).is_zero()
    assert hk.divergent_momentum_integral(2, 1).is_zero()
    with pytest.raises(DomainError):
        hk.divergent_momentum_integral(5, 2)
    with pytest.raises(DomainError):
        hk.divergent_momentum_integral(0, 5)


def test_oracle_sees_a_wrong_coefficient():
    # negative control: the oracle is sensitive to a 1/12 -> 1/6 change
    rng = np.random.default_rng(0)
    k = rng.normal(size=4)
    want = pole_oracle(2, [np.zeros(4), k])
    textbook = np.outer(k, k) / 3 - (k @ k) * np.eye(4) / 12
    wrong = np.outer(k, k) / 3 - (k @ k) * np.eye(4) / 6
    assert np.allclose(want, textbook, atol=1e-10)
    assert not np.allclose(want, wrong, atol=1e-3)


def test_log_weights_and_orders():
    assert [hk.log_weight(n) for n in range(1, 5)] == [1, Fraction(-1, 2), Fraction(1, 3), Fraction(-1, 4)]
    with pytest.raises(FiniteOrderNotice) as info:
        hk.expand_log_trace(5)
    assert info.value.order == 5
    with pytest.raises(DomainError):
        hk.expand_log_trace(0)


def test_nine_coefficients():
    res = hk.divergent_trace_general()
    assert [res.coefficients[k] for k in hk.BASIS_NAMES] == NINE
    assert res.residual.is_zero()


def test_locality_bound():
    res = hk.divergent_trace_general()
    for (_, fs), _ in res.expr.terms.items():
        ops = [f for f in fs if f.name in ("B", "C")]
        assert len(ops) <= 4
        assert sum(len(f.derivs) for f in ops) <= 2


def _matrix_provider(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(4, 3, 3))
    dB = rng.normal(size=(4, 3, 3, 4))
    C = rng.normal(size=(3, 3))
    dC = rng.normal(size=(3, 3, 4))
    arrays = {("B", 0): B, ("B", 1): dB, ("C", 0): C, ("C", 1): dC}

    def provide(f):
        if f.name == "eta":
            return ETA
        try:
            return arrays[(f.name, len(f.derivs))]
        except KeyError:
            raise AssertionError(f"unexpected factor {f}")
    return provide, B, dB, C


def test_general_formula_numeric_oracle():
    # random 3x3 matrix coefficients; the nine structures computed with numpy matrix products
    provide, B, dB, C = _matrix_provider(4)
    Bup = np.einsum("Mm,mab->Mab", ETA, B)
    X = np.einsum("mabM,Mm->ab", dB, ETA)               # d^m B_m
    Y = np.einsum("nab,nbc->ac", Bup, B)                 # B^n B_n
    tr = np.trace
    terms = [
        tr(X @ X),
        np.einsum("mabN,MbaK,NK,mM->", dB, dB, ETA, ETA),
        tr(X @ C),
        tr(C @ C),
        tr(X @ Y),
        np.einsum("mab,KbcM,Mm,Kn,nca->", B, dB, ETA, ETA, B),     # tr(B_m d^m B^n B_n)
        tr(C @ Y),
        tr(Y @ Y),
        np.einsum("mab,nbc,mcd,nda->", Bup, Bup, B, B),
    ]
    want = 1j * sum(float(w) * t for w, t in zip(NINE, terms))
    got = evaluate(hk.divergent_trace_general().expr, provide, {"Omega4": 1.0, "eps": 1.0})
    assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


def test_covariant_specialization():
    ok, residual = hk.covariant_check()
    assert ok and residual.is_zero()
    res = hk.specialize_covariant()
    assert res.coefficients == {"F.F": Fraction(-1, 12), "E.E": Fraction(-1, 2)}
    assert res.expr == hk.covariant_target(expanded=False)


def test_operator_spec_guards():
    with pytest.raises(FormMismatchError):
        hk.FluctuationOperatorSpec("nonsense")
    with pytest.raises(UnsupportedGaugeError):
        hk.FluctuationOperatorSpec("generalBC", xi=Fraction(2))
    with pytest.raises(FormMismatchError):
        hk.divergent_trace_general(hk.FluctuationOperatorSpec("covariantAE"))
    with pytest.raises(FormMismatchError):
        hk.specialize_covariant(hk.FluctuationOperatorSpec("generalBC"))
