from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from vpdqft import one_loop_ledger as led
from vpdqft.errors import DomainError, UnsupportedGaugeError
from vpdqft.tensor_core import ETA_DIAG, TensorExpr, evaluate

ETA = np.diag(ETA_DIAG)

# golden per-species values including the determinant power,
# in units of (Omega4/eps) Omega1 Lambda^-2 int F.F
GOLDEN = {
    "gauge": Fraction(-10, 3),
    "ghost": Fraction(-1, 3),
    "yang-mills": Fraction(-1, 12),
    "yang-mills-ghost": Fraction(-1, 12),
    "dirac": Fraction(1, 3),
    "chiral-dirac": Fraction(1, 6),
    "complex-scalar": Fraction(1, 12),
}


def _ops():
    g, gh = led.gauge_fluctuation_operators()
    v, vg = led.matter_gauge_operators()
    return [g, gh, v, vg, led.dirac_operator(False), led.dirac_operator(True), led.scalar_operator()]


def test_block_coefficients_come_from_heat_kernel():
    assert led.block_coefficients() == (Fraction(-1, 12), Fraction(-1, 2))


def test_species_table():
    ops = _ops()
    got = {op.name: led.species_coefficient(op) for op in ops}
    assert got["yang-mills"] + got["yang-mills-ghost"] == Fraction(-1, 6)
    # divergent determinants carry an extra i and no determinant weight
    assert led.divergent_gauge_determinant().coefficient(
        led.effective_action_unit() * TensorExpr.scalar(1, (("I", 1),))) == Fraction(20, 3)
    assert led.divergent_ghost_determinant().coefficient(
        led.effective_action_unit() * TensorExpr.scalar(1, (("I", 1),))) == Fraction(-1, 3)
    # Det^-1/2 of the gauge determinant: -1/2 * 20/3
    assert got == GOLDEN


def test_pure_theory_total():
    total = led.assemble_one_loop_divergence()
    assert total.coefficient(led.effective_action_unit()) == Fraction(-11, 3)
    rc = led.renormalized_coupling()
    assert rc.C == Fraction(11, 3)
    b = led.beta_function()
    assert b.coefficient == Fraction(-11, 3) and b.sign == -1 and b.verdict == "asymptotically free"


def test_coupling_unit():
    # 2 Omega4 Omega1 with Omega4 = 1/(8 pi^2), Omega1 = 1/(720 (4 pi)^3)
    assert led.COUPLING_UNIT == Fraction(1, 180 * 4 ** 5)
    om4 = 1 / (8 * np.pi ** 2)
    om1 = 1 / (720 * (4 * np.pi) ** 3)
    assert np.isclose(float(led.COUPLING_UNIT) / np.pi ** 5, 2 * om4 * om1, rtol=1e-14)
    assert np.isclose(float(led.COUPLING_UNIT) / np.pi ** 5, 1 / (180 * (4 * np.pi) ** 5), rtol=1e-14)


def test_standard_model_ledger():
    entries, total = led.sm_ledger()
    assert [(e.species, e.count, e.twelfths) for e in entries] == [
        ("pure gauge + ghost", 1, 44), ("yang-mills field", 12, 24), ("chiral dirac", 45, -90),
        ("complex scalar", 2, -2)]
    assert total == -24
    assert led.renormalized_coupling(led.MatterContent.standard_model()).C == -2
    b = led.beta_function(led.MatterContent.standard_model())
    assert b.coefficient == 2 and b.sign == 1 and b.verdict == "not asymptotically free"


def test_contribution_helpers():
    assert led.pure_gauge_contribution().twelfths == 44
    assert led.matter_gauge_contribution().twelfths == 2
    assert led.matter_dirac_contribution(True).twelfths == -2
    assert led.matter_dirac_contribution(False).twelfths == -4
    assert led.matter_scalar_contribution(True).twelfths == -2
    assert led.matter_scalar_contribution(False).twelfths == -1


def test_potential_drops_out():
    with_v = led.trace_log_pole(led.scalar_operator(True))
    without = led.trace_log_pole(led.scalar_operator(False))
    assert with_v.ff == without.ff
    assert not with_v.remainder.is_zero()
    assert without.remainder.is_zero()


def _fop_provider(F):
    def provide(f):
        if f.name == "Fop":
            return F[:, :, None, None]
        if f.name == "eta":
            return ETA
        raise AssertionError(f.name)
    return provide


def _gammas():
    s = [np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.array([[1, 0], [0, -1]])]
    z = np.zeros((2, 2))
    g0 = np.block([[z, np.eye(2)], [np.eye(2), z]])
    return [1j * g for g in [g0] + [np.block([[z, si], [-si, z]]) for si in s]]


def test_spinor_trace_numeric_oracle():
    rng = np.random.default_rng(21)
    F = rng.normal(size=(4, 4))
    F = F - F.T
    sym = led.spin_trace_ee(led.dirac_operator())
    got = evaluate(sym, _fop_provider(F))
    G = _gammas()
    G_low = [ETA[m, m] * G[m] for m in range(4)]
    Fup = ETA @ F @ ETA
    E = sum(-0.5 * Fup[m, n] * G_low[m] @ G_low[n] for m in range(4) for n in range(4))
    want = np.trace(E @ E)
    assert abs(got - want) <= 1e-12 * max(1, abs(want))
    FF = np.einsum("mn,mn->", F, Fup)
    # -1/2 of the spin trace goes with F.F: tr(E E) = -2 F.F with the identity part removed
    assert np.isclose(want, -2 * FF)


def test_vector_trace_numeric_oracle():
    rng = np.random.default_rng(22)
    F = rng.normal(size=(4, 4))
    F = F - F.T
    gauge, _ = led.gauge_fluctuation_operators()
    got = evaluate(led.spin_trace_ee(gauge), _fop_provider(F))
    Fmix = ETA @ F  # F^r_c
    E = -2 * Fmix
    assert np.isclose(got, np.trace(E @ E), rtol=1e-12)


def test_inner_traces():
    assert led.inner_index_trace("vector") == TensorExpr.scalar(4)
    assert led.inner_index_trace("scalar") == TensorExpr.scalar(1)
    with pytest.raises(DomainError):
        led.inner_index_trace("spinor")
    with pytest.raises(DomainError):
        led.spin_identity_trace("tensor")


def test_gauge_parameter_guard():
    with pytest.raises(UnsupportedGaugeError):
        led.gauge_fluctuation_operators(xi=2)


def test_matter_content():
    m = led.MatterContent.from_mapping({"gauge_fields": 1, "dirac": 2, "scalar_doublets": 1})
    assert m == led.MatterContent(1, 4, 2, True)
    assert led.MatterContent.pure() + led.MatterContent(0, 3, 0, False) == led.MatterContent(0, 3, 0, True)
    with pytest.raises(DomainError):
        led.MatterContent.from_mapping({"quarks": 3})
    with pytest.raises(DomainError):
        led.MatterContent(-1)
    only_matter = led.MatterContent(0, 1, 0, False)
    entries, total = led.ledger(only_matter)
    assert total == -2 and len(entries) == 1


def test_renormalized_coupling_value():
    rc = led.renormalized_coupling()
    unit = 1 / (180 * (4 * np.pi) ** 5)
    assert np.isclose(rc.value(0.5, 0.1), 0.5 * (1 - 0.25 * unit * 11 / 3 / 0.1), rtol=1e-14)
    with pytest.raises(DomainError):
        rc.value(1.0, 0.0)
    assert np.isclose(led.beta_function().value(2.0), -11 / 3 * 8 * unit, rtol=1e-14)
