from __future__ import annotations

import math

import numpy as np
import pytest

from vpdqft import inner_regulator as reg
from vpdqft.errors import DegenerateFrameError, DomainError, PrecisionError, SupportViolationError


# ------------------------------------------------------------ box oracle
#
# Brute force over the flat measure d^4P: uniform points in the box
# [-1/(2 Lambda), 1/(2 Lambda)]^4, kept when |p| <= |P0| <= 1/(2 Lambda).

def box_oracle(n=4_000_000, lam=1.0, seed=99):
    rng = np.random.default_rng(seed)
    h = 0.5 / lam
    P = rng.uniform(-h, h, size=(n, 4))
    inside = np.linalg.norm(P[:, 1:], axis=1) <= np.abs(P[:, 0])
    box = (2 * h) ** 4 / (2 * math.pi) ** 4
    w = inside * box
    P2 = -P[:, 0] ** 2 + np.sum(P[:, 1:] ** 2, axis=1)
    out = {}
    for name, f in (("volume", np.ones(n)), ("p00", P[:, 0] ** 2), ("p11", P[:, 1] ** 2), ("eta2", P2 / 4),
                    ("p0", P[:, 0]), ("p1", P[:, 1])):
        vals = w * f
        out[name] = (vals.mean(), vals.std(ddof=1) / math.sqrt(n))
    return out


@pytest.fixture(scope="module")
def box():
    return box_oracle()


def test_box_oracle_against_closed_forms(box):
    v, e = box["volume"]
    assert abs(v - reg.analytic_volume()) <= 4 * e
    c00, c11 = reg.analytic_rank2_components()
    assert abs(box["p00"][0] - c00) <= 4 * box["p00"][1]
    assert abs(box["p11"][0] - c11) <= 4 * box["p11"][1]
    assert abs(box["eta2"][0] - reg.analytic_eta_coefficient2()) <= 4 * box["eta2"][1]


def test_volume_matches_oracle(box):
    m = reg.regularized_moment(0, reg.RegulatorConfig(samples=2_000_000, seed=3))
    v, e = box["volume"]
    assert m.lambda_power == -4
    assert abs(m.value - v) <= 4 * math.hypot(m.error, e)
    assert abs(m.value - reg.analytic_volume()) <= 4 * m.error


def test_rank2_components(box):
    m = reg.regularized_moment(2, reg.RegulatorConfig(samples=2_000_000, seed=4))
    c00, c11 = reg.analytic_rank2_components()
    v0, e0 = m.components["component_0"]
    v1, e1 = m.components["component_1"]
    assert abs(v0 - c00) <= 4 * e0
    assert abs(v1 - c11) <= 4 * e1
    assert abs(m.value - reg.analytic_eta_coefficient2()) <= 4 * m.error
    # the region singles out the frame: the rank-2 moment is not a multiple of eta
    fp, fe = m.components["frame_part"]
    assert fp > 10 * fe
    assert abs(fp - (c00 + c11)) <= 4 * fe


def test_omega1_relation():
    # the traced rank-2 coefficient is -2 times the named inner-trace constant
    assert math.isclose(-reg.analytic_eta_coefficient2(), 2 * reg.omega1_value(), rel_tol=1e-14)


@pytest.mark.parametrize("r", [1, 3])
def test_odd_moments_vanish(r):
    m = reg.regularized_moment(r, reg.RegulatorConfig(samples=1_000_000, seed=5))
    assert abs(m.value) <= 3 * m.error
    for v, e in m.components.values():
        assert abs(v) <= 3 * e


def test_scaling_law():
    cfg = reg.RegulatorConfig(samples=1_000_000, seed=6)
    for r in (0, 2):
        for rho in (0.5, 2.0, 10.0):
            rep = reg.scaling_covariance_check(r, rho, cfg)
            assert rep.passed, rep.to_dict()
            assert isinstance(rep, reg.ScalingReport)
    exact = reg.scaling_covariance_check(2, 1.0, cfg)
    assert exact.deviation_sigma == 0.0


def test_lambda_power_rescaling():
    cfg = reg.RegulatorConfig(samples=500_000, seed=1)
    a = reg.regularized_moment(0, cfg)
    b = reg.regularized_moment(0, reg.RegulatorConfig(lam=2.0, samples=500_000, seed=1))
    # same stream, so the rescaled sample is the identical sample
    assert math.isclose(b.value * 2 ** 4, a.value, rel_tol=1e-12)


def test_determinism_and_workers():
    cfg1 = reg.RegulatorConfig(samples=300_000, seed=9, workers=1)
    cfg4 = reg.RegulatorConfig(samples=300_000, seed=9, workers=4)
    a = reg.regularized_moment(2, cfg1)
    b = reg.regularized_moment(2, cfg4)
    c = reg.regularized_moment(2, cfg1)
    assert a.to_dict() == b.to_dict() == c.to_dict()
    d = reg.regularized_moment(2, reg.RegulatorConfig(samples=300_000, seed=10))
    assert d.value != a.value


def test_precision_error():
    with pytest.raises(PrecisionError):
        reg.regularized_moment(0, reg.RegulatorConfig(samples=1_000, batches=16), target_rel_error=1e-9)


def test_config_guards():
    with pytest.raises(DomainError):
        reg.RegulatorConfig(lam=0)
    with pytest.raises(DomainError):
        reg.RegulatorConfig(samples=10)
    with pytest.raises(DomainError):
        reg.RegulatorConfig(frame=(1.0, 0.5, 0, 0))
    with pytest.raises(DomainError):
        reg.regularized_moment(-1)


def test_boosted_frame_keeps_volume():
    g = 1.25
    frame = (g, math.sqrt(g * g - 1), 0.0, 0.0)
    cfg = reg.RegulatorConfig(samples=1_000_000, seed=12, frame=frame)
    m = reg.regularized_moment(0, cfg)
    assert abs(m.value - reg.analytic_volume()) <= 4 * m.error


def test_predicates():
    assert reg.support_predicate([1.0, 0.5, 0, 0])
    assert reg.support_predicate([1.0, 1.0, 0, 0])
    assert not reg.support_predicate([0.5, 1.0, 0, 0])
    assert reg.cutoff_predicate([0.4, 0.1, 0.0, 0.0])
    assert reg.cutoff_predicate([-0.4, 0.1, 0.0, 0.0])
    assert not reg.cutoff_predicate([0.6, 0.1, 0.0, 0.0])
    assert not reg.cutoff_predicate([0.1, 0.3, 0.0, 0.0])


def test_spectrum():
    rep = reg.spectrum_check(100_000, seed=7)
    assert rep.passed and rep.max_scaled_error <= 1e-12
    with pytest.raises(DegenerateFrameError):
        reg.matrix_M([0.0, 1.0, 0.0, 0.0])
    K = np.array([2.0, 0.3, -0.4, 1.1])
    ev = np.linalg.eigvalsh(reg.matrix_M(K))
    assert np.allclose(ev, np.sort([1.0, 1.0, -reg.minkowski_square(K) / 4.0]), atol=1e-14)


def test_hamiltonian_positivity():
    rep = reg.hamiltonian_positivity_sample(config=reg.RegulatorConfig(samples=50_000, seed=2))
    assert rep.passed and rep.minimum >= -1e-12

    def spacelike(rng, n):
        K = rng.normal(size=(n, 4))
        K[:, 0] = 0.1
        K[:, 1] = 5.0
        return K

    with pytest.raises(SupportViolationError):
        reg.hamiltonian_positivity_sample(spacelike)


def test_hamiltonian_can_be_negative_off_support():
    # negative control: a space-like K makes M indefinite and the form can go negative
    K = np.array([[0.5, 2.0, 0.0, 0.0]])
    v = np.zeros((1, 6, 3), dtype=complex)
    v[0, 0, 0] = 1.0
    assert reg.hamiltonian_density(K, v)[0] < 0
