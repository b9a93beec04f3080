"""Named verification checks shared by ``verify-all`` and the acceptance tests.

Each check returns a ``CheckResult`` whose ``details`` are JSON-ready and
deterministic for a fixed seed (no timings, no addresses).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from fractions import Fraction

import numpy as np

from . import brst, feynman_rules as fr, heat_kernel as hk, inner_regulator as reg, one_loop_ledger as led
from .errors import MomentumConservationError
from .tensor_core import TensorExpr


@dataclass
class CheckResult:
    identifier: str
    passed: bool
    details: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id": self.identifier, "passed": self.passed, "details": self.details}


def _q(x) -> str:
    return str(Fraction(x))


def master_coefficients() -> CheckResult:
    res = hk.divergent_trace_general()
    got = {k: res.coefficients[k] for k in hk.BASIS_NAMES}
    ok = got == dict(hk.REFERENCE_WEIGHTS) and res.residual.is_zero()
    return CheckResult("heat_kernel.master_coefficients", ok,
                       {"coefficients": {k: _q(v) for k, v in got.items()}, "residual_zero": res.residual.is_zero()})


def covariant_specialization() -> CheckResult:
    ok, residual = hk.covariant_check()
    c_ff, c_ee = led.block_coefficients()
    return CheckResult("heat_kernel.covariant_specialization", ok and (c_ff, c_ee) == (Fraction(-1, 12), Fraction(-1, 2)),
                       {"residual_terms": len(residual.terms), "tr_FF": _q(c_ff), "tr_EE": _q(c_ee),
                        "prefactor": "i Omega4/eps"})


def _unit_coefficient(expr: TensorExpr, imaginary: bool) -> Fraction:
    unit = led.effective_action_unit()
    if imaginary:
        unit = unit * TensorExpr.scalar(1, (("I", 1),))
    return expr.coefficient(unit)


def pure_theory() -> CheckResult:
    gauge = _unit_coefficient(led.divergent_gauge_determinant(), True)
    ghost = _unit_coefficient(led.divergent_ghost_determinant(), True)
    total = _unit_coefficient(led.assemble_one_loop_divergence(), False)
    rc = led.renormalized_coupling(led.MatterContent.pure())
    beta = led.beta_function(led.MatterContent.pure())
    ok = (gauge == Fraction(5, 3) * 4 and ghost == -Fraction(1, 12) * 4 and total == -Fraction(11, 3)
          and rc.C == Fraction(11, 3) and beta.coefficient == -Fraction(11, 3)
          and led.COUPLING_UNIT == Fraction(1, 180 * 4 ** 5))
    return CheckResult("ledger.pure_theory", ok, {
        "gauge_determinant": _q(gauge), "ghost_determinant": _q(ghost), "one_loop_total": _q(total),
        "coupling_C": _q(rc.C), "beta": beta.to_dict(), "lambda_power": -2,
    })


def matter_determinants() -> CheckResult:
    vals = {
        "yang_mills": sum((led.species_coefficient(op) for op in led.matter_gauge_operators()), Fraction(0)),
        "dirac": led.species_coefficient(led.dirac_operator(False)),
        "chiral_dirac": led.species_coefficient(led.dirac_operator(True)),
        "scalar_doublet": 2 * led.species_coefficient(led.scalar_operator()),
        "complex_scalar": led.species_coefficient(led.scalar_operator()),
    }
    want = {"yang_mills": Fraction(-1, 6), "dirac": Fraction(1, 3), "chiral_dirac": Fraction(1, 6),
            "scalar_doublet": Fraction(1, 6), "complex_scalar": Fraction(1, 12)}
    return CheckResult("ledger.matter_determinants", vals == want, {k: _q(v) for k, v in vals.items()})


def standard_model() -> CheckResult:
    entries, total = led.sm_ledger()
    rc = led.renormalized_coupling(led.MatterContent.standard_model())
    beta = led.beta_function(led.MatterContent.standard_model())
    parts = [e.twelfths for e in entries]
    ok = parts == [44, 24, -90, -2] and total == -24 and rc.C == -2 and beta.coefficient == 2
    return CheckResult("ledger.standard_model", ok, {
        "entries": [e.to_dict() for e in entries], "bracket": _q(total), "coupling_C": _q(rc.C),
        "beta": beta.to_dict()})


def power_counting() -> CheckResult:
    deltas = {k: fr.vertex_divergence_index(k) for k in sorted(fr.VERTEX_KINDS)}
    omegas = {str(b): fr.superficial_degree(b) for b in range(9)}
    ok = all(v == 0 for v in deltas.values()) and all(omegas[str(b)] == 4 - b for b in range(9))
    return CheckResult("feynman.power_counting", ok, {"vertex_indices": deltas, "superficial_degree": omegas})


def _rotate(seq, r):
    return tuple(seq[r:]) + tuple(seq[:r])


def rule_properties() -> CheckResult:
    det = {}
    K = fr._mom("K", "1", "i^alpha")
    det["gauge_propagator_transverse"] = (fr.gauge_propagator("1") * K).is_zero()
    det["ghost_propagator_transverse"] = (fr.ghost_propagator("1", "i^gamma", "i_delta")
                                          * fr._mom("K", "1", "i^delta")).is_zero()
    legs3 = (("mu", "alpha"), ("nu", "beta"), ("rho", "gamma"))
    v3 = fr.three_gauge_vertex(legs3, ("1", "2", "3"))
    det["three_vertex_cyclic"] = all(
        fr.three_gauge_vertex(_rotate(legs3, r), _rotate(("1", "2", "3"), r)) == v3 for r in range(3))
    legs4 = (("mu", "alpha"), ("nu", "beta"), ("rho", "gamma"), ("sigma", "delta"))
    v4 = fr.four_gauge_vertex(legs4, ("1", "2", "3", "4"))
    det["four_vertex_cyclic"] = all(
        fr.four_gauge_vertex(_rotate(legs4, r), _rotate(("1", "2", "3", "4"), r)) == v4 for r in range(4))
    rng = np.random.Generator(np.random.Philox(5))
    zero_ok = True
    for kind in ("triGauge", "quadGauge", "ghostGauge"):
        n = fr.VERTEX_KINDS[kind].legs
        k = rng.normal(size=(n, 4))
        k[-1] = -k[:-1].sum(axis=0)
        _, val = fr.vertex_numeric(kind, k, np.zeros((n, 4)))
        zero_ok = zero_ok and float(np.max(np.abs(val))) == 0.0
    det["vanish_at_zero_inner_momenta"] = zero_ok
    guard = True
    for kind in ("triGauge", "quadGauge", "ghostGauge"):
        n = fr.VERTEX_KINDS[kind].legs
        k = rng.normal(size=(n, 4))
        K = rng.normal(size=(n, 4))
        K[-1] = -K[:-1].sum(axis=0)
        try:
            fr.vertex_numeric(kind, k, K)
            guard = False
        except MomentumConservationError:
            pass
    det["conservation_guard"] = guard
    return CheckResult("feynman.rule_properties", all(det.values()), det)


def brst_properties(corpus_size: int = 500, seed: int = 2024) -> CheckResult:
    gens = {n: brst.nilpotency_check(g).passed for n, g in brst.generators().items()}
    corpus = brst.monomial_corpus(corpus_size, seed)
    failures = sum(1 for m in corpus if not brst.nilpotency_check(m).passed)
    dec = brst.s_of_gauge_fermion()
    inv = brst.brst_invariance_of_action()
    frozen = brst.brst_invariance_of_action(metric="frozen")
    ok = all(gens.values()) and failures == 0 and dec.passed and inv.passed
    return CheckResult("brst.nilpotency_and_invariance", ok, {
        "generators": gens, "corpus_size": corpus_size, "corpus_failures": failures,
        "gauge_fermion_decomposition": dec.passed,
        "action_invariance_transforming_metric": inv.passed,
        "action_invariance_frozen_metric": frozen.passed,
        "frozen_metric_residual_terms": len(frozen.classical_residual.terms),
    })


def regulator_numerics(samples: int = 10_000_000, seed: int = 12345, workers: int = 1) -> CheckResult:
    spec = reg.spectrum_check(100_000, seed=seed)
    pos = reg.hamiltonian_positivity_sample(config=reg.RegulatorConfig(samples=100_000, seed=seed))
    cfg = reg.RegulatorConfig(samples=samples, seed=seed, workers=workers)
    odd = {}
    odd_ok = True
    for r in (1, 3):
        m = reg.regularized_moment(r, cfg)
        vals = {"component_0": (m.value, m.error)}
        vals.update({k: v for k, v in m.components.items()})
        for key, (v, e) in vals.items():
            dev = abs(v) / e if e > 0 else (0.0 if v == 0 else float("inf"))
            odd_ok = odd_ok and dev <= 3.0
            odd[f"rank{r}.{key}"] = {"value": v, "error": e, "sigma": dev}
    scaling = {}
    scal_ok = True
    for r in (0, 2):
        for rho in (0.5, 2.0, 10.0):
            rep = reg.scaling_covariance_check(r, rho, cfg)
            scal_ok = scal_ok and rep.passed
            scaling[f"r{r}_rho{rho:g}"] = rep.to_dict()
    ok = spec.passed and pos.passed and odd_ok and scal_ok
    return CheckResult("regulator.numerics", ok, {
        "spectrum_max_scaled_error": spec.max_scaled_error, "spectrum_samples": spec.samples,
        "hamiltonian_minimum": pos.minimum, "odd_moments": odd, "scaling": scaling, "samples": samples,
        "seed": seed, "workers": workers,
    })


ALL_CHECKS = (
    "heat_kernel.master_coefficients",
    "heat_kernel.covariant_specialization",
    "ledger.pure_theory",
    "ledger.matter_determinants",
    "ledger.standard_model",
    "feynman.power_counting",
    "feynman.rule_properties",
    "brst.nilpotency_and_invariance",
    "regulator.numerics",
)


def run_all(samples: int = 10_000_000, seed: int = 12345, workers: int = 1, corpus_size: int = 500) -> list[CheckResult]:
    return [
        master_coefficients(),
        covariant_specialization(),
        pure_theory(),
        matter_determinants(),
        standard_model(),
        power_counting(),
        rule_properties(),
        brst_properties(corpus_size, seed),
        regulator_numerics(samples, seed, workers),
    ]
