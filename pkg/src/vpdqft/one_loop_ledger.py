"""One-loop divergence, coupling renormalisation and beta function.

Every species contribution is computed by the same pipeline:

1. take the pole of ``Tr Ln`` for ``D = -D^2 + E`` from the heat kernel in
   terms of the abstract block traces ``tr F.F`` and ``tr E.E``;
2. resolve the block into its spin part (vector, spinor or scalar) and the
   inner-operator part, and do the spin trace with the tensor algebra;
3. project onto ``Tr_X F_{mn} F^{mn}``; the remainder (e.g. the potential
   term of a scalar) carries no F.F pole;
4. do the inner-index trace (4 for fields carrying an inner vector index,
   1 for inner scalars) and reduce ``Tr_X F.F`` to ``Omega1 Lambda^-2 int F.F``;
5. weight with the determinant power: ``Gamma = -i p Tr Ln`` for ``Det^p``.

Results are quoted in units of ``(Omega4/eps) Omega1 Lambda^-2 int F.F`` and
as signed twelfths of the bracket ``Gamma = -(Omega4/eps)(1/12)[...]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable

from .errors import DomainError, UnsupportedGaugeError
from .heat_kernel import POLE, FluctuationOperatorSpec, specialize_covariant
from .tensor_core import TensorExpr, const, field, gamma_trace, metric, trace_word

# determinant power for each kind of Gaussian integral
DET_POWER = {
    "boson": Fraction(-1, 2),
    "ghost": Fraction(1),
    "fermion-squared": Fraction(1, 2),
    "complex-scalar": Fraction(-1),
}

# 2 * Omega4 * Omega1 = 1/(180 (4 pi)^5); stored as the rational in front of pi^-5
OMEGA4_PI = Fraction(1, 8)          # Omega4 = 1/(8 pi^2)
OMEGA1_PI = Fraction(1, 720 * 64)   # Omega1 = 1/(720 (4 pi)^3)
COUPLING_UNIT = 2 * OMEGA4_PI * OMEGA1_PI  # = 1/(180 * 4^5)

EBuilder = Callable[[str, str, str, str], TensorExpr]


@dataclass(frozen=True)
class SpeciesOperator:
    """A fluctuation operator ``-D^2 + E`` with its block resolved.

    ``spin`` is "vector", "spinor" or "scalar"; ``inner`` is "vector" when the
    field carries an inner vector index, else "scalar".  ``e_block`` builds E
    with spin row/column labels and inner-operator row/column labels, or is
    None when E vanishes.  ``weight`` multiplies the whole contribution (a
    chiral projection halves the spinor trace).
    """

    name: str
    spec: FluctuationOperatorSpec
    spin: str
    inner: str
    statistics: str
    e_block: EBuilder | None = None
    weight: Fraction = Fraction(1)

    @property
    def det_power(self) -> Fraction:
        return DET_POWER[self.statistics]


def _fop(mu: str, nu: str, a: str, b: str) -> TensorExpr:
    return field("Fop", mu, nu, f"g^{a}", f"g_{b}")


def _vector_e(scale) -> EBuilder:
    def build(r, c, a, b):
        return _fop(f"s^{r}", f"s_{c}", a, b) * Fraction(scale)
    return build


def _spinor_e(r, c, a, b):
    # E = -(1/2) F^{mn} gamma_m gamma_n
    m, n, z = f"m{r}{c}", f"n{r}{c}", f"z{r}{c}"
    g1 = field("gamma", f"s_{m}", f"p^{r}", f"p_{z}")
    g2 = field("gamma", f"s_{n}", f"p^{z}", f"p_{c}")
    return _fop(f"s^{m}", f"s^{n}", a, b) * g1 * g2 * Fraction(-1, 2)


def _potential_e(r, c, a, b):
    # second derivative of the potential: an inner-scalar multiplication operator
    return field("E", f"g^{a}", f"g_{b}")


def _spec(block: tuple[str, ...], xi) -> FluctuationOperatorSpec:
    return FluctuationOperatorSpec("covariantAE", {}, block, Fraction(xi))


def gauge_fluctuation_operators(xi=1) -> tuple[SpeciesOperator, SpeciesOperator]:
    """Gauge ``-eta D^2 - 2 F`` and ghost ``-D^2`` operators of the theory itself.

    The connection is ``(A_mu)^a_b = A_mu^c nabla_c delta^a_b - nabla_b A_mu^a``;
    both fields carry an inner vector index.
    """
    if Fraction(xi) != 1:
        raise UnsupportedGaugeError("only xi = 1 is supported")
    gauge = SpeciesOperator("gauge", _spec(("spacetime-vector", "inner-vector"), xi), "vector", "vector",
                            "boson", _vector_e(-2))
    ghost = SpeciesOperator("ghost", _spec(("inner-vector",), xi), "scalar", "vector", "ghost", None)
    return gauge, ghost


def matter_gauge_operators() -> tuple[SpeciesOperator, SpeciesOperator]:
    """A minimally coupled Yang-Mills field (``E = +F``) and its ghost, both inner scalars."""
    vec = SpeciesOperator("yang-mills", _spec(("spacetime-vector",), 1), "vector", "scalar", "boson", _vector_e(1))
    gh = SpeciesOperator("yang-mills-ghost", _spec(("scalar",), 1), "scalar", "scalar", "ghost", None)
    return vec, gh


def dirac_operator(chiral: bool = False) -> SpeciesOperator:
    """Squared Dirac operator ``-D^2 - (1/2) F^{mn} gamma_m gamma_n`` under ``Det^{1/2}``.

    A chiral projector ``(1 +- gamma5)/2`` halves the parity-even part of the
    spinor trace; the parity-odd part has no F.F component.
    """
    return SpeciesOperator("chiral-dirac" if chiral else "dirac", _spec(("spinor",), 1), "spinor", "scalar",
                           "fermion-squared", _spinor_e, Fraction(1, 2) if chiral else Fraction(1))


def scalar_operator(with_potential: bool = True) -> SpeciesOperator:
    """A single complex scalar, ``-D^2 + d^2 V``, under ``Det^{-1}``."""
    return SpeciesOperator("complex-scalar", _spec(("scalar",), 1), "scalar", "scalar", "complex-scalar",
                           _potential_e if with_potential else None)


# ----------------------------------------------------------------- pipeline


def _pole() -> TensorExpr:
    return TensorExpr.scalar(1, POLE)


def _ff_word() -> TensorExpr:
    return trace_word([("Fop", ["s_m", "s_n"]), ("Fop", ["s^m", "s^n"])])


def _ee_word() -> TensorExpr:
    return trace_word([("E",), ("E",)])


@lru_cache(maxsize=None)
def block_coefficients() -> tuple[Fraction, Fraction]:
    """Weights of ``tr F.F`` and ``tr E.E`` in the pole of ``Tr Ln`` (units of i Omega4/eps)."""
    res = specialize_covariant()
    c_ff = res.expr.coefficient(_pole() * _ff_word())
    c_ee = res.expr.coefficient(_pole() * _ee_word())
    return c_ff, c_ee


def spin_identity_trace(spin: str) -> TensorExpr:
    if spin == "vector":
        return metric("s^r", "s_r")
    if spin == "spinor":
        return field("Ip", "p^x", "p_x")
    if spin == "scalar":
        return TensorExpr.scalar(1)
    raise DomainError(f"unknown spin block {spin!r}")


def spin_trace_ee(op: SpeciesOperator) -> TensorExpr:
    """``tr(E E)`` over spin and inner-operator indices."""
    if op.e_block is None:
        return TensorExpr()
    rows = {"vector": ("r0", "r1"), "spinor": ("x0", "x1"), "scalar": ("", "")}[op.spin]
    e1 = op.e_block(rows[0], rows[1], "a0", "a1")
    e2 = op.e_block(rows[1], rows[0], "a1", "a0")
    prod = e1 * e2
    if op.spin == "spinor":
        prod = gamma_trace(prod)
    return prod


@dataclass
class TraceLogPole:
    """Pole of ``Tr Ln`` for one species after the spin trace.

    ``ff`` is the coefficient of ``i (Omega4/eps) Tr_X F.F`` (inner operators);
    ``remainder`` is everything without an F.F component.
    """

    ff: Fraction
    remainder: TensorExpr
    spin_resolved: TensorExpr


def trace_log_pole(op: SpeciesOperator) -> TraceLogPole:
    c_ff, c_ee = block_coefficients()
    expr = _pole() * (spin_identity_trace(op.spin) * _ff_word() * c_ff + spin_trace_ee(op) * c_ee)
    expr = expr * op.weight
    basis = _pole() * _ff_word()
    x = expr.coefficient(basis)
    return TraceLogPole(x, expr - basis * x, expr)


def inner_index_trace(inner: str) -> TensorExpr:
    """Trace over the inner index carried by the field.

    The leading part of the inner field-strength operator is
    ``F^c nabla_c delta^a_b``; its ``delta`` traces to the inner dimension.
    The ``nabla_b F^a`` pieces drop out of the F.F pole: the cross term is the
    inner divergence of F, which vanishes, and the product of two such pieces
    has no inner derivatives and so a different Lambda power.
    """
    if inner == "vector":
        return metric("i^q", "i_r") * metric("i^r", "i_q")
    if inner == "scalar":
        return TensorExpr.scalar(1)
    raise DomainError(f"unknown inner block {inner!r}")


def reduced_ff() -> TensorExpr:
    """``Omega1 Lambda^-2 int F_{mn}^a F^{mn}_a``, the reduced inner trace of F.F."""
    return const("Omega1") * const("Lambda", -2) * field("F", "s_m", "s_n", "i^a") * field("F", "s^m", "s^n", "i_a")


def effective_action_unit() -> TensorExpr:
    """``(Omega4/eps) Omega1 Lambda^-2 int F.F``."""
    return const("Omega4") * const("eps", -1) * reduced_ff()


def species_divergence(op: SpeciesOperator) -> TensorExpr:
    """Contribution ``-i p Tr Ln`` of one species to the divergent effective action."""
    pole = trace_log_pole(op)
    inner = inner_index_trace(op.inner)
    trln = TensorExpr.scalar(pole.ff, POLE) * inner * reduced_ff()
    return TensorExpr.scalar(-op.det_power, (("I", 1),)) * trln


def species_coefficient(op: SpeciesOperator) -> Fraction:
    """Rational coefficient of ``(Omega4/eps) Omega1 Lambda^-2 int F.F``."""
    return species_divergence(op).coefficient(effective_action_unit())


def divergent_gauge_determinant() -> TensorExpr:
    """Pole of ``Tr Ln(D_A/D_0)`` after the spin and inner traces."""
    gauge, _ = gauge_fluctuation_operators()
    p = trace_log_pole(gauge)
    return TensorExpr.scalar(p.ff, POLE) * inner_index_trace(gauge.inner) * reduced_ff()


def divergent_ghost_determinant() -> TensorExpr:
    """Pole of ``Tr Ln(D_omega/D_0)`` after the inner trace."""
    _, ghost = gauge_fluctuation_operators()
    p = trace_log_pole(ghost)
    return TensorExpr.scalar(p.ff, POLE) * inner_index_trace(ghost.inner) * reduced_ff()


def assemble_one_loop_divergence() -> TensorExpr:
    """``(i/2) Tr Ln D_A - i Tr Ln D_omega`` for the pure theory."""
    gauge, ghost = gauge_fluctuation_operators()
    return species_divergence(gauge) + species_divergence(ghost)


# ----------------------------------------------------------------- ledger


@dataclass(frozen=True)
class MatterContent:
    gauge_fields: int = 0
    chiral_dirac: int = 0
    complex_scalars: int = 0
    include_pure_gauge: bool = True

    def __post_init__(self):
        for name in ("gauge_fields", "chiral_dirac", "complex_scalars"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise DomainError(f"{name} must be a non-negative integer")

    def __add__(self, other: "MatterContent") -> "MatterContent":
        return MatterContent(self.gauge_fields + other.gauge_fields, self.chiral_dirac + other.chiral_dirac,
                             self.complex_scalars + other.complex_scalars,
                             self.include_pure_gauge or other.include_pure_gauge)

    @classmethod
    def standard_model(cls) -> "MatterContent":
        # 8 + 3 + 1 gauge fields, 3 families of 15 chiral fields, one Higgs doublet
        return cls(12, 45, 2, True)

    @classmethod
    def pure(cls) -> "MatterContent":
        return cls(0, 0, 0, True)

    @classmethod
    def from_mapping(cls, data: dict) -> "MatterContent":
        """Build from a document; also accepts ``dirac`` (two chiral each) and ``scalar_doublets``."""
        known = {"gauge_fields", "chiral_dirac", "dirac", "complex_scalars", "scalar_doublets",
                 "include_pure_gauge"}
        extra = set(data) - known
        if extra:
            raise DomainError(f"unknown matter keys: {sorted(extra)}")
        return cls(
            int(data.get("gauge_fields", 0)),
            int(data.get("chiral_dirac", 0)) + 2 * int(data.get("dirac", 0)),
            int(data.get("complex_scalars", 0)) + 2 * int(data.get("scalar_doublets", 0)),
            bool(data.get("include_pure_gauge", True)),
        )


@dataclass(frozen=True)
class LedgerEntry:
    species: str
    count: int
    twelfths: Fraction          # total signed contribution to the bracket
    per_unit: Fraction          # contribution of one unit, in twelfths
    note: str = "bracket of Gamma = -(Omega4/eps)(1/12)[bracket] Omega1 Lambda^-2 int F.F"

    def to_dict(self) -> dict:
        return {"species": self.species, "count": self.count, "twelfths": str(self.twelfths),
                "per_unit": str(self.per_unit)}


def _twelfths(coefficient: Fraction) -> Fraction:
    return -12 * coefficient


def pure_gauge_contribution() -> LedgerEntry:
    c = sum((species_coefficient(op) for op in gauge_fluctuation_operators()), Fraction(0))
    return LedgerEntry("pure gauge + ghost", 1, _twelfths(c), _twelfths(c))


def matter_gauge_contribution() -> LedgerEntry:
    """Per independent Yang-Mills field with its ghost (the dim of the algebra is counted separately)."""
    c = sum((species_coefficient(op) for op in matter_gauge_operators()), Fraction(0))
    return LedgerEntry("yang-mills field", 1, _twelfths(c), _twelfths(c))


def matter_dirac_contribution(chiral: bool = True) -> LedgerEntry:
    c = species_coefficient(dirac_operator(chiral))
    return LedgerEntry("chiral dirac" if chiral else "dirac", 1, _twelfths(c), _twelfths(c))


def matter_scalar_contribution(doublet: bool = False) -> LedgerEntry:
    c = species_coefficient(scalar_operator()) * (2 if doublet else 1)
    return LedgerEntry("complex scalar doublet" if doublet else "complex scalar", 1, _twelfths(c), _twelfths(c))


def ledger(content: MatterContent) -> tuple[list[LedgerEntry], Fraction]:
    """Signed per-species entries in twelfths and the bracket total."""
    entries = []
    if content.include_pure_gauge:
        entries.append(pure_gauge_contribution())
    for species, count, unit in (
        ("yang-mills field", content.gauge_fields, matter_gauge_contribution),
        ("chiral dirac", content.chiral_dirac, lambda: matter_dirac_contribution(True)),
        ("complex scalar", content.complex_scalars, lambda: matter_scalar_contribution(False)),
    ):
        if count:
            per = unit().per_unit
            entries.append(LedgerEntry(species, count, per * count, per))
    total = sum((e.twelfths for e in entries), Fraction(0))
    return entries, total


def sm_ledger() -> tuple[list[LedgerEntry], Fraction]:
    return ledger(MatterContent.standard_model())


def divergence_coefficient(content: MatterContent) -> Fraction:
    """C in ``Gamma = -(Omega4/eps) C Omega1 Lambda^-2 int F.F``; C = bracket/12."""
    return ledger(content)[1] / 12


# ----------------------------------------------------------------- couplings


@dataclass(frozen=True)
class RenormalizedCoupling:
    """``g_R = g (1 - (g^2/(180 (4 pi)^5)) C / eps + O(g^4))``."""

    C: Fraction

    def value(self, g: float, eps: float) -> float:
        if eps == 0:
            raise DomainError("eps must be non-zero")
        unit = float(COUPLING_UNIT) / 3.141592653589793 ** 5
        return g * (1 - g * g * unit * float(self.C) / eps)

    def __str__(self) -> str:
        return f"g_R = g (1 - g^2/(180 (4 pi)^5) * ({self.C}) / eps + O(g^4))"


def renormalized_coupling(content: MatterContent | None = None) -> RenormalizedCoupling:
    """Counterterm absorbed into ``-1/(4 g^2 Lambda^2) int F.F``.

    ``1/g_R^2 = 1/g^2 + 4 Omega4 Omega1 C / eps`` so to this order
    ``g_R = g (1 - 2 Omega4 Omega1 C g^2 / eps)`` and ``2 Omega4 Omega1 = 1/(180 (4 pi)^5)``.
    """
    content = content or MatterContent.pure()
    return RenormalizedCoupling(divergence_coefficient(content))


@dataclass(frozen=True)
class BetaResult:
    """``beta(g) = coefficient * g^3 / (180 (4 pi)^5)``."""

    coefficient: Fraction

    @property
    def sign(self) -> int:
        return (self.coefficient > 0) - (self.coefficient < 0)

    @property
    def verdict(self) -> str:
        return "asymptotically free" if self.coefficient < 0 else "not asymptotically free"

    def value(self, g: float) -> float:
        return float(self.coefficient) * g ** 3 * float(COUPLING_UNIT) / 3.141592653589793 ** 5

    def to_dict(self) -> dict:
        return {"coefficient": str(self.coefficient), "unit": "g^3/(180 (4 pi)^5)", "sign": self.sign,
                "verdict": self.verdict}


def beta_function(content: MatterContent | None = None) -> BetaResult:
    return BetaResult(-renormalized_coupling(content).C)
