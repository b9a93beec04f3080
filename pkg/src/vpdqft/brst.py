"""BRST transformations, nilpotency and the gauge-fermion form of the gauge-fixed action.

Field content: the gauge field ``A_mu^a``, ghost ``omega^a``, antighost
``omegabar_a``, auxiliary ``h_a`` and a matter placeholder ``psi``.  The BRST
parameter ``theta`` is a constant odd symbol with ghost number -1; the
variation ``delta_theta X = theta s X`` commutes with spacetime and inner
derivatives.

Two independent routes are implemented:

* ``brst_variation`` inserts ``theta`` at the varied factor and lets the
  tensor canonicaliser sort out the Grassmann signs; ``slope_operator`` strips
  the leading ``theta`` from that result;
* ``s_graded`` applies ``s`` as an odd derivation with explicit signs.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from .errors import GaugeFunctionalError, InternalSignError, UnknownFieldError
from .tensor_core import (
    INNER,
    SPACETIME,
    Factor,
    FieldSymbol,
    IndexSlot,
    TensorExpr,
    TotalDerivativeReducer,
    _product_raw,
    _renamed_dummies,
    const,
    declare,
    evaluate,
    field,
    substitute,
)

SPECIES = ("A", "omega", "omegabar", "h", "psi")
METRIC_RULES = ("transforming", "frozen")

# a second BRST parameter for the two-parameter form of nilpotency
declare(FieldSymbol("thetap", "brstTheta", (), odd=True, ghost=-1, constant=True, priority=1))
# an odd matter placeholder, for fermionic matter
declare(FieldSymbol("chi", "matterChi", (), odd=True, priority=25))


def _factor(name: str, tokens) -> Factor:
    from .tensor_core import ix
    return Factor(name, tuple(ix(t) for t in tokens))


def _transport(scalar: str, param: str = "omega") -> TensorExpr:
    """``-param^b nabla_b X`` for an inner scalar X."""
    return -(field(param, "i^b") * field(scalar, d=["i_b"]))


def brst_rules(metric: str = "transforming", abelian: bool = False) -> dict[str, tuple[Factor, TensorExpr]]:
    """Images ``s X`` of the generators.

    ``metric`` decides whether the inner metric ``ginner`` is varied like a
    tensor (``s g_ab = -(g_cb nabla_a omega^c + g_ac nabla_b omega^c)``) or
    kept fixed.  ``abelian`` drops every inner-derivative term.
    """
    if metric not in METRIC_RULES:
        raise ValueError(f"metric must be one of {METRIC_RULES}")
    sA = field("omega", "i^a", d=["s_m"])
    if not abelian:
        sA = sA + field("A", "s_m", "i^b") * field("omega", "i^a", d=["i_b"]) \
            - field("omega", "i^b") * field("A", "s_m", "i^a", d=["i_b"])
    rules = {
        "A": (_factor("A", ("s_m", "i^a")), sA),
        "omegabar": (_factor("omegabar", ("i_c",)), -field("h", "i_c")),
        "omega": (_factor("omega", ("i^d",)),
                  TensorExpr() if abelian else -(field("omega", "i^b") * field("omega", "i^d", d=["i_b"]))),
        "h": (_factor("h", ("i_c",)), TensorExpr()),
        "psi": (_factor("psi", ()), TensorExpr() if abelian else _transport("psi")),
        "chi": (_factor("chi", ()), TensorExpr() if abelian else _transport("chi")),
    }
    if metric == "transforming" and not abelian:
        rules["ginner"] = (_factor("ginner", ("i_a", "i_b")),
                           -(field("ginner", "i_c", "i_b") * field("omega", "i^c", d=["i_a"])
                             + field("ginner", "i_a", "i_c") * field("omega", "i^c", d=["i_b"])))
    return rules


def gauge_rules(param: str = "epar") -> dict[str, tuple[Factor, TensorExpr]]:
    """Infinitesimal gauge transformation with an even parameter field."""
    dA = field(param, "i^a", d=["s_m"]) + field("A", "s_m", "i^b") * field(param, "i^a", d=["i_b"]) \
        - field(param, "i^b") * field("A", "s_m", "i^a", d=["i_b"])
    return {
        "A": (_factor("A", ("s_m", "i^a")), dA),
        "psi": (_factor("psi", ()), _transport("psi", param)),
    }


INERT = {"theta", "thetap", "eta", "ginner", "Ip", "gamma", "k", "K", "invsq", "epar"}


def _check_known(fs: Iterable[Factor], rules: Mapping) -> None:
    for f in fs:
        if f.name not in rules and f.name not in INERT:
            raise UnknownFieldError(f"no BRST rule for {f.name!r}")


def _image(f: Factor, rules) -> list:
    pat, img = rules[f.name]
    single = TensorExpr.from_raw([(Fraction(1), (), (f,))])
    return substitute(single, pat, img).raw()


def _vary(expr: TensorExpr, rules, param: str | None, graded: bool) -> TensorExpr:
    out = []
    pre = None if param is None else [(Fraction(1), (), (Factor(param),))]
    # isolated factors must not carry canonical dummy labels that clash with the images
    for c, syms, fs in _renamed_dummies(expr.raw()):
        _check_known(fs, rules)
        odd_before = 0
        for k, f in enumerate(fs):
            if f.name in rules:
                img = _image(f, rules)
                if img:
                    sign = -1 if (graded and odd_before % 2) else 1
                    pieces = [[(Fraction(1), (), (g,))] for g in fs[:k]]
                    pieces.append(img if pre is None else _product_raw([pre, img]))
                    pieces += [[(Fraction(1), (), (g,))] for g in fs[k + 1:]]
                    for pc, ps, pf in _product_raw(pieces):
                        out.append((c * pc * sign, tuple(syms) + tuple(ps), pf))
            if f.symbol.odd:
                odd_before += 1
    return TensorExpr.from_raw(out)


def brst_variation(expr: TensorExpr, metric: str = "transforming", param: str = "theta",
                   abelian: bool = False) -> TensorExpr:
    """``delta_theta`` by the Leibniz rule with ``theta`` placed at each varied factor."""
    return _vary(expr, brst_rules(metric, abelian), param, graded=False)


def strip_parameter(expr: TensorExpr, param: str = "theta") -> TensorExpr:
    """Remove a leading ``theta`` factor from every term."""
    acc = {}
    for (syms, fs), c in expr.terms.items():
        if not fs or fs[0].name != param:
            raise InternalSignError(f"{param} is not the leftmost factor in a term")
        if any(f.name == param for f in fs[1:]):
            raise InternalSignError(f"{param} appears twice")
        acc[(syms, fs[1:])] = c
    return TensorExpr.from_raw([(c, syms, fs) for (syms, fs), c in acc.items()])


def slope_operator(expr: TensorExpr, metric: str = "transforming", abelian: bool = False) -> TensorExpr:
    """``s X`` defined by ``delta_theta X = theta s X``."""
    return strip_parameter(brst_variation(expr, metric, "theta", abelian), "theta")


def s_graded(expr: TensorExpr, metric: str = "transforming", abelian: bool = False) -> TensorExpr:
    """``s`` applied directly as an odd derivation acting from the left."""
    return _vary(expr, brst_rules(metric, abelian), None, graded=True)


def gauge_variation(expr: TensorExpr, param: str = "epar") -> TensorExpr:
    """First-order change of ``expr`` under a gauge transformation with parameter ``param``."""
    rules = gauge_rules(param)
    out = []
    for c, syms, fs in _renamed_dummies(expr.raw()):
        for k, f in enumerate(fs):
            if f.name in rules:
                img = _image(f, rules)
                pieces = [[(Fraction(1), (), (g,))] for g in fs[:k]] + [img] + \
                    [[(Fraction(1), (), (g,))] for g in fs[k + 1:]]
                for pc, ps, pf in _product_raw(pieces):
                    out.append((c * pc, tuple(syms) + tuple(ps), pf))
    return TensorExpr.from_raw(out)


# ----------------------------------------------------------------- grading


def ghost_numbers(expr: TensorExpr) -> set[int]:
    return {sum(f.symbol.ghost for f in fs) for (_s, fs) in expr.terms}


def parities(expr: TensorExpr) -> set[int]:
    return {sum(1 for f in fs if f.symbol.odd) % 2 for (_s, fs) in expr.terms}


# ----------------------------------------------------------------- nilpotency


@dataclass
class NilpotencyResult:
    passed: bool
    residual: TensorExpr
    two_parameter_residual: TensorExpr


def nilpotency_check(expr: TensorExpr, metric: str = "transforming") -> NilpotencyResult:
    """``s(s X)`` and, independently, ``delta_theta' delta_theta X``; both must vanish."""
    ss = slope_operator(slope_operator(expr, metric), metric)
    two = brst_variation(brst_variation(expr, metric, "theta"), metric, "thetap")
    return NilpotencyResult(ss.is_zero() and two.is_zero(), ss, two)


def generators() -> dict[str, TensorExpr]:
    return {
        "A": field("A", "s_m", "i^a"),
        "omega": field("omega", "i^a"),
        "omegabar": field("omegabar", "i_a"),
        "h": field("h", "i_a"),
        "psi": field("psi"),
    }


_JET_S = ("s_u", "s_v")
_JET_I = ("i_x", "i_y")


def random_monomial(rng: np.random.Generator, degree: int = 3, max_derivs: int = 2) -> TensorExpr:
    """A product of ``degree`` generator factors with random derivative jets.

    Indices are unique per factor, so the monomial has only free indices.
    """
    factors = []
    for k in range(degree):
        name = SPECIES[int(rng.integers(len(SPECIES)))]
        nd = int(rng.integers(max_derivs + 1))
        ders = []
        for j in range(nd):
            pool = _JET_S if rng.random() < 0.5 else _JET_I
            ders.append(f"{pool[j % 2][:2]}{pool[j % 2][2:]}{k}")
        idx = {"A": (f"s_m{k}", f"i^a{k}"), "omega": (f"i^a{k}",), "omegabar": (f"i_a{k}",),
               "h": (f"i_a{k}",), "psi": ()}[name]
        factors.append(field(name, *idx, d=ders))
    out = TensorExpr.scalar(1)
    for f in factors:
        out = out * f
    return out


def monomial_corpus(n: int = 500, seed: int = 2024, degree: int = 3) -> list[TensorExpr]:
    rng = np.random.Generator(np.random.Philox(seed))
    corpus = []
    while len(corpus) < n:
        m = random_monomial(rng, degree)
        if not m.is_zero():
            corpus.append(m)
    return corpus


# ----------------------------------------------------------------- gauge fermion


def _free_inner(f: TensorExpr) -> IndexSlot:
    free = f.free_indices()
    if len(free) != 1 or free[0].space != INNER:
        raise GaugeFunctionalError("the gauge-fixing functional needs exactly one free inner index")
    return free[0]


def _check_gauge_functional(f: TensorExpr) -> IndexSlot:
    if f.is_zero():
        raise GaugeFunctionalError("the gauge-fixing functional is zero")
    slot = _free_inner(f)
    for (_s, fs) in f.terms:
        for fac in fs:
            if fac.name not in ("A", "psi", "eta", "ginner"):
                raise GaugeFunctionalError(f"gauge-fixing functional may depend on A and matter only, got {fac.name}")
    if ghost_numbers(f) != {0} or parities(f) != {0}:
        raise GaugeFunctionalError("gauge-fixing functional must be even with ghost number 0")
    return slot


def lorentz_gauge_functional() -> TensorExpr:
    """``f^c = d^m A_m^c``."""
    return field("A", "s_m", "i^c", d=["s^m"])


def _pair(name: str, slot: IndexSlot, f: TensorExpr) -> TensorExpr:
    partner = IndexSlot(INNER, slot.label, not slot.up)
    return field(name, partner) * f


def gauge_fermion(f: TensorExpr | None = None, xi=1) -> TensorExpr:
    """``Psi = -Lambda^-2 (omegabar_c f^c + (xi/2) omegabar_c h^c)`` as a density."""
    f = lorentz_gauge_functional() if f is None else f
    slot = _check_gauge_functional(f)
    xi = Fraction(xi)
    h = field("h", slot)
    body = _pair("omegabar", slot, f) + _pair("omegabar", slot, h) * (xi / 2)
    return const("Lambda", -2) * body * -1


def faddeev_popov_delta(f: TensorExpr | None = None) -> TensorExpr:
    """``Delta^c = F^c_d omega^d`` from the gauge variation of ``f`` with the parameter set to the ghost."""
    f = lorentz_gauge_functional() if f is None else f
    _check_gauge_functional(f)
    var = gauge_variation(f, "epar")
    return substitute(var, _factor("epar", ("i^a",)), field("omega", "i^a"))


@dataclass
class GaugeFermionDecomposition:
    s_psi: TensorExpr
    expected: TensorExpr
    delta: TensorExpr
    residual: TensorExpr

    @property
    def passed(self) -> bool:
        return self.residual.is_zero()


def s_of_gauge_fermion(f: TensorExpr | None = None, xi=1) -> GaugeFermionDecomposition:
    """``s Psi`` against ``Lambda^-2 (omegabar_c Delta^c + h_c f^c + (xi/2) h_c h^c)``."""
    f = lorentz_gauge_functional() if f is None else f
    slot = _check_gauge_functional(f)
    xi = Fraction(xi)
    sp = slope_operator(gauge_fermion(f, xi))
    delta = faddeev_popov_delta(f)
    expected = const("Lambda", -2) * (_pair("omegabar", slot, delta) + _pair("h", slot, f)
                                      + _pair("h", slot, field("h", slot)) * (xi / 2))
    return GaugeFermionDecomposition(sp, expected, delta, sp - expected)


# ----------------------------------------------------------------- invariance of the action

DIVERGENCE_FREE = ("A", "omega", "omegabar", "h", "epar", "F")


def divergence_free(fs: tuple[Factor, ...]) -> bool:
    """True when a monomial vanishes because an inner field is divergence-free
    or because the constant inner metric is differentiated."""
    for f in fs:
        if f.name == "ginner" and f.derivs:
            return True
        if f.name in DIVERGENCE_FREE:
            inner = {s.label for s in f.indices if s.space == INNER}
            if any(d.space == INNER and d.label in inner for d in f.derivs):
                return True
    return False


def field_strength(mu: str, nu: str, a: str, abelian: bool = False) -> TensorExpr:
    """``F_{mu nu}^a`` written out in terms of ``A``; ``a`` is an index token."""
    from .tensor_core import ix
    slot = ix(a)
    lab = "q" + slot.label
    F = field("A", nu, a, d=[mu]) - field("A", mu, a, d=[nu])
    if not abelian:
        F = F + field("A", mu, f"i^{lab}") * field("A", nu, a, d=[f"i_{lab}"]) \
            - field("A", nu, f"i^{lab}") * field("A", mu, a, d=[f"i_{lab}"])
    return F


def classical_lagrangian(abelian: bool = False) -> TensorExpr:
    """``-(1/(4 Lambda^2)) g_ab F_{mn}^a F^{mn b}`` with an explicit inner metric."""
    F1 = field_strength("s_m", "s_n", "i^a", abelian)
    F2 = field_strength("s^m", "s^n", "i^b", abelian)
    return const("Lambda", -2) * field("ginner", "i_a", "i_b") * F1 * F2 * Fraction(-1, 4)


def action_reducer() -> TotalDerivativeReducer:
    return TotalDerivativeReducer(spaces=(SPACETIME, INNER), vanishing=divergence_free)


@dataclass
class InvarianceReport:
    """Outcome of the BRST invariance check of the gauge-fixed action.

    ``classical_residual`` is the normal form of ``s L`` modulo total
    derivatives and the divergence-free constraints; ``gauge_fixing_residual``
    is ``s(s Psi)``.
    """

    metric: str
    classical_residual: TensorExpr
    gauge_fixing_residual: TensorExpr

    @property
    def passed(self) -> bool:
        return self.classical_residual.is_zero() and self.gauge_fixing_residual.is_zero()


class InvarianceFailureReport(InvarianceReport):
    """Returned (not raised) when a residual survives."""


def brst_invariance_of_action(xi=1, metric: str = "transforming", abelian: bool = False) -> InvarianceReport:
    """Check ``delta_theta S_NEW = 0`` at the integrand level.

    (a) ``s`` of the classical integrand reduced modulo total spacetime and inner
    derivatives; (b) ``s(s Psi)`` for the covariant gauge fermion, which must be
    an exact zero.
    """
    L = classical_lagrangian(abelian)
    sL = slope_operator(L, metric, abelian)
    if abelian:
        res_a = sL
    else:
        res_a = action_reducer().reduce(sL)
    sp = slope_operator(gauge_fermion(None, xi), metric)
    res_b = slope_operator(sp, metric)
    cls = InvarianceReport if (res_a.is_zero() and res_b.is_zero()) else InvarianceFailureReport
    return cls(metric, res_a, res_b)


# ----------------------------------------------------------------- numeric torus oracle


class _TrigComponent:
    """Real band-limited function ``Re sum c_n exp(i n.x)`` on the 8-torus."""

    def __init__(self, modes: dict):
        self.modes = {k: v for k, v in modes.items() if v != 0}

    def derivative(self, axis: int) -> "_TrigComponent":
        return _TrigComponent({n: c * 1j * n[axis] for n, c in self.modes.items()})

    def __add__(self, other):
        m = dict(self.modes)
        for n, c in other.modes.items():
            m[n] = m.get(n, 0) + c
        return _TrigComponent(m)

    def scale(self, s):
        return _TrigComponent({n: c * s for n, c in self.modes.items()})

    def on(self, grid) -> np.ndarray:
        out = np.zeros(grid[0].shape)
        for n, c in self.modes.items():
            phase = sum(k * x for k, x in zip(n, grid) if k)
            out = out + (c * np.exp(1j * phase)).real if not isinstance(phase, int) else out + c.real
        return out


ACTIVE = (0, 1, 4, 5, 6)  # x^0, x^1, X^0, X^1, X^2


def _random_component(rng) -> _TrigComponent:
    modes = {}
    for _ in range(3):
        n = [0] * 8
        for ax in ACTIVE:
            n[ax] = int(rng.integers(-1, 2))
        modes[tuple(n)] = complex(rng.normal(), rng.normal())
    return _TrigComponent(modes)


def _divergence_free_vector(rng, lead: int = 0):
    """``V^a = nabla_b W^{ab}`` with W antisymmetric; returns upper components."""
    W = {}
    for a, b in itertools.combinations(range(4), 2):
        W[(a, b)] = _random_component(rng)
    V = []
    for a in range(4):
        comp = _TrigComponent({})
        for b in range(4):
            if a == b:
                continue
            w = W[(a, b)] if a < b else W[(b, a)].scale(-1)
            comp = comp + w.derivative(4 + b)
        V.append(comp)
    return V


class TorusFields:
    """Random divergence-free gauge field and ghost on a periodic grid.

    The grid resolves every product appearing in the check exactly, so the
    mean of a total derivative is zero to rounding.
    """

    ETA = np.array([-1.0, 1.0, 1.0, 1.0])

    def __init__(self, seed: int = 11, n: int = 6):
        rng = np.random.Generator(np.random.Philox(seed))
        self.A = [_divergence_free_vector(rng) for _mu in range(4)]  # A[mu][a], a upper
        self.omega = _divergence_free_vector(rng)
        axes = [np.arange(n) * 2 * np.pi / n if k in ACTIVE else np.zeros(1) for k in range(8)]
        mesh = np.meshgrid(*[axes[k] for k in ACTIVE], indexing="ij")
        self.grid = [None] * 8
        for j, k in enumerate(ACTIVE):
            self.grid[k] = mesh[j]
        for k in range(8):
            if self.grid[k] is None:
                self.grid[k] = np.zeros_like(mesh[0])
        self._cache: dict = {}

    def _component(self, comp: _TrigComponent, derivs) -> np.ndarray:
        for d in derivs:
            comp = comp.derivative(d)
        return comp.on(self.grid)

    def provider(self, f: Factor) -> np.ndarray:
        key = (f.name, tuple(s.space for s in f.indices), tuple(s.space for s in f.derivs))
        if key in self._cache:
            return self._cache[key]
        shape_grid = self.grid[0].shape
        dspaces = [s.space for s in f.derivs]
        if f.name == "ginner":
            arr = np.zeros((4, 4) + (4,) * len(dspaces) + shape_grid)
            if not dspaces:
                for a in range(4):
                    arr[a, a] = self.ETA[a]
        elif f.name in ("A", "omega"):
            nidx = len(f.indices)
            arr = np.zeros((4,) * (nidx + len(dspaces)) + shape_grid)
            for combo in itertools.product(range(4), repeat=nidx + len(dspaces)):
                idx, der = combo[:nidx], combo[nidx:]
                if f.name == "A":
                    base, a = self.A[idx[0]][idx[1]], idx[1]
                else:
                    base, a = self.omega[idx[0]], idx[0]
                axes = [d + (0 if sp == SPACETIME else 4) for d, sp in zip(der, dspaces)]
                # lower the inner index of the field
                arr[combo] = self.ETA[a] * self._component(base, axes)
        else:
            raise UnknownFieldError(f"no numeric field for {f.name}")
        self._cache[key] = arr
        return arr


def numeric_action_variation(metric: str = "transforming", seed: int = 11) -> tuple[float, float]:
    """Grid integral of ``s L`` with the ghost treated as a commuting field.

    ``s L`` is linear in the ghost so no sign ambiguity arises.  Returns
    (|mean of s L|, mean of |s L|) so the first can be judged against the
    natural size of the integrand.
    """
    sL = slope_operator(classical_lagrangian(), metric)
    fields = TorusFields(seed)
    vals = evaluate(sL, fields.provider, {"Lambda": 1.0}, batch=fields.grid[0].ndim)
    vals = np.real(vals)
    return float(abs(vals.mean())), float(np.abs(vals).mean())
