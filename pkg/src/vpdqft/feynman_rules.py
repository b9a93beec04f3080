"""Momentum-space propagators, vertices, tree assembly and power counting.

Every leg of a vertex carries an incoming spacetime momentum ``k`` and an
inner momentum ``K``, both represented by momentum factors tagged with the
leg's name.  Gauge legs carry a spacetime index (lower) and an inner index
(upper); ghost legs carry an inner index.  Inverse squares ``1/k^2`` are the
``invsq`` factor; the ``-i eps`` prescription is an annotation only.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DomainError,
    MalformedGraphError,
    MomentumConservationError,
    OnShellSingularityError,
)
from .tensor_core import (
    ETA_DIAG,
    Factor,
    IndexSlot,
    TensorExpr,
    const,
    evaluate,
    field,
    ix,
    metric,
)

CONSERVATION_TOL = 1e-9
IEPS_NOTE = "propagator denominators carry the -i*eps prescription (not evaluated)"


# ------------------------------------------------------------------ domain types


@dataclass(frozen=True)
class MomentumLabel:
    """Symbolic names of the momenta on one leg: k (spacetime) and K (inner)."""

    tag: str

    def k(self, index: str) -> TensorExpr:
        return field("k", index, tag=self.tag)

    def K(self, index: str) -> TensorExpr:
        return field("K", index, tag=self.tag)


@dataclass(frozen=True)
class VertexKind:
    tag: str
    legs: int
    derivatives: int
    lines: int


VERTEX_KINDS = {
    "triGauge": VertexKind("triGauge", 3, 1, 3),
    "quadGauge": VertexKind("quadGauge", 4, 0, 4),
    "ghostGauge": VertexKind("ghostGauge", 3, 1, 3),
}


@dataclass(frozen=True)
class StateLabel:
    """One-particle state label: momenta, spins and opaque extra quantum numbers."""

    k: tuple[float, float, float, float]
    sigma: int
    K: tuple[float, float, float, float]
    inner_spin: int
    species: str = "gauge"
    other: tuple = ()

    def __post_init__(self):
        want = 1 if self.species in ("gauge", "ghost") else 0
        if self.inner_spin != want:
            raise DomainError(f"inner spin of a {self.species} state must be {want}")


# ------------------------------------------------------------------ helpers


def _inv_lambda2() -> TensorExpr:
    return const("Lambda", -2)


def _slot(tok: str | IndexSlot) -> str:
    return ix(tok).token()


def _mom(name: str, tag: str, index: str | IndexSlot) -> TensorExpr:
    return field(name, index, tag=tag)


def _lower(tok: str) -> str:
    s = ix(tok)
    return IndexSlot(s.space, s.label, False).token()


def _upper(tok: str) -> str:
    s = ix(tok)
    return IndexSlot(s.space, s.label, True).token()


def _invsq(name: str, tag: str) -> TensorExpr:
    return field("invsq", tag=f"{name}|{tag}")


def transversal_delta(tag: str = "1", a: str = "i_alpha", b: str = "i_beta") -> TensorExpr:
    """Inner transversal projector ``eta_ab - K_a K_b / K^2``."""
    return metric(a, b) - _mom("K", tag, a) * _mom("K", tag, b) * _invsq("K", tag)


def gauge_propagator(tag: str = "1", xi=1, mu: str = "s_mu", alpha: str = "i_alpha",
                     nu: str = "s_nu", beta: str = "i_beta") -> TensorExpr:
    """``1/k^2 (eta_mn - (1-xi) k_m k_n / k^2)(eta_ab - K_a K_b / K^2)``.

    ``xi`` is a rational number or None for the symbolic gauge parameter.
    """
    one_minus = TensorExpr.scalar(1) - (const("xi") if xi is None else TensorExpr.scalar(Fraction(xi)))
    spacetime = metric(mu, nu) - one_minus * _mom("k", tag, mu) * _mom("k", tag, nu) * _invsq("k", tag)
    return _invsq("k", tag) * spacetime * transversal_delta(tag, alpha, beta)


def ghost_propagator(tag: str = "1", gamma: str = "i^gamma", delta: str = "i_delta") -> TensorExpr:
    """``1/k^2 (eta^g_d - K^g K_d / K^2)``."""
    return _invsq("k", tag) * transversal_delta(tag, gamma, delta)


def three_gauge_vertex(legs: Sequence[tuple[str, str]] = (("mu", "alpha"), ("nu", "beta"), ("rho", "gamma")),
                       tags: Sequence[str] = ("1", "2", "3")) -> TensorExpr:
    """Trilinear gauge vertex for legs (spacetime label, inner label) with momentum tags."""
    (m, a), (n, b), (r, g) = legs
    t1, t2, t3 = tags
    S = lambda x: f"s_{x}"  # noqa: E731
    Iu = lambda x: f"i^{x}"  # noqa: E731

    def term(Ktag, Kidx, eta_pair, ktag, first, second):
        k1, e1 = first
        k2, e2 = second
        return _mom("K", Ktag, Iu(Kidx)) * metric(Iu(eta_pair[0]), Iu(eta_pair[1])) * (
            _mom("k", ktag, S(k1)) * metric(S(e1[0]), S(e1[1])) - _mom("k", ktag, S(k2)) * metric(S(e2[0]), S(e2[1])))

    body = term(t1, g, (a, b), t2, (r, (m, n)), (m, (n, r))) \
        + term(t2, a, (b, g), t3, (m, (n, r)), (n, (r, m))) \
        + term(t3, b, (g, a), t1, (n, (r, m)), (r, (m, n)))
    return _inv_lambda2() * body * -2


def four_gauge_vertex(legs: Sequence[tuple[str, str]] = (("mu", "alpha"), ("nu", "beta"), ("rho", "gamma"),
                                                         ("sigma", "delta")),
                      tags: Sequence[str] = ("1", "2", "3", "4")) -> TensorExpr:
    """Quadrilinear gauge vertex: three inner brackets times spacetime metric pairs."""
    (m, a), (n, b), (r, g), (s, d) = legs
    t1, t2, t3, t4 = tags

    def K(t, x):
        return _mom("K", t, f"i^{x}")

    def ei(x, y):
        return metric(f"i^{x}", f"i^{y}")

    def es(x, y):
        return metric(f"s_{x}", f"s_{y}")

    br1 = K(t1, g) * K(t2, d) * ei(a, b) - K(t2, d) * K(t3, a) * ei(b, g) \
        + K(t3, a) * K(t4, b) * ei(g, d) - K(t1, g) * K(t4, b) * ei(a, d)
    br2 = K(t1, d) * K(t2, g) * ei(a, b) - K(t1, d) * K(t3, b) * ei(a, g) \
        + K(t3, b) * K(t4, a) * ei(g, d) - K(t2, g) * K(t4, a) * ei(b, d)
    br3 = K(t1, b) * K(t3, d) * ei(a, g) - K(t1, b) * K(t4, g) * ei(a, d) \
        + K(t2, a) * K(t4, g) * ei(b, d) - K(t2, a) * K(t3, d) * ei(b, g)
    body = br1 * (es(m, n) * es(r, s) - es(m, s) * es(n, r)) \
        + br2 * (es(m, n) * es(r, s) - es(m, r) * es(n, s)) \
        + br3 * (es(m, r) * es(n, s) - es(m, s) * es(n, r))
    return _inv_lambda2() * body * -1


def ghost_gauge_vertex(gamma: str = "gamma", delta: str = "delta", gauge_leg: tuple[str, str] = ("mu", "alpha"),
                       tags: Sequence[str] = ("1", "2", "3")) -> TensorExpr:
    """Ghost-gauge vertex; leg 1 is the outgoing ghost (index gamma), leg 2 the
    incoming ghost (index delta), leg 3 the gauge line.

    The inner metric of the second term joins the gauge leg's inner index
    with the outgoing ghost's index, as the coupling term dictates.
    """
    m, a = gauge_leg
    t1, t2, t3 = tags
    body = _mom("K", t2, f"i^{a}") * metric(f"i^{gamma}", f"i^{delta}") \
        - _mom("K", t3, f"i^{delta}") * metric(f"i^{a}", f"i^{gamma}")
    return _inv_lambda2() * body * _mom("k", t1, f"s_{m}") * -1


def superficial_degree(external_lines: int) -> int:
    if external_lines < 0:
        raise DomainError("external line count must be non-negative")
    return 4 - external_lines


def vertex_divergence_index(kind: str | VertexKind) -> int:
    v = VERTEX_KINDS[kind] if isinstance(kind, str) else kind
    return v.lines + v.derivatives - 4


# ------------------------------------------------------------- numeric evaluation


def check_conservation(vectors: Sequence[Sequence[float]], what: str = "momentum", tol: float = CONSERVATION_TOL):
    arr = np.asarray(vectors, dtype=float)
    total = arr.sum(axis=0)
    scale = float(np.max(np.abs(arr))) if arr.size else 0.0
    if np.any(np.abs(total) > tol * max(scale, 1e-300)) and np.any(total != 0):
        raise MomentumConservationError(f"{what} not conserved: sum = {total.tolist()}")


def _square(v: np.ndarray) -> float:
    return float(np.dot(np.asarray(ETA_DIAG) * v, v))


def numeric_provider(k: Mapping[str, Sequence[float]], K: Mapping[str, Sequence[float]]):
    """Provider for ``evaluate``: momenta are given by contravariant components."""
    eta = np.asarray(ETA_DIAG)
    kk = {t: np.asarray(v, dtype=float) for t, v in k.items()}
    KK = {t: np.asarray(v, dtype=float) for t, v in K.items()}

    def provide(f: Factor):
        if f.name == "eta":
            return np.diag(eta)
        if f.name in ("k", "K"):
            src = kk if f.name == "k" else KK
            return eta * src[f.tag]
        if f.name == "invsq":
            name, _, tag = f.tag.partition("|")
            v = (kk if name == "k" else KK)[tag]
            sq = _square(v)
            if abs(sq) <= 1e-12 * max(1.0, float(np.dot(v, v))):
                raise OnShellSingularityError(f"{name}_{tag}^2 = 0 at the evaluation point")
            return np.asarray(1.0 / sq)
        raise MalformedGraphError(f"no numeric value for factor {f.name}")

    return provide


def evaluate_numeric(expr: TensorExpr, k: Mapping[str, Sequence[float]], K: Mapping[str, Sequence[float]],
                     conserve: Sequence[Sequence[str]] = (), lam: float = 1.0, xi: float = 1.0):
    """Evaluate a propagator or vertex expression at numeric momenta.

    ``conserve`` lists groups of signed tags ("1", "-2", ...) whose momenta
    must sum to zero.  The result has one axis per free slot, in the order of
    ``expr.free_indices()``.
    """
    for group in conserve:
        ks, Ks = [], []
        for t in group:
            sign = -1.0 if t.startswith("-") else 1.0
            t = t.lstrip("-")
            ks.append(sign * np.asarray(k[t], dtype=float))
            Ks.append(sign * np.asarray(K[t], dtype=float))
        check_conservation(ks, "spacetime momentum")
        check_conservation(Ks, "inner momentum")
    return evaluate(expr, numeric_provider(k, K), {"Lambda": lam, "xi": xi})


def vertex_numeric(kind: str, k: Sequence[Sequence[float]], K: Sequence[Sequence[float]], lam: float = 1.0):
    """Numeric vertex tensor for numeric leg momenta; conservation is enforced."""
    builders = {"triGauge": three_gauge_vertex, "quadGauge": four_gauge_vertex, "ghostGauge": ghost_gauge_vertex}
    if kind not in builders:
        raise DomainError(f"unknown vertex kind {kind!r}")
    n = VERTEX_KINDS[kind].legs
    if len(k) != n or len(K) != n:
        raise MalformedGraphError(f"{kind} needs {n} legs")
    tags = [str(i + 1) for i in range(n)]
    expr = builders[kind]()
    km = dict(zip(tags, k))
    Km = dict(zip(tags, K))
    return expr, evaluate_numeric(expr, km, Km, conserve=[tags], lam=lam)


# ----------------------------------------------------------------- tree assembly


@dataclass
class GraphDescription:
    """A tree graph: vertices list their lines in leg order; lines name a species
    and a momentum tag.  An internal line joins two vertices; its momentum
    flows into the first vertex listing it and out of the second.
    """

    vertices: list[dict] = dc_field(default_factory=list)
    lines: dict[str, dict] = dc_field(default_factory=dict)
    momenta: dict[str, dict] | None = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "GraphDescription":
        try:
            return cls(list(doc.get("vertices", [])), dict(doc["lines"]), doc.get("momenta"))
        except (KeyError, TypeError, AttributeError) as exc:
            raise MalformedGraphError(f"bad graph description: {exc}") from None


def _negate_tag(expr: TensorExpr, tag: str) -> TensorExpr:
    out = {}
    for (syms, fs), c in expr.terms.items():
        n = sum(1 for f in fs if f.name in ("k", "K") and f.tag == tag)
        out[(syms, fs)] = -c if n % 2 else c
    return TensorExpr(out)


def assemble_amplitude(graph: GraphDescription | Mapping) -> TensorExpr:
    """Product of vertex factors and internal propagators of a tree graph.

    External line indices stay free and are named after the line:
    ``s_m<line>``/``i^a<line>`` for gauge lines and ``i^a<line>`` for ghosts.
    """
    if not isinstance(graph, GraphDescription):
        graph = GraphDescription.from_dict(graph)
    lines = graph.lines
    uses: dict[str, list[tuple[int, int]]] = {name: [] for name in lines}
    for vi, v in enumerate(graph.vertices):
        kind = v.get("kind")
        if kind not in VERTEX_KINDS:
            raise MalformedGraphError(f"unknown vertex kind {kind!r}")
        if len(v.get("lines", [])) != VERTEX_KINDS[kind].legs:
            raise MalformedGraphError(f"{kind} vertex needs {VERTEX_KINDS[kind].legs} lines")
        for li, name in enumerate(v["lines"]):
            if name not in lines:
                raise MalformedGraphError(f"vertex {vi} uses undeclared line {name!r}")
            uses[name].append((vi, li))
    for name, u in uses.items():
        if len(u) > 2:
            raise MalformedGraphError(f"line {name!r} attached to more than two vertices")
    internal = [n for n, u in uses.items() if len(u) == 2]
    if graph.vertices and len(internal) != len(graph.vertices) - 1:
        raise MalformedGraphError("graph is not a tree")
    _check_connected(graph, uses)

    def labels(name, end):
        return f"m{name}{end}", f"a{name}{end}"

    amp = TensorExpr.scalar(1)
    conserve = []
    for vi, v in enumerate(graph.vertices):
        kind = v["kind"]
        legs, tags, signs = [], [], []
        for name in v["lines"]:
            u = uses[name]
            spec = lines[name]
            species = spec.get("species", "gauge")
            end = "" if len(u) == 1 else ("x" if u[0][0] == vi else "y")
            if len(u) == 2 and u[0][0] == u[1][0]:
                raise MalformedGraphError(f"line {name!r} is a tadpole, not a tree line")
            sign = "" if end in ("", "x") else "-"
            tags.append(str(spec["momentum"]))
            signs.append(sign + str(spec["momentum"]))
            legs.append((species,) + labels(name, end))
        expected = ["ghost", "ghost", "gauge"] if kind == "ghostGauge" else ["gauge"] * VERTEX_KINDS[kind].legs
        if [l[0] for l in legs] != expected:
            raise MalformedGraphError(f"{kind} vertex expects lines of species {expected}")
        if kind == "triGauge":
            vx = three_gauge_vertex([(l[1], l[2]) for l in legs], tags)
        elif kind == "quadGauge":
            vx = four_gauge_vertex([(l[1], l[2]) for l in legs], tags)
        else:
            vx = ghost_gauge_vertex(legs[0][2], legs[1][2], (legs[2][1], legs[2][2]), tags)
        for t, s in zip(tags, signs):
            if s.startswith("-"):
                vx = _negate_tag(vx, t)
        amp = amp * vx
        conserve.append(signs)
    for name in internal:
        spec = lines[name]
        tag = str(spec["momentum"])
        mx, ax = labels(name, "x")
        my, ay = labels(name, "y")
        if spec.get("species", "gauge") == "gauge":
            amp = amp * gauge_propagator(tag, spec.get("xi", 1), f"s^{mx}", f"i_{ax}", f"s^{my}", f"i_{ay}")
        else:
            amp = amp * ghost_propagator(tag, f"i_{ax}", f"i_{ay}")
    if not graph.vertices:
        if len(lines) != 1:
            raise MalformedGraphError("a graph without vertices must be a single line")
        (name, spec), = lines.items()
        tag = str(spec["momentum"])
        if spec.get("species", "gauge") == "gauge":
            amp = gauge_propagator(tag, spec.get("xi", 1), f"s_m{name}x", f"i_a{name}x", f"s_m{name}y", f"i_a{name}y")
        else:
            amp = ghost_propagator(tag, f"i^a{name}x", f"i_a{name}y")
    if graph.momenta:
        k = {t: v["k"] for t, v in graph.momenta.items()}
        K = {t: v["K"] for t, v in graph.momenta.items()}
        for group in conserve:
            ks = [(-1 if s.startswith("-") else 1) * np.asarray(k[s.lstrip("-")], float) for s in group]
            Ks = [(-1 if s.startswith("-") else 1) * np.asarray(K[s.lstrip("-")], float) for s in group]
            check_conservation(ks, "spacetime momentum")
            check_conservation(Ks, "inner momentum")
    return amp


def _check_connected(graph: GraphDescription, uses) -> None:
    n = len(graph.vertices)
    if n <= 1:
        return
    adj: dict[int, set[int]] = {i: set() for i in range(n)}
    for u in uses.values():
        if len(u) == 2:
            adj[u[0][0]].add(u[1][0])
            adj[u[1][0]].add(u[0][0])
    seen = {0}
    stack = [0]
    while stack:
        x = stack.pop()
        for y in adj[x] - seen:
            seen.add(y)
            stack.append(y)
    if len(seen) != n:
        raise MalformedGraphError("graph is disconnected")
