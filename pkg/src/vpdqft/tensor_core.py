"""Exact symbolic tensor algebra over spacetime, inner, matrix-block and spinor indices.

Expressions are finite sums of monomials.  A monomial is an exact rational
coefficient, a product of powers of named constants and an ordered product of
factors.  Every factor is a registered symbol carrying index slots and a
(commuting, symmetric) list of derivative slots.  Each index label occurs at
most twice in a monomial; twice means contracted.

All public operations return expressions in canonical form:

* metric factors are absorbed into the slots they contract with, a traced
  metric becomes the dimension 4;
* derivatives of constant factors vanish;
* factors are reordered into a label-free canonical order, with the sign of
  the Grassmann permutation tracked;
* dummy labels are renamed by first occurrence and slot (anti)symmetries are
  applied; the lexicographically least form wins, and a monomial reachable
  with both signs is zero.

The matrix-block space ``gauge`` is used for the abstract row/column chain
indices of operator coefficients, so a trace over a closed chain is invariant
under cyclic rotation by construction.
"""
from __future__ import annotations

import itertools
import re
from collections import defaultdict
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from .errors import (
    IndexSpaceError,
    MalformedExpressionError,
    OpenSpinorLineError,
    SubstitutionError,
    UnknownFieldError,
    VarianceError,
)

SPACETIME = "spacetime"
INNER = "inner"
GAUGE = "gauge"
SPINOR = "spinor"
SPACES = (SPACETIME, INNER, GAUGE, SPINOR)
METRIC_SPACES = frozenset({SPACETIME, INNER})
DERIV_SPACES = (SPACETIME, INNER)
DIMENSION = {SPACETIME: 4, INNER: 4, SPINOR: 4}

_CODE = {SPACETIME: "s", INNER: "i", GAUGE: "g", SPINOR: "p"}
_SPACE_OF = {v: k for k, v in _CODE.items()}
_SPACE_RANK = {s: n for n, s in enumerate(SPACES)}

# constant alphabet of symbolic coefficients; I is the imaginary unit
CONSTANTS = ("Omega4", "eps", "Lambda", "Omega1", "g", "xi", "I")


@dataclass(frozen=True, order=True)
class IndexSlot:
    space: str
    label: str
    up: bool = False

    def __post_init__(self):
        if self.space not in _CODE:
            raise IndexSpaceError(f"unknown index space {self.space!r}")
        if not self.label or not re.fullmatch(r"[A-Za-z0-9_']+", self.label):
            raise MalformedExpressionError(f"bad index label {self.label!r}")

    @property
    def variance(self) -> str:
        return "up" if self.up else "down"

    def flipped(self) -> "IndexSlot":
        return replace(self, up=not self.up)

    def token(self) -> str:
        return f"{_CODE[self.space]}{'^' if self.up else '_'}{self.label}"

    def __str__(self):
        return self.token()


def ix(token: str | IndexSlot) -> IndexSlot:
    """Parse an index token such as ``s^mu`` (upper spacetime) or ``i_alpha``."""
    if isinstance(token, IndexSlot):
        return token
    m = re.fullmatch(r"([sigp])([\^_])([A-Za-z0-9_']+)", token.strip())
    if not m:
        raise MalformedExpressionError(f"cannot parse index token {token!r}")
    return IndexSlot(_SPACE_OF[m.group(1)], m.group(3), m.group(2) == "^")


# ---------------------------------------------------------------- symbols


@dataclass(frozen=True)
class FieldSymbol:
    """A registered tensor symbol.

    ``spaces`` lists the index space of each slot, or is None for the metric,
    whose two slots may live in either metric space.  ``symmetries`` holds
    (slot positions, +1 or -1) pairs for symmetric or antisymmetric groups.
    """

    name: str
    kind: str
    spaces: tuple[str, ...] | None
    odd: bool = False
    ghost: int = 0
    constant: bool = False
    symmetries: tuple[tuple[tuple[int, ...], int], ...] = ()
    priority: int = 50


_REGISTRY: dict[str, FieldSymbol] = {}


def declare(sym: FieldSymbol) -> FieldSymbol:
    old = _REGISTRY.get(sym.name)
    if old is not None and old != sym:
        raise MalformedExpressionError(f"symbol {sym.name!r} already declared differently")
    _REGISTRY[sym.name] = sym
    return sym


def lookup(name: str) -> FieldSymbol:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownFieldError(f"unknown symbol {name!r}") from None


def registered() -> dict[str, FieldSymbol]:
    return dict(_REGISTRY)


S, I_, G, P = SPACETIME, INNER, GAUGE, SPINOR
for _sym in (
    FieldSymbol("theta", "brstTheta", (), odd=True, ghost=-1, constant=True, priority=0),
    FieldSymbol("eta", "metricEta", None, constant=True, symmetries=(((0, 1), 1),), priority=95),
    FieldSymbol("Ip", "spinorIdentity", (P, P), constant=True, priority=94),
    FieldSymbol("gamma", "gammaMatrix", (S, P, P), constant=True, priority=90),
    FieldSymbol("k", "momentumSmallK", (S,), constant=True, priority=80),
    FieldSymbol("K", "momentumK", (I_,), constant=True, priority=81),
    FieldSymbol("invsq", "inverseSquare", (), constant=True, priority=82),
    FieldSymbol("A", "gaugeA", (S, I_), priority=20),
    FieldSymbol("F", "fieldStrengthF", (S, S, I_), symmetries=(((0, 1), -1),), priority=21),
    FieldSymbol("omega", "ghostOmega", (I_,), odd=True, ghost=1, priority=22),
    FieldSymbol("omegabar", "antighostOmegaStar", (I_,), odd=True, ghost=-1, priority=23),
    FieldSymbol("h", "auxiliaryH", (I_,), priority=24),
    FieldSymbol("psi", "matterPsi", (), priority=25),
    FieldSymbol("ginner", "innerMetric", (I_, I_), symmetries=(((0, 1), 1),), priority=26),
    FieldSymbol("epar", "gaugeParameter", (I_,), priority=27),
    FieldSymbol("B", "genericB", (S, G, G), priority=30),
    FieldSymbol("C", "genericC", (G, G), priority=31),
    FieldSymbol("E", "genericE", (G, G), priority=32),
    FieldSymbol("M", "genericM", (I_, I_, G, G), symmetries=(((0, 1), 1),), priority=33),
    FieldSymbol("N", "genericN", (I_, G, G), priority=34),
    FieldSymbol("Aop", "connectionA", (S, G, G), priority=35),
    FieldSymbol("Fop", "operatorF", (S, S, G, G), symmetries=(((0, 1), -1),), priority=36),
):
    declare(_sym)
del _sym


@dataclass(frozen=True, order=True)
class Factor:
    name: str
    indices: tuple[IndexSlot, ...] = ()
    derivs: tuple[IndexSlot, ...] = ()
    tag: str = ""

    @property
    def symbol(self) -> FieldSymbol:
        return lookup(self.name)

    @property
    def slots(self) -> tuple[IndexSlot, ...]:
        return self.indices + self.derivs

    def with_slots(self, slots: Sequence[IndexSlot]) -> "Factor":
        n = len(self.indices)
        return Factor(self.name, tuple(slots[:n]), tuple(slots[n:]), self.tag)

    def check(self) -> None:
        sym = self.symbol
        if sym.spaces is None:
            if len(self.indices) != 2 or self.indices[0].space != self.indices[1].space:
                raise IndexSpaceError(f"{self.name} needs two slots in one space")
            if self.indices[0].space not in METRIC_SPACES:
                raise IndexSpaceError(f"{self.name} lives in a metric space")
        else:
            if len(self.indices) != len(sym.spaces):
                raise MalformedExpressionError(
                    f"{self.name} takes {len(sym.spaces)} indices, got {len(self.indices)}")
            for s, want in zip(self.indices, sym.spaces):
                if s.space != want:
                    raise IndexSpaceError(f"{self.name}: slot {s} should be in {want}")
        for d in self.derivs:
            if d.space not in DERIV_SPACES:
                raise IndexSpaceError(f"derivative index {d} must be spacetime or inner")

    def __str__(self):
        head = self.name + (f"#{self.tag}" if self.tag else "")
        body = ",".join(s.token() for s in self.indices)
        der = "".join(("d" if d.space == SPACETIME else "D") + "[" + d.token() + "]" for d in self.derivs)
        return f"{der}{head}{{{body}}}"


# ---------------------------------------------------------- coefficients

Syms = tuple  # sorted tuple of (name, exponent)


def _mul_syms(a: Syms, b: Syms) -> tuple[int, Syms]:
    """Multiply two symbol power products; returns (sign from I^2, product)."""
    if not a:
        return 1, b
    if not b:
        return 1, a
    acc = dict(a)
    for k, e in b:
        acc[k] = acc.get(k, 0) + e
    sign = 1
    if "I" in acc:
        e = acc["I"]
        if (e // 2) % 2:
            sign = -1
        acc["I"] = e % 2
    return sign, tuple(sorted((k, e) for k, e in acc.items() if e))


def _collect(syms):
    acc: dict[str, int] = {}
    for k, e in syms:
        acc[k] = acc.get(k, 0) + int(e)
    sign = 1
    if "I" in acc:
        if (acc["I"] // 2) % 2:
            sign = -1
        acc["I"] %= 2
    return sign, tuple(sorted((k, e) for k, e in acc.items() if e))


# ------------------------------------------------------- canonicalisation

_fresh_counter = itertools.count()


def fresh_label() -> str:
    return f"_t{next(_fresh_counter)}"


def _deriv_sorted(f: Factor) -> Factor:
    if len(f.derivs) > 1:
        d = tuple(sorted(f.derivs, key=lambda s: _SPACE_RANK[s.space]))
        if d != f.derivs:
            return Factor(f.name, f.indices, d, f.tag)
    return f


def _find_slot(fs: list[Factor], skip: int, label: str):
    for q, f in enumerate(fs):
        if q == skip:
            continue
        for j, s in enumerate(f.slots):
            if s.label == label:
                return q, j
    return None


def _absorb_metrics(fs: list[Factor]) -> tuple[int, list[Factor]]:
    """Absorb metric and spinor-identity factors; returns (trace multiplier, factors)."""
    mult = 1
    changed = True
    while changed:
        changed = False
        for p, f in enumerate(fs):
            if f.name not in ("eta", "Ip"):
                continue
            a, b = f.indices
            if a.label == b.label:
                if a.space in METRIC_SPACES and a.up == b.up:
                    raise VarianceError(f"metric trace over two {a.variance} slots")
                mult *= DIMENSION[a.space]
                del fs[p]
                changed = True
                break
            for x, y in ((a, b), (b, a)):
                loc = _find_slot(fs, p, x.label)
                if loc is None:
                    continue
                q, j = loc
                t = fs[q].slots[j]
                if t.space != x.space:
                    raise IndexSpaceError(f"contraction of {t} with {x}")
                if t.space in METRIC_SPACES and t.up == x.up:
                    raise VarianceError(f"contraction of two {t.variance} slots {t.label}")
                sl = list(fs[q].slots)
                sl[j] = IndexSlot(t.space, y.label, y.up)
                fs[q] = fs[q].with_slots(sl)
                del fs[p]
                changed = True
                break
            if changed:
                break
    return mult, fs


def _cancel_inverse_squares(fs: list[Factor]) -> list[Factor]:
    """Cancel K_t^a K_t_a against invsq with tag ``K|t``."""
    while True:
        hit = None
        for p, f in enumerate(fs):
            if f.name != "invsq":
                continue
            mname, _, mtag = f.tag.partition("|")
            mom = [q for q, g in enumerate(fs) if g.name == mname and g.tag == mtag and not g.derivs]
            for q1, q2 in itertools.combinations(mom, 2):
                if fs[q1].indices[0].label == fs[q2].indices[0].label:
                    hit = (p, q1, q2)
                    break
            if hit:
                break
        if not hit:
            return fs
        fs = [f for q, f in enumerate(fs) if q not in hit]


def _groups(f: Factor) -> list[tuple[tuple[int, ...], int]]:
    """Slot groups of a factor over its combined slot list (indices then derivs)."""
    sym = f.symbol
    n = len(f.indices)
    used = set()
    out = []
    for pos, sign in sym.symmetries:
        out.append((tuple(pos), sign))
        used.update(pos)
    for j in range(n):
        if j not in used:
            out.append(((j,), 1))
    by_space: dict[str, list[int]] = defaultdict(list)
    for j, d in enumerate(f.derivs):
        by_space[d.space].append(n + j)
    for sp in sorted(by_space, key=_SPACE_RANK.get):
        out.append((tuple(by_space[sp]), 1))
    return out


def _perm_parity(seq: Sequence[int]) -> int:
    inv = 0
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                inv += 1
    return -1 if inv % 2 else 1


_CANON_CACHE: dict[tuple, tuple | None] = {}


def _canonical_factors(factors: tuple[Factor, ...]):
    """Canonical (sign, multiplier, factors) for an ordered factor tuple, or None if zero."""
    hit = _CANON_CACHE.get(factors)
    if hit is not None or factors in _CANON_CACHE:
        return hit
    res = _canonical_uncached(factors)
    if len(_CANON_CACHE) > 400000:
        _CANON_CACHE.clear()
    _CANON_CACHE[factors] = res
    return res


def _canonical_uncached(factors: tuple[Factor, ...]):
    fs = []
    for f in factors:
        f.check()
        if f.derivs and f.symbol.constant:
            return None
        fs.append(_deriv_sorted(f))
    mult, fs = _absorb_metrics(fs)
    fs = _cancel_inverse_squares(fs)
    n = len(fs)
    slots = [f.slots for f in fs]
    occ: dict[str, list[tuple[int, int]]] = defaultdict(list)
    for i, sl in enumerate(slots):
        for j, s in enumerate(sl):
            occ[s.label].append((i, j))
    partner: dict[tuple[int, int], tuple[int, int]] = {}
    for label, lst in occ.items():
        if len(lst) > 2:
            raise MalformedExpressionError(f"index label {label!r} occurs {len(lst)} times")
        if len(lst) == 2:
            a, b = lst
            s1, s2 = slots[a[0]][a[1]], slots[b[0]][b[1]]
            if s1.space != s2.space:
                raise IndexSpaceError(f"label {label!r} joins {s1.space} and {s2.space}")
            if s1.space in METRIC_SPACES and s1.up == s2.up:
                raise VarianceError(f"label {label!r} contracted with equal variance")
            partner[a] = b
            partner[b] = a

    groups = [_groups(f) for f in fs]
    cls: dict[tuple[int, int], tuple] = {}
    for i, gl in enumerate(groups):
        for pos, _sign in gl:
            for j in pos:
                cls[(i, j)] = (pos[0] < len(fs[i].indices), pos[0])
    shape = [
        (f.symbol.priority, f.name, f.tag, tuple(s.space for s in f.indices),
         tuple(d.space for d in f.derivs))
        for f in fs
    ]

    def conn(i, j, fkey):
        o = partner.get((i, j))
        s = slots[i][j]
        if o is None:
            return (0, s.label, s.up)
        return (1, fkey[o[0]], cls[o], o[0] == i)

    key0 = shape
    key1 = [(shape[i], tuple(sorted((cls[(i, j)], conn(i, j, key0)) for j in range(len(slots[i])))))
            for i in range(n)]
    key2 = [(shape[i], tuple(sorted((cls[(i, j)], conn(i, j, key1)) for j in range(len(slots[i])))))
            for i in range(n)]

    order0 = sorted(range(n), key=lambda i: key2[i])
    ties = [list(g) for _, g in itertools.groupby(order0, key=lambda i: key2[i])]

    # slot arrangements per factor: (sign, new->old position map)
    options: list[list[tuple[int, tuple[int, ...]]]] = []
    for i in range(n):
        per_group = []
        for pos, sign in groups[i]:
            ordered = sorted(pos, key=lambda j: conn(i, j, key1))
            sub = [list(g) for _, g in itertools.groupby(ordered, key=lambda j: conn(i, j, key1))]
            choices = []
            for combo in itertools.product(*(itertools.permutations(g) for g in sub)):
                assign = [j for part in combo for j in part]
                sg = _perm_parity([pos.index(j) for j in assign]) if sign < 0 else 1
                choices.append((sg, tuple(assign)))
            per_group.append((pos, choices))
        opts = []
        for combo in itertools.product(*(c for _, c in per_group)):
            newmap = list(range(len(slots[i])))
            sg = 1
            for (pos, _), (s, assign) in zip(per_group, combo):
                sg *= s
                for p_new, p_old in zip(pos, assign):
                    newmap[p_new] = p_old
            opts.append((sg, tuple(newmap)))
        options.append(opts)

    odd = [f.symbol.odd for f in fs]
    best_key = None
    best = None
    signs: set[int] = set()
    for tie_perm in itertools.product(*(itertools.permutations(t) for t in ties)):
        order = [i for t in tie_perm for i in t]
        odd_seq = [i for i in order if odd[i]]
        gsign = _perm_parity(odd_seq)
        for opt in itertools.product(*(options[i] for i in order)):
            names: dict[str, int] = {}
            key = []
            sign = gsign
            for i, (sg, newmap) in zip(order, opt):
                sign *= sg
                sk = []
                for p_old in newmap:
                    s = slots[i][p_old]
                    if (i, p_old) in partner:
                        if s.label not in names:
                            names[s.label] = len(names)
                        sk.append((_SPACE_RANK[s.space], 1, names[s.label], False))
                    else:
                        sk.append((_SPACE_RANK[s.space], 0, s.label, s.up))
                key.append((shape[i], tuple(sk)))
            key = tuple(key)
            if best_key is None or key < best_key:
                best_key, best, signs = key, (order, opt), {sign}
            elif key == best_key:
                signs.add(sign)
    if len(signs) > 1:
        return None
    order, opt = best
    sign = signs.pop()
    names = {}
    seen: set[str] = set()
    out = []
    for i, (_sg, newmap) in zip(order, opt):
        new = []
        for p_old in newmap:
            s = slots[i][p_old]
            if (i, p_old) in partner:
                if s.label not in names:
                    names[s.label] = f"_{len(names)}"
                first = s.label not in seen
                seen.add(s.label)
                new.append(IndexSlot(s.space, names[s.label], first))
            else:
                new.append(s)
        out.append(fs[i].with_slots(new))
    return sign, mult, tuple(out)


def free_slots(factors: Iterable[Factor]) -> tuple[IndexSlot, ...]:
    count: dict[str, list[IndexSlot]] = defaultdict(list)
    for f in factors:
        for s in f.slots:
            count[s.label].append(s)
    return tuple(sorted(v[0] for v in count.values() if len(v) == 1))


# ------------------------------------------------------------ expressions

Number = (int, Fraction)
RawTerm = tuple  # (Fraction, syms, factors)


class TensorExpr:
    """A canonical sum of monomials with exact rational coefficients."""

    __slots__ = ("terms", "_free")

    def __init__(self, terms: Mapping[tuple, Fraction] | None = None):
        self.terms: dict[tuple, Fraction] = dict(terms or {})
        self._free = None

    # construction ---------------------------------------------------
    @classmethod
    def from_raw(cls, raw: Iterable[RawTerm]) -> "TensorExpr":
        acc: dict[tuple, Fraction] = {}
        for c, syms, factors in raw:
            if not c:
                continue
            sgn, syms = _collect(syms)
            res = _canonical_factors(tuple(factors))
            if res is None:
                continue
            sign, mult, fs = res
            key = (syms, fs)
            v = acc.get(key, 0) + Fraction(c) * sgn * sign * mult
            if v:
                acc[key] = v
            else:
                acc.pop(key, None)
        out = cls(acc)
        out.free_indices()
        return out

    @classmethod
    def scalar(cls, value=1, syms: Iterable[tuple[str, int]] = ()) -> "TensorExpr":
        return cls.from_raw([(Fraction(value), tuple(syms), ())])

    @classmethod
    def zero(cls) -> "TensorExpr":
        return cls({})

    def raw(self) -> list[RawTerm]:
        return [(c, syms, fs) for (syms, fs), c in self.terms.items()]

    # inspection -----------------------------------------------------
    def free_indices(self) -> tuple[IndexSlot, ...]:
        if self._free is None:
            sig = None
            for (_syms, fs) in self.terms:
                f = free_slots(fs)
                if sig is None:
                    sig = f
                elif f != sig:
                    raise MalformedExpressionError(
                        f"free indices differ between terms: {[s.token() for s in sig]} vs "
                        f"{[s.token() for s in f]}")
            self._free = sig or ()
        return self._free

    def is_zero(self) -> bool:
        return not self.terms

    def __len__(self):
        return len(self.terms)

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: _term_sort_key(kv[0]))

    def coefficient(self, other: "TensorExpr") -> Fraction:
        """Coefficient of the single monomial ``other`` in self."""
        if len(other.terms) != 1:
            raise MalformedExpressionError("coefficient() needs a single monomial")
        (key, c), = other.terms.items()
        return self.terms.get(key, Fraction(0)) / c

    # arithmetic -----------------------------------------------------
    def __add__(self, other):
        other = _as_expr(other)
        acc = dict(self.terms)
        for k, v in other.terms.items():
            s = acc.get(k, 0) + v
            if s:
                acc[k] = s
            else:
                acc.pop(k, None)
        out = TensorExpr(acc)
        if self.terms and other.terms:
            out.free_indices()
        return out

    __radd__ = __add__

    def __neg__(self):
        return TensorExpr({k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-_as_expr(other))

    def __rsub__(self, other):
        return _as_expr(other) - self

    def __mul__(self, other):
        if isinstance(other, Number):
            if not other:
                return TensorExpr()
            return TensorExpr({k: v * other for k, v in self.terms.items()})
        other = _as_expr(other)
        return TensorExpr.from_raw(_product_raw([_renamed_dummies(self.raw()),
                                                 _renamed_dummies(other.raw())]))

    def __rmul__(self, other):
        if isinstance(other, Number):
            return self * other
        return _as_expr(other) * self

    def __truediv__(self, other):
        if isinstance(other, Number):
            return self * (1 / Fraction(other))
        raise TypeError("can only divide by a rational number")

    def __pow__(self, n: int):
        out = TensorExpr.scalar(1)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other):
        if isinstance(other, Number):
            other = TensorExpr.scalar(other) if other else TensorExpr()
        if not isinstance(other, TensorExpr):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __repr__(self):
        return f"TensorExpr({self})"

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for (syms, fs), c in self.sorted_terms():
            bits = [str(c)] + [k if e == 1 else f"{k}^{e}" for k, e in syms] + [str(f) for f in fs]
            parts.append("*".join(bits))
        return " + ".join(parts)


def _term_sort_key(key):
    syms, fs = key
    return (len(fs), syms, fs)


def _as_expr(x) -> TensorExpr:
    if isinstance(x, TensorExpr):
        return x
    if isinstance(x, Number):
        return TensorExpr.scalar(x) if x else TensorExpr()
    raise TypeError(f"cannot use {type(x).__name__} as a tensor expression")


def _dummy_labels(fs: Sequence[Factor]) -> set[str]:
    seen: dict[str, int] = defaultdict(int)
    for f in fs:
        for s in f.slots:
            seen[s.label] += 1
    return {k for k, v in seen.items() if v == 2}


def _relabel(fs: Sequence[Factor], mapping: Mapping[str, str], flip: Mapping[str, bool] | None = None):
    out = []
    for f in fs:
        new = []
        for s in f.slots:
            if s.label in mapping:
                up = flip[s.label] if flip and s.label in flip else s.up
                s = IndexSlot(s.space, mapping[s.label], up)
            new.append(s)
        out.append(f.with_slots(new))
    return tuple(out)


def _renamed_dummies(raw: list[RawTerm]) -> list[RawTerm]:
    out = []
    for c, syms, fs in raw:
        d = _dummy_labels(fs)
        if d:
            fs = _relabel(fs, {lab: fresh_label() for lab in sorted(d)})
        out.append((c, syms, fs))
    return out


def _product_raw(pieces: Sequence[list[RawTerm]]) -> list[RawTerm]:
    out = []
    for combo in itertools.product(*pieces):
        c = Fraction(1)
        syms: tuple = ()
        fs: tuple = ()
        for ci, si, fi in combo:
            c *= ci
            syms = syms + tuple(si)
            fs = fs + tuple(fi)
        out.append((c, syms, fs))
    return out


# --------------------------------------------------------- constructors


def field(name: str, *indices: str | IndexSlot, d: Iterable[str | IndexSlot] = (), tag: str = "") -> TensorExpr:
    """Single-factor expression, e.g. ``field("A", "s_mu", "i^alpha", d=["s_nu"])``."""
    f = Factor(name, tuple(ix(i) for i in indices), tuple(ix(x) for x in d), str(tag))
    return TensorExpr.from_raw([(Fraction(1), (), (f,))])


def metric(a: str | IndexSlot, b: str | IndexSlot) -> TensorExpr:
    return field("eta", a, b)


def const(name: str, power: int = 1) -> TensorExpr:
    if name not in CONSTANTS:
        raise MalformedExpressionError(f"unknown constant {name!r}")
    return TensorExpr.scalar(1, ((name, power),))


def rational(value) -> TensorExpr:
    return TensorExpr.scalar(Fraction(value))


IM = TensorExpr.scalar(1, (("I", 1),))


def momentum(name: str, leg, index: str | IndexSlot) -> TensorExpr:
    return field(name, index, tag=str(leg))


def inverse_square(name: str, leg) -> TensorExpr:
    return field("invsq", tag=f"{name}|{leg}")


def trace_word(letters: Sequence[tuple], space_label: str = "a") -> TensorExpr:
    """Trace of a product of matrix-valued letters.

    Each letter is ``(name, spacetime_or_inner_indices, derivs)``; the matrix
    row and column slots are chained with fresh block labels so that the
    result is the trace ``tr(X1 X2 ... Xn)``.
    """
    n = len(letters)
    labs = [f"{space_label}{k}" for k in range(n)]
    factors = []
    for k, letter in enumerate(letters):
        name, idx, der = (tuple(letter) + ((), ()))[:3]
        row = IndexSlot(GAUGE, labs[k], True)
        col = IndexSlot(GAUGE, labs[(k + 1) % n], False)
        factors.append(Factor(name, tuple(ix(i) for i in idx) + (row, col), tuple(ix(x) for x in der)))
    return TensorExpr.from_raw([(Fraction(1), (), tuple(factors))])


# ------------------------------------------------------------ operations


def contract(expr: TensorExpr, a: str | IndexSlot, b: str | IndexSlot) -> TensorExpr:
    """Contract two free slots of ``expr`` into a dummy pair."""
    a, b = ix(a), ix(b)
    free = set(expr.free_indices())
    for s in (a, b):
        if s not in free:
            raise MalformedExpressionError(f"{s.token()} is not a free index of the expression")
    if a.space != b.space:
        raise IndexSpaceError(f"cannot contract {a.space} with {b.space}")
    if a.space in METRIC_SPACES and a.up == b.up:
        raise VarianceError(f"cannot contract two {a.variance} indices")
    out = []
    for c, syms, fs in expr.raw():
        lab = fresh_label()
        out.append((c, syms, _relabel(fs, {a.label: lab, b.label: lab})))
    return TensorExpr.from_raw(out)


def _leibniz_raw(raw: list[RawTerm], d: IndexSlot) -> list[RawTerm]:
    out = []
    for c, syms, fs in raw:
        for k, f in enumerate(fs):
            if f.symbol.constant:
                continue
            nf = Factor(f.name, f.indices, f.derivs + (d,), f.tag)
            out.append((c, syms, fs[:k] + (nf,) + fs[k + 1:]))
    return out


def leibniz_derivative(expr: TensorExpr, d: str | IndexSlot) -> TensorExpr:
    """Apply one flat derivative (spacetime or inner) by the product rule."""
    d = ix(d)
    if d.space not in DERIV_SPACES:
        raise IndexSpaceError("derivatives carry spacetime or inner indices only")
    return TensorExpr.from_raw(_leibniz_raw(_renamed_dummies(expr.raw()), d))


def _pattern_factor(pattern) -> Factor:
    if isinstance(pattern, Factor):
        f = pattern
    elif isinstance(pattern, TensorExpr):
        if len(pattern.terms) != 1:
            raise SubstitutionError("pattern must be a single factor")
        (key, c), = pattern.terms.items()
        syms, fs = key
        if c != 1 or syms or len(fs) != 1:
            raise SubstitutionError("pattern must be a bare factor")
        f = fs[0]
        if _dummy_labels([f]):
            raise SubstitutionError("pattern must not contain contracted slots")
        # canonical form keeps user labels for free slots
    else:
        raise SubstitutionError("pattern must be a Factor or single-factor expression")
    if f.derivs:
        raise SubstitutionError("pattern must not carry derivatives")
    return f


def substitute(expr: TensorExpr, pattern, replacement: TensorExpr) -> TensorExpr:
    """Replace every occurrence of a symbol by an expression, capture-free.

    Occurrences carrying derivatives receive the derivatives of the
    replacement through the product rule.  The replacement's free indices must
    match the pattern's slots exactly.
    """
    pat = _pattern_factor(pattern)
    replacement = _as_expr(replacement)
    want = sorted(pat.indices)
    if replacement.terms and sorted(replacement.free_indices()) != want:
        raise SubstitutionError(
            f"replacement free indices {[s.token() for s in replacement.free_indices()]} do not match "
            f"pattern slots {[s.token() for s in pat.indices]}")
    rep_raw = replacement.raw()
    out: list[RawTerm] = []
    for c, syms, fs in expr.raw():
        pieces = []
        for f in fs:
            if f.name != pat.name or f.tag != pat.tag:
                pieces.append([(Fraction(1), (), (f,))])
                continue
            mapping = {p.label: o.label for p, o in zip(pat.indices, f.indices)}
            flip = {p.label: o.up for p, o in zip(pat.indices, f.indices)}
            # fresh dummies first, then the free-slot relabelling
            r = [(rc, rs, _relabel(rf, mapping, flip)) for rc, rs, rf in _renamed_dummies(rep_raw)]
            for d in f.derivs:
                r = _leibniz_raw(r, d)
            pieces.append(r)
        out.extend((c * pc, tuple(syms) + tuple(ps), pf) for pc, ps, pf in _product_raw(pieces))
    return TensorExpr.from_raw(out)


def _gamma_loop_trace(idx: list[IndexSlot]) -> list[tuple[int, list[tuple[IndexSlot, IndexSlot]]]]:
    """Trace of a product of gamma matrices as signed lists of metric pairings."""
    if not idx:
        return [(4, [])]
    if len(idx) % 2:
        return []
    out = []
    first = idx[0]
    for k in range(1, len(idx)):
        sign = -1 if (k - 1) % 2 else 1
        rest = idx[1:k] + idx[k + 1:]
        for c, pairs in _gamma_loop_trace(rest):
            out.append((sign * c, [(first, idx[k])] + pairs))
    return out


def gamma_trace(expr: TensorExpr) -> TensorExpr:
    """Evaluate closed spinor loops of gamma matrices with the d=4 trace rules."""
    out: list[RawTerm] = []
    for c, syms, fs in expr.raw():
        gam = [f for f in fs if f.name == "gamma"]
        rest = [f for f in fs if f.name != "gamma"]
        for f in rest:
            if any(s.space == SPINOR for s in f.indices):
                raise MalformedExpressionError(f"{f.name} carries spinor slots; only gamma chains are traced")
        if not gam:
            out.append((c, syms, fs))
            continue
        rows = {}
        for g in gam:
            r = g.indices[1].label
            if r in rows:
                raise MalformedExpressionError("spinor row label used twice")
            rows[r] = g
        cols = [g.indices[2].label for g in gam]
        for lab in cols:
            if lab not in rows:
                raise OpenSpinorLineError(f"spinor line ending in {lab!r} is not closed")
        remaining = list(gam)
        loops = []
        while remaining:
            start = remaining[0]
            loop = [start]
            cur = start
            while True:
                nxt = rows[cur.indices[2].label]
                if nxt is start:
                    break
                loop.append(nxt)
                cur = nxt
            for g in loop:
                remaining.remove(g)
            loops.append([g.indices[0] for g in loop])
        terms = [(Fraction(c), [])]
        for lp in loops:
            tr = _gamma_loop_trace(lp)
            terms = [(tc * lc, tp + lpairs) for tc, tp in terms for lc, lpairs in tr]
        for tc, pairs in terms:
            etas = tuple(Factor("eta", (a, b)) for a, b in pairs)
            out.append((tc, syms, tuple(rest) + etas))
    return TensorExpr.from_raw(out)


def cyclic_canonicalize(expr: TensorExpr, space: str = GAUGE) -> TensorExpr:
    """Rotate each closed matrix chain to its least rotation.

    The chain representation already identifies rotated traces, so this
    returns an equal expression; it exists to build traces from explicit
    words and as an executable statement of cyclicity.
    """
    out = []
    for c, syms, fs in expr.raw():
        words = matrix_loops(fs, space)
        inloop = {id(f) for w in words for f in w}
        others = tuple(f for f in fs if id(f) not in inloop)
        sign = 1
        rebuilt: list[Factor] = []
        for w in words:
            best = None
            for r in range(len(w)):
                rot = w[r:] + w[:r]
                key = tuple((f.name, f.tag, tuple(s.space for s in f.indices)) for f in rot)
                if best is None or key < best[0]:
                    best = (key, r)
            r = best[1]
            odd_moved = sum(1 for f in w[:r] if f.symbol.odd)
            odd_rest = sum(1 for f in w[r:] if f.symbol.odd)
            if odd_moved % 2 and odd_rest % 2:
                sign = -sign
            rebuilt.extend(w[r:] + w[:r])
        out.append((c * sign, syms, others + tuple(rebuilt)))
    return TensorExpr.from_raw(out)


def matrix_loops(fs: Sequence[Factor], space: str = GAUGE) -> list[list[Factor]]:
    """Closed chains of factors whose last two slots are a (row, column) pair in ``space``."""
    mats = [f for f in fs if len(f.indices) >= 2 and f.indices[-1].space == space and f.indices[-2].space == space]
    rows = {f.indices[-2].label: f for f in mats}
    seen: set[int] = set()
    loops = []
    for f in mats:
        if id(f) in seen:
            continue
        loop = []
        cur = f
        while id(cur) not in seen:
            seen.add(id(cur))
            loop.append(cur)
            nxt = rows.get(cur.indices[-1].label)
            if nxt is None:
                raise MalformedExpressionError("open matrix chain")
            cur = nxt
        loops.append(loop)
    return loops


# --------------------------------------------------------- serialisation


def _ser_factor(f: Factor) -> str:
    head = f.name + (f"#{f.tag}" if f.tag else "")
    parts = [head] + [s.token() for s in f.indices]
    if f.derivs:
        parts.append("(d " + " ".join(s.token() for s in f.derivs) + ")")
    return "(" + " ".join(parts) + ")"


def serialize(expr: TensorExpr) -> str:
    """Deterministic prefix-notation text form; ``parse`` inverts it exactly."""
    terms = []
    for (syms, fs), c in expr.sorted_terms():
        bits = [str(c)] + [f"(^ {k} {e})" for k, e in syms] + [_ser_factor(f) for f in fs]
        terms.append("(* " + " ".join(bits) + ")")
    return "(+" + "".join(" " + t for t in terms) + ")"


def _tokenize(text: str) -> list[str]:
    return re.findall(r"\(|\)|[^\s()]+", text)


def _read(tokens: list[str], pos: int):
    if tokens[pos] != "(":
        return tokens[pos], pos + 1
    out = []
    pos += 1
    while pos < len(tokens) and tokens[pos] != ")":
        item, pos = _read(tokens, pos)
        out.append(item)
    if pos >= len(tokens):
        raise MalformedExpressionError("unbalanced parentheses")
    return out, pos + 1


def parse(text: str) -> TensorExpr:
    tokens = _tokenize(text)
    if not tokens:
        raise MalformedExpressionError("empty expression text")
    tree, pos = _read(tokens, 0)
    if pos != len(tokens) or not isinstance(tree, list) or not tree or tree[0] != "+":
        raise MalformedExpressionError("expression must be one (+ ...) form")
    raw = []
    for term in tree[1:]:
        if not isinstance(term, list) or len(term) < 2 or term[0] != "*":
            raise MalformedExpressionError(f"bad term {term!r}")
        c = Fraction(term[1])
        syms = []
        fs = []
        for item in term[2:]:
            if not isinstance(item, list) or not item:
                raise MalformedExpressionError(f"bad term item {item!r}")
            if item[0] == "^":
                syms.append((item[1], int(item[2])))
                continue
            name, _, tag = item[0].partition("#")
            idx, der = [], []
            for x in item[1:]:
                if isinstance(x, list):
                    if not x or x[0] != "d":
                        raise MalformedExpressionError(f"bad derivative group {x!r}")
                    der.extend(ix(t) for t in x[1:])
                else:
                    idx.append(ix(x))
            fs.append(Factor(name, tuple(idx), tuple(der), tag))
        raw.append((c, tuple(syms), tuple(fs)))
    return TensorExpr.from_raw(raw)


# ------------------------------------------------------- numeric evaluation

ETA_DIAG = (-1.0, 1.0, 1.0, 1.0)


def evaluate(expr: TensorExpr, provider: Callable[[Factor], "object"],
             constants: Mapping[str, complex] | None = None, batch: int = 0):
    """Evaluate an expression numerically by explicit index sums.

    ``provider(factor)`` returns the component array of a factor with axes in
    slot order (indices, then derivatives) and every metric slot lowered.
    Upper slots are raised here with the diagonal metric (-,+,+,+).  The
    result has one axis per free slot, in the order of ``free_indices()``.
    With ``batch`` > 0 every array carries that many trailing axes (e.g. grid
    points) which are kept in the result.
    """
    import numpy as np

    consts = {"I": 1j}
    consts.update(constants or {})
    eta = np.array(ETA_DIAG)
    free = expr.free_indices()
    total = None
    for (syms, fs), c in expr.terms.items():
        val = complex(c.numerator / c.denominator)
        for k, e in syms:
            if k not in consts:
                raise MalformedExpressionError(f"no numeric value for constant {k!r}")
            val *= consts[k] ** e
        labels: dict[str, int] = {}
        ops = []
        for f in fs:
            arr = np.asarray(provider(f))
            if arr.ndim != len(f.slots) + batch:
                raise MalformedExpressionError(f"provider gave {arr.ndim} axes for {f}")
            for ax, s in enumerate(f.slots):
                if s.up and s.space in METRIC_SPACES:
                    shape = [1] * arr.ndim
                    shape[ax] = 4
                    arr = arr * eta.reshape(shape)
            sub = [labels.setdefault(s.label, len(labels)) for s in f.slots]
            ops += [arr, sub + [Ellipsis] if batch else sub]
        out_sub = [labels.setdefault(s.label, len(labels)) for s in free]
        if batch:
            out_sub = out_sub + [Ellipsis]
        term = np.einsum(*ops, out_sub, optimize=True) if ops else np.array(1.0)
        term = val * term
        total = term if total is None else total + term
    if total is None:
        return 0.0
    return total


# ----------------------------------------------- total-derivative reduction


def derivative_count(fs: Sequence[Factor], spaces: Iterable[str] = DERIV_SPACES) -> int:
    sp = set(spaces)
    return sum(1 for f in fs for d in f.derivs if d.space in sp)


class TotalDerivativeReducer:
    """Exact reduction of local integrands modulo total derivatives.

    For every monomial the reducer forms all antiderivative candidates (one
    derivative stripped from one factor) and records the product-rule
    expansion of their divergence as a linear relation.  The closure of these
    relations is row-reduced over the rationals, giving a unique normal form
    for integrands with fixed field content.  ``vanishing`` marks monomials
    that are zero by a field constraint (e.g. a divergence-free inner field).
    """

    def __init__(self, spaces: Iterable[str] = (SPACETIME,),
                 vanishing: Callable[[tuple[Factor, ...]], bool] | None = None,
                 max_monomials: int = 200000):
        self.spaces = tuple(spaces)
        self.vanishing = vanishing or (lambda fs: False)
        self.max_monomials = max_monomials

    def _relations(self, fs: tuple[Factor, ...]):
        for k, f in enumerate(fs):
            seen = set()
            for j, d in enumerate(f.derivs):
                if d.space not in self.spaces or d in seen:
                    continue
                seen.add(d)
                g = Factor(f.name, f.indices, f.derivs[:j] + f.derivs[j + 1:], f.tag)
                w = fs[:k] + (g,) + fs[k + 1:]
                # the stripped slot becomes a free slot of W: keep its label
                yield TensorExpr.from_raw(_leibniz_raw([(Fraction(1), (), w)], d))

    def _clean(self, rel: TensorExpr) -> dict:
        out = {}
        for (syms, fs), c in rel.terms.items():
            if self.vanishing(fs):
                continue
            out[fs] = out.get(fs, 0) + c
        return {k: v for k, v in out.items() if v}

    def _closure(self, start: Iterable[tuple[Factor, ...]]):
        queue = [m for m in start]
        seen = set(queue)
        rels = []
        rel_keys = set()
        while queue:
            m = queue.pop()
            for rel in self._relations(m):
                r = self._clean(rel)
                if not r:
                    continue
                key = frozenset(r.items())
                if key in rel_keys:
                    continue
                rel_keys.add(key)
                rels.append(r)
                for x in r:
                    if x not in seen:
                        seen.add(x)
                        queue.append(x)
                        if len(seen) > self.max_monomials:
                            raise MalformedExpressionError("total-derivative closure too large")
        return rels, seen

    def _echelon(self, rels, rank):
        piv: dict = {}

        def reduce(vec):
            vec = dict(vec)
            while True:
                cands = [m for m in vec if m in piv]
                if not cands:
                    return vec
                p = max(cands, key=rank)
                c = vec.pop(p)
                for m, v in piv[p].items():
                    if m == p:
                        continue
                    nv = vec.get(m, 0) - c * v
                    if nv:
                        vec[m] = nv
                    else:
                        vec.pop(m, None)

        for r in sorted(rels, key=lambda r: max(rank(m) for m in r)):
            r = reduce(r)
            if not r:
                continue
            p = max(r, key=rank)
            c = r[p]
            piv[p] = {m: v / c for m, v in r.items()}
        return reduce

    @staticmethod
    def _default_rank(fs):
        return (max((len(f.derivs) for f in fs), default=0), tuple(len(f.derivs) for f in fs), fs)

    def normal_forms(self, exprs: Sequence[TensorExpr], preferred: Iterable[TensorExpr] = ()):
        """Normal forms of several expressions w.r.t. one common relation set."""
        pref = set()
        for p in preferred:
            for (_s, fs) in p.terms:
                pref.add(fs)

        def rank(fs):
            return (fs not in pref,) + self._default_rank(fs)

        start = set()
        for e in list(exprs) + list(preferred):
            for (_s, fs) in e.terms:
                if not self.vanishing(fs):
                    start.add(fs)
        rels, _ = self._closure(start)
        reduce = self._echelon(rels, rank)
        out = []
        for e in exprs:
            groups: dict = defaultdict(dict)
            for (syms, fs), c in e.terms.items():
                if self.vanishing(fs):
                    continue
                groups[syms][fs] = groups[syms].get(fs, 0) + c
            acc = {}
            for syms, vec in groups.items():
                for fs, c in reduce({k: v for k, v in vec.items() if v}).items():
                    acc[(syms, fs)] = c
            out.append(TensorExpr(acc))
        return out

    def reduce(self, expr: TensorExpr, preferred: Iterable[TensorExpr] = ()) -> TensorExpr:
        return self.normal_forms([expr], preferred)[0]

    def is_total_derivative(self, expr: TensorExpr) -> bool:
        return self.reduce(expr).is_zero()

    def equivalent(self, a: TensorExpr, b: TensorExpr) -> bool:
        return self.reduce(a - b).is_zero()

    def express_in(self, expr: TensorExpr, basis: Sequence[TensorExpr]):
        """Solve ``expr = sum c_i basis_i`` modulo total derivatives.

        Returns (coefficients, residual); the residual is the normal form of
        ``expr - sum c_i basis_i`` and is zero when the basis suffices.
        Coefficients may carry constant symbols: they are returned as
        TensorExpr scalars.
        """
        nfs = self.normal_forms([expr] + list(basis), preferred=basis)
        target, bnf = nfs[0], nfs[1:]
        # split the target by constant-symbol content
        sym_groups: dict = defaultdict(dict)
        for (syms, fs), c in target.terms.items():
            sym_groups[syms][fs] = c
        bvecs = []
        for b in bnf:
            v = {}
            for (syms, fs), c in b.terms.items():
                if syms:
                    raise MalformedExpressionError("basis elements must have rational coefficients")
                v[fs] = c
            bvecs.append(v)
        coeffs = [TensorExpr() for _ in basis]
        residual = TensorExpr()
        for syms, vec in sym_groups.items():
            sol, res = _solve_linear(bvecs, vec)
            for i, s in enumerate(sol):
                if s:
                    coeffs[i] = coeffs[i] + TensorExpr.scalar(s, syms)
            residual = residual + TensorExpr({(syms, fs): c for fs, c in res.items()})
        return coeffs, residual


def _solve_linear(columns: list[dict], target: dict):
    """Least-structure exact solve of sum x_i columns_i = target; returns (x, residual)."""
    rows = sorted({m for c in columns for m in c} | set(target), key=repr)
    n = len(columns)
    mat = [[columns[j].get(r, Fraction(0)) for j in range(n)] + [target.get(r, Fraction(0))] for r in rows]
    piv_cols = []
    r = 0
    for col in range(n):
        p = next((i for i in range(r, len(mat)) if mat[i][col]), None)
        if p is None:
            continue
        mat[r], mat[p] = mat[p], mat[r]
        pv = mat[r][col]
        mat[r] = [v / pv for v in mat[r]]
        for i in range(len(mat)):
            if i != r and mat[i][col]:
                f = mat[i][col]
                mat[i] = [a - f * b for a, b in zip(mat[i], mat[r])]
        piv_cols.append(col)
        r += 1
    x = [Fraction(0)] * n
    for i, col in enumerate(piv_cols):
        x[col] = mat[i][n]
    res = {}
    for m in target:
        v = target.get(m, 0) - sum(x[j] * columns[j].get(m, 0) for j in range(n))
        if v:
            res[m] = v
    for c in columns:
        for m in c:
            if m not in target:
                v = -sum(x[j] * columns[j].get(m, 0) for j in range(n))
                if v:
                    res[m] = v
    return x, res
