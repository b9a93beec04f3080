from __future__ import annotations

import itertools

import numpy as np
import pytest

from vpdqft import feynman_rules as fr
from vpdqft.errors import DomainError, MalformedGraphError, MomentumConservationError, OnShellSingularityError
from vpdqft.tensor_core import ETA_DIAG, serialize

ETA = np.diag(ETA_DIAG)


def _conserved(rng, n):
    k = rng.normal(size=(n, 4))
    K = rng.normal(size=(n, 4))
    k[-1] = -k[:-1].sum(axis=0)
    K[-1] = -K[:-1].sum(axis=0)
    return k, K


def _axes(expr, order):
    """Permutation taking evaluate's free-slot order to ``order`` (labels)."""
    labels = [s.label for s in expr.free_indices()]
    return [labels.index(x) for x in order]


# ----------------------------------------------------- componentwise oracles

def tri_oracle(k, K, lam=1.0):
    kl = k @ ETA  # lower spacetime index
    out = np.zeros((4,) * 6)
    for m, a, n, b, r, g in itertools.product(range(4), repeat=6):
        e = lambda x, y: ETA[x, y]  # noqa: E731
        v = K[0][g] * e(a, b) * (kl[1][r] * e(m, n) - kl[1][m] * e(n, r)) \
            + K[1][a] * e(b, g) * (kl[2][m] * e(n, r) - kl[2][n] * e(r, m)) \
            + K[2][b] * e(g, a) * (kl[0][n] * e(r, m) - kl[0][r] * e(m, n))
        out[m, a, n, b, r, g] = -2 * v / lam ** 2
    return out


def quad_oracle(k, K, lam=1.0):
    out = np.zeros((4,) * 8)
    e = ETA
    for m, a, n, b, r, g, s, d in itertools.product(range(4), repeat=8):
        br1 = K[0][g] * K[1][d] * e[a, b] - K[1][d] * K[2][a] * e[b, g] \
            + K[2][a] * K[3][b] * e[g, d] - K[0][g] * K[3][b] * e[a, d]
        br2 = K[0][d] * K[1][g] * e[a, b] - K[0][d] * K[2][b] * e[a, g] \
            + K[2][b] * K[3][a] * e[g, d] - K[1][g] * K[3][a] * e[b, d]
        br3 = K[0][b] * K[2][d] * e[a, g] - K[0][b] * K[3][g] * e[a, d] \
            + K[1][a] * K[3][g] * e[b, d] - K[1][a] * K[2][d] * e[b, g]
        v = br1 * (e[m, n] * e[r, s] - e[m, s] * e[n, r]) \
            + br2 * (e[m, n] * e[r, s] - e[m, r] * e[n, s]) \
            + br3 * (e[m, r] * e[n, s] - e[m, s] * e[n, r])
        out[m, a, n, b, r, g, s, d] = -v / lam ** 2
    return out


def ghost_oracle(k, K, lam=1.0):
    kl = k @ ETA
    out = np.zeros((4,) * 4)
    for g, d, m, a in itertools.product(range(4), repeat=4):
        v = K[1][a] * ETA[g, d] - K[2][d] * ETA[a, g]
        out[g, d, m, a] = -v * kl[0][m] / lam ** 2
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_tri_vertex_componentwise(seed):
    k, K = _conserved(np.random.default_rng(seed), 3)
    expr, val = fr.vertex_numeric("triGauge", k, K, lam=1.3)
    want = tri_oracle(k, K, 1.3)
    got = np.transpose(val, _axes(expr, ["mu", "alpha", "nu", "beta", "rho", "gamma"]))
    assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_quad_vertex_componentwise(seed):
    k, K = _conserved(np.random.default_rng(seed), 4)
    expr, val = fr.vertex_numeric("quadGauge", k, K)
    want = quad_oracle(k, K)
    got = np.transpose(val, _axes(expr, ["mu", "alpha", "nu", "beta", "rho", "gamma", "sigma", "delta"]))
    assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


def test_ghost_vertex_componentwise():
    k, K = _conserved(np.random.default_rng(5), 3)
    expr, val = fr.vertex_numeric("ghostGauge", k, K)
    got = np.transpose(val, _axes(expr, ["gamma", "delta", "mu", "alpha"]))
    assert np.allclose(got, ghost_oracle(k, K), rtol=1e-12, atol=1e-12)


def test_propagators_are_inner_transverse():
    K = fr._mom("K", "1", "i^alpha")
    assert (fr.gauge_propagator("1") * K).is_zero()
    assert (fr.gauge_propagator("1", xi=None) * K).is_zero()
    assert (fr.ghost_propagator("1") * fr._mom("K", "1", "i^delta")).is_zero()


def test_propagator_numeric():
    rng = np.random.default_rng(8)
    k = {"1": rng.normal(size=4)}
    K = {"1": rng.normal(size=4)}
    expr = fr.gauge_propagator("1", xi=3)
    val = fr.evaluate_numeric(expr, k, K)
    kl = ETA @ k["1"]
    Kl = ETA @ K["1"]
    k2 = kl @ k["1"]
    K2 = Kl @ K["1"]
    want = np.einsum("mn,ab->manb", ETA - (1 - 3) * np.outer(kl, kl) / k2, ETA - np.outer(Kl, Kl) / K2) / k2
    got = np.transpose(val, _axes(expr, ["mu", "alpha", "nu", "beta"]))
    assert np.allclose(got, want, rtol=1e-12)


def test_on_shell_singularity():
    k = {"1": np.array([1.0, 1.0, 0, 0])}
    K = {"1": np.array([0.0, 1.0, 0, 0])}
    with pytest.raises(OnShellSingularityError):
        fr.evaluate_numeric(fr.ghost_propagator("1"), k, K)


def _rot(seq, r):
    return tuple(seq[r:]) + tuple(seq[:r])


def test_cyclic_relabeling():
    legs3 = (("mu", "alpha"), ("nu", "beta"), ("rho", "gamma"))
    base = fr.three_gauge_vertex(legs3, ("1", "2", "3"))
    for r in range(3):
        assert fr.three_gauge_vertex(_rot(legs3, r), _rot(("1", "2", "3"), r)) == base
    legs4 = (("mu", "alpha"), ("nu", "beta"), ("rho", "gamma"), ("sigma", "delta"))
    base4 = fr.four_gauge_vertex(legs4, ("1", "2", "3", "4"))
    for r in range(4):
        assert fr.four_gauge_vertex(_rot(legs4, r), _rot(("1", "2", "3", "4"), r)) == base4


def test_vertices_vanish_at_zero_inner_momenta():
    rng = np.random.default_rng(3)
    for kind, n in (("triGauge", 3), ("quadGauge", 4), ("ghostGauge", 3)):
        k, _ = _conserved(rng, n)
        _, val = fr.vertex_numeric(kind, k, np.zeros((n, 4)))
        assert np.max(np.abs(val)) == 0.0
    # symbolically every term carries an inner momentum
    for expr in (fr.three_gauge_vertex(), fr.four_gauge_vertex(), fr.ghost_gauge_vertex()):
        for (_, fs), _ in expr.terms.items():
            assert any(f.name == "K" for f in fs)


@pytest.mark.parametrize("kind,n", [("triGauge", 3), ("quadGauge", 4), ("ghostGauge", 3)])
def test_conservation_guard(kind, n):
    rng = np.random.default_rng(11)
    k, K = _conserved(rng, n)
    bad = K.copy()
    bad[0] += 0.1
    with pytest.raises(MomentumConservationError):
        fr.vertex_numeric(kind, k, bad)
    badk = k.copy()
    badk[1] += 1e-3
    with pytest.raises(MomentumConservationError):
        fr.vertex_numeric(kind, badk, K)


def test_conservation_tolerance_accepts_roundoff():
    k = np.array([[1.0, 2.0, 3.0, 4.0], [-1.0, -2.0, -3.0, -4.0 + 1e-12]])
    fr.check_conservation(k)


def test_power_counting():
    assert {k: fr.vertex_divergence_index(k) for k in fr.VERTEX_KINDS} == \
        {"triGauge": 0, "quadGauge": 0, "ghostGauge": 0}
    assert [fr.superficial_degree(b) for b in range(9)] == [4, 3, 2, 1, 0, -1, -2, -3, -4]
    with pytest.raises(DomainError):
        fr.superficial_degree(-1)


def test_vertex_numeric_domain():
    with pytest.raises(DomainError):
        fr.vertex_numeric("pentaGauge", np.zeros((5, 4)), np.zeros((5, 4)))
    with pytest.raises(MalformedGraphError):
        fr.vertex_numeric("triGauge", np.zeros((2, 4)), np.zeros((2, 4)))


def test_tree_assembly():
    graph = {
        "vertices": [{"kind": "triGauge", "lines": ["a", "b", "x"]},
                     {"kind": "triGauge", "lines": ["x", "c", "d"]}],
        "lines": {"a": {"momentum": "1"}, "b": {"momentum": "2"}, "x": {"momentum": "5"},
                  "c": {"momentum": "3"}, "d": {"momentum": "4"}},
    }
    amp = fr.assemble_amplitude(graph)
    assert not amp.is_zero()
    free = {s.token() for s in amp.free_indices()}
    assert {"s_ma", "i^aa", "s_md", "i^ad"} <= free
    with pytest.raises(MalformedGraphError):
        fr.assemble_amplitude({"vertices": [{"kind": "triGauge", "lines": ["a", "b"]}],
                               "lines": {"a": {"momentum": "1"}, "b": {"momentum": "2"}}})
    with pytest.raises(MalformedGraphError):
        fr.assemble_amplitude({"vertices": [{"kind": "triGauge", "lines": ["a", "b", "q"]}],
                               "lines": {"a": {"momentum": "1"}, "b": {"momentum": "2"}}})


def test_tree_assembly_checks_momenta():
    graph = {
        "vertices": [{"kind": "ghostGauge", "lines": ["o", "i", "g"]}],
        "lines": {"o": {"species": "ghost", "momentum": "1"}, "i": {"species": "ghost", "momentum": "2"},
                  "g": {"momentum": "3"}},
        "momenta": {"1": {"k": [1, 0, 0, 0], "K": [0, 1, 0, 0]},
                    "2": {"k": [0, 1, 0, 0], "K": [0, 0, 1, 0]},
                    "3": {"k": [-1, -1, 0, 0], "K": [0, -1, -1, 1]}},
    }
    with pytest.raises(MomentumConservationError):
        fr.assemble_amplitude(graph)
    graph["momenta"]["3"]["K"] = [0, -1, -1, 0]
    amp = fr.assemble_amplitude(graph)
    assert serialize(amp) == serialize(fr.ghost_gauge_vertex("ao", "ai", ("mg", "ag"), ("1", "2", "3")))
