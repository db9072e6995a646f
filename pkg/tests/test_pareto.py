import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aanet.netgraph import LinkGraph, random_graph
from aanet.pareto import (
    ObjectiveVector,
    brute_force_pareto,
    dominates,
    non_dominated,
    pomor,
    read_pareto_csv,
    same_front,
    simple_paths,
    solve_eps_constraint,
    write_pareto_csv,
)


def _diamond():
    # 0-1-3: fast, thin, short-lived; 0-2-3: slower, fat; 0-3: slowest, long-lived
    n = 4
    adj = np.zeros((n, n), bool)
    D, C, L = np.zeros((n, n)), np.zeros((n, n)), np.zeros((n, n))
    for (a, b), (d, c, l) in {
        (0, 1): (1.0, 10.0, 100.0), (1, 3): (1.0, 10.0, 100.0),
        (0, 2): (2.0, 30.0, 100.0), (2, 3): (2.0, 30.0, 100.0),
        (0, 3): (5.0, 20.0, 900.0),
    }.items():
        adj[a, b] = True
        D[a, b], C[a, b], L[a, b] = d, c, l
    return LinkGraph.from_arrays(adj, D, C, L)


def test_hand_front():
    f = pomor(_diamond(), 0, 3)
    got = sorted((p, (v.delay_s, v.capacity_bps, v.lifetime_s)) for p, v in f.solutions)
    assert got == [((0, 1, 3), (2.0, 10.0, 100.0)), ((0, 2, 3), (4.0, 30.0, 100.0)), ((0, 3), (5.0, 20.0, 900.0))]
    assert same_front(f, brute_force_pareto(_diamond(), 0, 3))


def test_dominance():
    a = ObjectiveVector(1.0, 10.0, 10.0)
    assert dominates(a, ObjectiveVector(2.0, 10.0, 10.0))
    assert dominates(a, ObjectiveVector(1.0, 5.0, 10.0))
    assert not dominates(a, a)
    assert not dominates(a, ObjectiveVector(0.5, 5.0, 10.0))
    items = [((0,), a), ((1,), ObjectiveVector(2.0, 5.0, 5.0)), ((2,), ObjectiveVector(0.5, 5.0, 5.0))]
    assert [p for p, _ in non_dominated(items)] == [(2,), (0,)]


def test_trivial_and_unreachable():
    g = _diamond()
    f = pomor(g, 3, 0)
    assert len(f) == 0
    assert list(pomor(g, 2, 2).paths()) == [(2,)]
    assert solve_eps_constraint(g, 0, 3, 31.0, 0.0) is None


def test_eps_constraint_picks_fastest_feasible():
    g = _diamond()
    p, v = solve_eps_constraint(g, 0, 3, 15.0, 0.0)
    assert p == (0, 2, 3)
    p, v = solve_eps_constraint(g, 0, 3, 15.0, 500.0)
    assert p == (0, 3)
    p, _ = solve_eps_constraint(g, 0, 3, 10.0, 100.0, strict=True)
    assert p == (0, 3)


def test_simple_paths_count_complete_graph():
    n = 6
    adj = ~np.eye(n, dtype=bool)
    g = LinkGraph.from_arrays(adj, np.ones((n, n)), np.ones((n, n)), np.ones((n, n)))
    # paths between two fixed nodes of K_n: sum over k of (n-2)!/(n-2-k)!
    want = sum(math.perm(n - 2, k) for k in range(n - 1))
    assert len(list(simple_paths(g, 0, n - 1))) == want


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 8), st.floats(0.3, 0.9))
def test_pomor_properties(seed, n, p):
    g = random_graph(np.random.default_rng(seed), n, p)
    f = pomor(g, 0, n - 1)
    b = brute_force_pareto(g, 0, n - 1)
    assert same_front(f, b)
    union = [v for _, v in f.solutions] + [v for _, v in b.solutions]
    for _, v in f.solutions:
        assert not any(dominates(w, v) for w in union)
    Np = len(f)
    assert f.solver_calls <= (Np + f.outer_iterations) * (Np + 1)
    by_outer = {}
    for it, _, v in f.trace:
        by_outer.setdefault(it, []).append(v)
    for vs in by_outer.values():
        for a, c in zip(vs, vs[1:]):
            assert c.delay_s > a.delay_s and c.capacity_bps > a.capacity_bps


def test_brute_force_guard():
    g = random_graph(np.random.default_rng(0), 13, 0.3)
    with pytest.raises(ValueError):
        brute_force_pareto(g, 0, 12)


def test_csv_roundtrip(tmp_path):
    f = pomor(_diamond(), 0, 3)
    write_pareto_csv(f, tmp_path / "f.csv", ids=["a", "b", "c", "d"])
    rows = read_pareto_csv(tmp_path / "f.csv")
    assert [r[0] for r in rows] == [("a", "b", "d"), ("a", "c", "d"), ("a", "d")]
    for (_, v), w in zip(rows, f.vectors()):
        assert v.delay_s == pytest.approx(w.delay_s)
        assert v.capacity_bps == pytest.approx(w.capacity_bps)
        assert v.lifetime_s == pytest.approx(w.lifetime_s)
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "delay_ms,capacity_mbps,lifetime_min,hop_count,node_ids"
