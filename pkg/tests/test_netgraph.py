import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aanet.flightdata import NodeState, Snapshot
from aanet.geo import GeoPos
from aanet.linkmodel import QueueModel, RadioParams, link_delay
from aanet.netgraph import (
    GraphError,
    InvalidPathError,
    LinkGraph,
    build_graph,
    dijkstra_all,
    dijkstra_min_delay,
    extract_path,
    floyd_warshall_constrained,
    neighbors_ranked,
    path_metrics,
    random_graph,
    with_queue,
)

KU = RadioParams.preset()


def _snap():
    return Snapshot(0.0, (
        NodeState("A", GeoPos(50.0, -20.0, 10.0)),
        NodeState("B", GeoPos(50.0, -22.0, 11.0)),
        NodeState("C", GeoPos(50.0, -30.0, 10.0)),
        NodeState("GS", GeoPos(52.0, -10.5, 0.0)),
    ))


def test_build_graph_links():
    q = np.array([0.001, 0.002, 0.003, 0.004])
    g = build_graph(_snap(), q, KU)
    # A-B ~143 km, B-C ~570 km (both within range of 10-11 km aircraft), A-C ~713 km (range 714)
    assert g.adj[0, 1] and g.adj[1, 0] and g.adj[1, 2]
    n = {s.id: s for s in _snap().nodes}
    assert g.delay[0, 1] == pytest.approx(link_delay(n["A"], n["B"], 0.001, KU), rel=1e-12)
    assert g.delay[1, 0] == pytest.approx(link_delay(n["B"], n["A"], 0.002, KU), rel=1e-12)
    assert g.capacity[0, 1] == g.capacity[1, 0]
    assert not g.adj.diagonal().any()
    assert np.all(np.isinf(g.lifetime[g.adj]))  # not computed without a scenario
    with pytest.raises(GraphError):
        build_graph(_snap(), np.zeros(3), KU)
    with pytest.raises(GraphError):
        g.index("nope")


def test_with_queue_moves_tail_delay():
    g = build_graph(_snap(), QueueModel.training(), KU)
    h = with_queue(g, np.array([0.0, 0.02, 0.0, 0.0]))
    assert h.delay[1, 0] - g.delay[1, 0] == pytest.approx(0.01)
    assert h.delay[0, 1] - g.delay[0, 1] == pytest.approx(-0.01)
    assert np.array_equal(np.isinf(h.delay), ~h.adj)


def _nx(g):
    G = nx.DiGraph()
    G.add_nodes_from(range(g.n))
    for i, j in zip(*np.nonzero(g.adj)):
        G.add_edge(int(i), int(j), weight=float(g.delay[i, j]))
    return G


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 25), st.floats(0.05, 0.7))
def test_shortest_paths_match_networkx(seed, n, p):
    g = random_graph(np.random.default_rng(seed), n, p, symmetric=seed % 2 == 0)
    G = _nx(g)
    fw = floyd_warshall_constrained(g)
    for s in range(n):
        ref = nx.single_source_dijkstra_path_length(G, s)
        dj = dijkstra_all(g, s)
        for t in range(n):
            if t in ref:
                assert dj[t] == pytest.approx(ref[t], rel=1e-9)
                assert fw.dist[s, t] == pytest.approx(ref[t], rel=1e-9)
                path = extract_path(fw, s, t)
                assert path[0] == s and path[-1] == t and len(set(path)) == len(path)
                assert path_metrics(g, path).delay_s == pytest.approx(ref[t], rel=1e-9)
                dp = dijkstra_min_delay(g, s, t)
                assert path_metrics(g, dp).delay_s == pytest.approx(ref[t], rel=1e-9)
            else:
                assert np.isinf(dj[t]) and np.isinf(fw.dist[s, t])
                assert extract_path(fw, s, t) is None and dijkstra_min_delay(g, s, t) is None


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 60e6), st.floats(0, 1800), st.floats(0, 20e6), st.floats(0, 600))
def test_constraints_are_monotone(seed, ec, el, dc, dl):
    g = random_graph(np.random.default_rng(seed), 10, 0.4)
    lo = floyd_warshall_constrained(g, ec, el).dist
    hi = floyd_warshall_constrained(g, ec + dc, el + dl).dist
    assert np.all(hi >= lo)


def test_constrained_paths_respect_thresholds():
    g = random_graph(np.random.default_rng(3), 14, 0.4)
    r = floyd_warshall_constrained(g, 40e6, 600.0)
    for s in range(g.n):
        for t in range(g.n):
            p = extract_path(r, s, t)
            if p is not None and len(p) > 1:
                m = path_metrics(g, p)
                assert m.capacity_bps >= 40e6 and m.lifetime_s >= 600.0
    strict = floyd_warshall_constrained(g, g.capacity[0, 1], -1, strict=True)
    assert not np.isfinite(strict.dist[0, 1]) or extract_path(strict, 0, 1) != (0, 1)


def test_path_metrics_errors_and_values():
    adj = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], bool)
    g = LinkGraph.from_arrays(adj, np.full((3, 3), 0.5), np.full((3, 3), 7.0), np.full((3, 3), 9.0))
    m = path_metrics(g, (0, 1, 2))
    assert (m.delay_s, m.capacity_bps, m.lifetime_s) == (1.0, 7.0, 9.0)
    with pytest.raises(InvalidPathError):
        path_metrics(g, (0, 2))
    with pytest.raises(InvalidPathError):
        path_metrics(g, (0, 1, 0))
    with pytest.raises(InvalidPathError):
        path_metrics(g, ())


def test_ties_break_toward_smaller_index():
    # two equal-delay routes 0-1-3 and 0-2-3
    adj = np.zeros((4, 4), bool)
    for a, b in [(0, 1), (0, 2), (1, 3), (2, 3)]:
        adj[a, b] = True
    g = LinkGraph.from_arrays(adj, np.full((4, 4), 0.25), np.ones((4, 4)), np.ones((4, 4)))
    assert dijkstra_min_delay(g, 0, 3) == (0, 1, 3)
    assert extract_path(floyd_warshall_constrained(g), 0, 3) == (0, 1, 3)


def test_neighbors_ranked():
    g = build_graph(_snap(), QueueModel.training(), KU)
    d = g.index("GS")
    r = neighbors_ranked(g, 1, d, 10)
    dist = np.linalg.norm(g.cart - g.cart[d], axis=1)
    assert sorted(r) == sorted(np.flatnonzero(g.adj[1]).tolist())
    assert list(dist[r]) == sorted(dist[r])
    assert neighbors_ranked(g, 1, d, 1) == r[:1]
    with pytest.raises(GraphError):
        neighbors_ranked(g, 9, d, 3)
