import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aanet.datasetgen import EpsGrid, concat, gen_mo_samples, gen_so_samples
from aanet.flightdata import SynthConfig, snapshot, synth_scenario
from aanet.linkmodel import QueueModel, RadioParams
from aanet.netgraph import build_graph, dijkstra_min_delay, random_graph, with_queue
from aanet.neural import save_model
from aanet.router import (
    LinkSet,
    LocalView,
    ModelMismatchError,
    NetModel,
    Observation,
    OracleModel,
    Report,
    Topology,
    _feedback_scores,
    dl_mo_next_hop,
    dl_mo_scores,
    dl_next_hop_fb,
    dl_next_hop_nofb,
    fit_net_model,
    glsr_next_hop,
    greedy_next_hop,
    mutual_candidate_set,
)

DEST = 9


class FakeTopo:
    """Serves hand-assigned estimate rows aligned with each node's ranked list."""

    K = 3

    def __init__(self, rows):
        self.rows = rows

    def prefetch(self, model, nodes, eps=None):
        pass

    def estimate(self, model, i, eps=None):
        return self.rows[i]


class Stub:
    K = 3


def _links(nodes, delay, q=None, cap=None, life=None):
    n = len(nodes)
    f = lambda v, d: np.asarray(v if v is not None else [d] * n, dtype=float)  # noqa: E731
    return LinkSet(tuple(nodes), f(delay, 0), f(cap, 100.0), f(life, 100.0), f(q, 0.0))


def _obs(node, ranked):
    return Observation(node, DEST, tuple(ranked), np.zeros(1))


def mutual_view(rows=None):
    """Forwarding node 1, candidates 2, 3, 4; nodes 3 and 4 list each other.

    Hand-assigned values (ms):
      links 1->2: 10, 1->3: 14, 1->4: 10
      report 2: 2->5 = 5,          2 estimates D(5) = 40
      report 3: 3->4 = 3, 3->7 = 25; 3 estimates D(4) = 25, D(7) = 10
      report 4: 4->3 = 3, 4->6 = 8;  4 estimates D(3) = 30, D(6) = 35
      node 1's own estimates: D(2) = 50, D(3) = 40, D(4) = 20
    """
    rows = rows or {
        1: np.array([50.0, 40.0, 20.0]),
        2: np.array([40.0, 0, 0]),
        3: np.array([25.0, 10.0, 0]),
        4: np.array([30.0, 35.0, 0]),
    }
    reports = {
        2: Report(2, _links([5], [5.0]), _obs(2, [5])),
        3: Report(3, _links([4, 7], [3.0, 25.0]), _obs(3, [4, 7])),
        4: Report(4, _links([3, 6], [3.0, 8.0]), _obs(4, [3, 6])),
    }
    return LocalView(1, DEST, (0, 1), _obs(1, [2, 3, 4]), _links([2, 3, 4], [10.0, 14.0, 10.0]),
                     100.0, np.array([90.0, 80.0, 85.0]), reports, FakeTopo(rows))


def test_feedback_hand_trace():
    v = mutual_view()
    # first round: D~(2) = 5+40 = 45, D~(3) = min(3+25, 25+10) = 28, D~(4) = min(3+30, 8+35) = 33
    first = {2: 45.0, 3: 28.0, 4: 33.0}
    assert mutual_candidate_set(v, first) == [3, 4]
    est_self = {2: 50.0, 3: 40.0, 4: 20.0}
    est_rep = {2: {5: 40.0}, 3: {4: 25.0, 7: 10.0}, 4: {3: 30.0, 6: 35.0}}
    tilde, M = _feedback_scores(v, est_self, est_rep)
    # m1 = 3 drops 4 (ranked later): 25+10 = 35; m2 = 4 keeps 3 with its new value: min(3+35, 8+35) = 38
    assert M == [3, 4]
    assert tilde == {2: 45.0, 3: 35.0, 4: 38.0}
    # totals 55 / 49 / 48 -> 4, while the first round alone would pick 3 (42 vs 43)
    assert dl_next_hop_fb(v, Stub()) == 4
    # without feedback: 10+50, 14+40, 10+20 -> 4
    assert dl_next_hop_nofb(v, Stub()) == 4


def test_feedback_reordered_when_estimates_flip():
    rows = {1: np.array([50.0, 40.0, 20.0]), 2: np.array([40.0, 0, 0]),
            3: np.array([25.0, 20.0, 0]), 4: np.array([18.0, 35.0, 0])}
    v = mutual_view(rows)
    # first round: D~(3) = min(28, 45) = 28, D~(4) = min(3+18, 43) = 21 -> M = [4, 3]
    est_self = {2: 50.0, 3: 40.0, 4: 20.0}
    est_rep = {2: {5: 40.0}, 3: {4: 25.0, 7: 20.0}, 4: {3: 18.0, 6: 35.0}}
    tilde, M = _feedback_scores(v, est_self, est_rep)
    # m1 = 4 drops 3: 8+35 = 43; m2 = 3 keeps 4: min(3+43, 25+20) = 45
    assert M == [4, 3] and tilde[4] == 43.0 and tilde[3] == 45.0


def test_missing_report_uses_own_estimate():
    v = mutual_view()
    del v.reports[2]
    tilde, _ = _feedback_scores(v, {2: 50.0, 3: 40.0, 4: 20.0}, {3: {4: 25.0, 7: 10.0}, 4: {3: 30.0, 6: 35.0}})
    assert tilde[2] == 50.0


def test_empty_reduced_set_keeps_first_round():
    # candidate 3 lists only 4, and 4 is ranked after it in M -> empty reduced set
    rows = {1: np.array([0.0, 0.0, 0.0]), 3: np.array([5.0, 0, 0]), 4: np.array([50.0, 0, 0])}
    reports = {3: Report(3, _links([4], [1.0]), _obs(3, [4])), 4: Report(4, _links([3], [1.0]), _obs(4, [3]))}
    v = LocalView(1, DEST, (1,), _obs(1, [3, 4]), _links([3, 4], [1.0, 1.0]), 10.0, np.array([5.0, 6.0]),
                  reports, FakeTopo(rows))
    tilde, M = _feedback_scores(v, {3: 0.0, 4: 0.0}, {3: {4: 5.0}, 4: {3: 50.0}})
    assert M == [3, 4] and tilde[3] == 6.0 and tilde[4] == 1.0 + 6.0


def test_single_candidate_reaching_dest():
    reports = {2: Report(2, _links([DEST], [7.0]), _obs(2, [DEST]))}
    v = LocalView(1, DEST, (1,), _obs(1, [2]), _links([2], [3.0]), 10.0, np.array([5.0]),
                  reports, FakeTopo({1: np.array([1e6, 0, 0]), 2: np.array([1e6, 0, 0])}))
    tilde, _ = _feedback_scores(v, {2: 1e6}, {2: {DEST: 1e6}})
    assert tilde[2] == 7.0
    assert dl_next_hop_fb(v, Stub()) == 2


def test_dest_zeroing_and_empty():
    v = LocalView(1, DEST, (1,), _obs(1, [DEST, 2]), _links([DEST, 2], [30.0, 1.0]), 10.0,
                  np.array([0.0, 5.0]), {}, FakeTopo({1: np.array([1e8, 1e6, 0])}))
    assert dl_next_hop_nofb(v, Stub()) == DEST
    e = LocalView(1, DEST, (1,), _obs(1, []), _links([], []), 10.0, np.zeros(0), {}, FakeTopo({}))
    assert dl_next_hop_nofb(e, Stub()) is None and dl_next_hop_fb(e, Stub()) is None
    assert greedy_next_hop(e) is None and glsr_next_hop(e) is None


class MOStub:
    K = 3

    def __init__(self, so_rows):
        self.so = so_rows


def _mo_rows(so_rows, cap=100.0, life=100.0):
    return {i: np.vstack([r, np.full(3, cap), np.full(3, life)]) for i, r in so_rows.items()}


def test_mo_reduces_to_feedback_when_constraints_hold():
    v = mutual_view()
    so = {j1: v.topo.rows[j1] for j1 in v.topo.rows}
    mo = mutual_view(_mo_rows(so))
    sc = dl_mo_scores(mo, MOStub(so), eps_c=20.0, eps_l=10.0)
    est_self = {2: 50.0, 3: 40.0, 4: 20.0}
    est_rep = {2: {5: 40.0}, 3: {4: 25.0, 7: 10.0}, 4: {3: 30.0, 6: 35.0}}
    tilde, _ = _feedback_scores(v, est_self, est_rep)
    for s, d in zip(sc, v.links.delay_ms):
        assert s.score == d + tilde[s.node]
    assert dl_mo_next_hop(mo, MOStub(so), 20.0, 10.0) == dl_next_hop_fb(v, Stub())


def test_mo_penalty_arithmetic():
    rows = {1: np.vstack([np.zeros(3), np.full(3, 100.0), np.full(3, 100.0)])}
    links = _links([DEST, 2], [5.0, 5.0], cap=[30.0, 40.0], life=[100.0, 100.0])
    v = LocalView(1, DEST, (1,), _obs(1, [DEST, 2]), links, 10.0, np.array([0.0, 5.0]), {}, FakeTopo(rows))
    sc = {s.node: s.score for s in dl_mo_scores(v, MOStub(None), eps_c=40.0, eps_l=0.0, lam=10.0)}
    assert sc[DEST] == 5.0 + 10.0 * 10.0
    assert sc[2] == 5.0 + 0.0


def test_argmin_ties_toward_smaller_id():
    v = LocalView(1, DEST, (1,), _obs(1, [4, 2]), _links([4, 2], [3.0, 3.0]), 10.0,
                  np.array([5.0, 5.0]), {}, FakeTopo({1: np.array([1.0, 1.0, 0])}))
    assert dl_next_hop_nofb(v, Stub()) == 2
    assert greedy_next_hop(v) == 2
    assert glsr_next_hop(v) == 2


def test_greedy_and_glsr_rules():
    links = _links([2, 3, 4], [10.0, 4.0, 6.0], q=[0.0, 5.0, 0.0])
    v = LocalView(1, DEST, (1,), _obs(1, [2, 3, 4]), links, 100.0, np.array([60.0, 70.0, 120.0]), {}, None)
    assert greedy_next_hop(v) == 2
    assert glsr_next_hop(v) == 3 or glsr_next_hop(v) == 2
    # GLSR: 2 costs 10, 3 costs 4 + 5 = 9; 4 is farther than the current node
    assert glsr_next_hop(v) == 3
    far = LocalView(1, DEST, (1,), _obs(1, [2]), _links([2], [1.0]), 100.0, np.array([101.0]), {}, None)
    assert greedy_next_hop(far) is None and glsr_next_hop(far) is None


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_policies_never_revisit_and_baselines_move_closer(seed):
    g = random_graph(np.random.default_rng(seed), 14, 0.35)
    dest = 13
    topo = Topology(g, dest, 6)
    orc = OracleModel(g, dest, 6)
    rng = np.random.default_rng(seed)
    visited = tuple(int(v) for v in rng.permutation(13)[:4])
    node = visited[-1]
    v = topo.view(node, visited)
    assert set(v.candidates).isdisjoint(visited)
    assert set(v.candidates) <= set(topo.ranked(node))
    for pick in (greedy_next_hop(v), glsr_next_hop(v), dl_next_hop_nofb(v, orc), dl_next_hop_fb(v, orc),
                 dl_mo_next_hop(v, orc, 30.0, 5.0)):
        assert pick is None or (pick in v.candidates and pick not in visited)
    for pick in (greedy_next_hop(v), glsr_next_hop(v)):
        if pick is not None and pick != dest:
            assert topo.dist[pick] < topo.dist[node]
    if v.candidates:
        # greedy equals the plain argmin over strictly closer candidates
        closer = [j for j in v.candidates if topo.dist[j] < topo.dist[node] or j == dest]
        want = None if not closer else (dest if dest in closer else min(closer, key=lambda j: (topo.dist[j], j)))
        assert greedy_next_hop(v) == want


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_oracle_picks_optimal_first_hop(seed):
    g = random_graph(np.random.default_rng(seed), 12, 0.4)
    dest = 11
    orc = OracleModel(g, dest, 11)
    topo = Topology(g, dest, 11)
    for s in range(11):
        opt = dijkstra_min_delay(g, s, dest)
        if opt is None:
            continue
        v = topo.view(s, (s,))
        assert dl_next_hop_nofb(v, orc) == opt[1]
        assert dl_next_hop_fb(v, orc) == opt[1]


def test_mutual_set_matches_intersection():
    g = random_graph(np.random.default_rng(5), 15, 0.4)
    topo = Topology(g, 14, 5)
    for node in range(14):
        v = topo.view(node, (node,))
        first = {j: float(j) for j in v.candidates}
        listed = set().union(*[set(r.links.nodes) for r in v.reports.values()]) if v.reports else set()
        assert set(mutual_candidate_set(v, first)) == set(v.candidates) & listed


@pytest.fixture(scope="module")
def small_models(tmp_path_factory):
    sc = synth_scenario(SynthConfig(n_flights=25, duration_s=600.0), 8)
    so = concat([gen_so_samples(sc, [0.0, 300.0, 600.0], "GS", K=10)])
    mo = gen_mo_samples(sc, [300.0], "GS", K=40, grid=EpsGrid(B=1, A=1))
    m_so, r_so = fit_net_model(so, iters=30, seed=0, batch=64)
    m_mo, _ = fit_net_model(mo, iters=3, seed=0, batch=64)
    return sc, so, m_so, m_mo, r_so


def test_netmodel_roundtrip_and_mismatch(small_models, tmp_path):
    sc, so, m_so, m_mo, res = small_models
    assert len(res.losses) == 30
    p = tmp_path / "m.bin"
    save_model(m_so.params, p, {"K": 10, "kind": "SO", "y_offset": m_so.y_offset.tolist(), "y_scale": m_so.y_scale.tolist()})
    back = NetModel.from_file(p)
    g = build_graph(snapshot(sc, 300.0), QueueModel.training(), RadioParams.preset(), with_lifetime=False)
    topo = Topology(g, g.index("GS"), 10)
    obs = [topo.obs(i) for i in range(3)]
    assert np.array_equal(back.predict_so(obs), m_so.predict_so(obs))
    assert m_mo.predict_mo(obs, 20.0, 0.0, Topology(g, g.index("GS"), 40)).shape == (3, 3, 40)
    with pytest.raises(ModelMismatchError):
        m_so.predict_mo(obs, 20.0, 0.0, topo)
    with pytest.raises(ModelMismatchError):
        m_mo.predict_so(obs)
    v = Topology(g, g.index("GS"), 5).view(0, (0,))
    with pytest.raises(ModelMismatchError):
        dl_next_hop_nofb(v, m_so)


def test_standardization_maps_back(small_models):
    _, so, m_so, _, _ = small_models
    m = so.mask
    means = np.array([so.y[m[:, k], k].mean() for k in range(10)])
    assert np.allclose(m_so.y_offset, means)


def test_rebind_shares_rankings_not_delays():
    g = random_graph(np.random.default_rng(1), 10, 0.5)
    topo = Topology(g, 9, 4)
    h = with_queue(g, np.full(10, 0.5))
    t2 = topo.rebind(h)
    assert t2.ranked(0) == topo.ranked(0)
    v1, v2 = topo.view(0, (0,)), t2.view(0, (0,))
    assert np.all(v2.links.delay_ms > v1.links.delay_ms)
