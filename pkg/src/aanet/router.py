"""Next-hop policies driven by local information.

Inside this module delays are in ms, capacities in Mbps and lifetimes in
minutes, matching the estimator outputs. Every argmin breaks ties toward the
smaller node index.

A forwarding node ``p_n`` sees its candidate set (its top-K neighbors ranked
by distance to the destination, minus nodes already on the path), the
measured metrics of its links to them, and, with feedback, one report per
candidate: that candidate's own candidate set, its measured links, and its
observation for the estimator.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .datasetgen import SENTINEL, features, node_states
from .netgraph import INF, LinkGraph, dist_to, floyd_warshall_constrained, neighbors_ranked

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 10.0


class ModelMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    """What node ``node`` knows locally: its ranked neighbors and its feature vector."""

    node: int
    dest: int
    ranked: tuple
    x: np.ndarray


@dataclass(frozen=True)
class LinkSet:
    """Measured metrics from one node to each of ``nodes`` (same order)."""

    nodes: tuple
    delay_ms: np.ndarray
    capacity_mbps: np.ndarray
    lifetime_min: np.ndarray
    queue_ms: np.ndarray  # queuing advertised by each receiving node


@dataclass(frozen=True)
class Report:
    """Feedback from candidate j1: its candidates C_{j1}, its links, its observation."""

    node: int
    links: LinkSet
    obs: Observation


@dataclass
class LocalView:
    node: int
    dest: int
    visited: tuple
    obs: Observation
    links: LinkSet  # to the candidates, in ranked order
    own_dist_km: float
    cand_dist_km: np.ndarray
    reports: dict = field(default_factory=dict)
    topo: object = None

    @property
    def candidates(self) -> tuple:
        return self.links.nodes


@dataclass(frozen=True)
class ScoredCandidate:
    node: int
    cost_to_go: float
    score: float


# --------------------------------------------------------------------------
# per-packet topology context


class Topology:
    """Per-(graph, destination) cache of rankings, observations and estimates."""

    def __init__(self, g: LinkGraph, dest: int, K: int):
        self.g = g
        self.dest = dest
        self.K = K
        self.dist = dist_to(g, dest)
        self._ranked: dict[int, tuple] = {}
        self._obs: dict[int, Observation] = {}
        self._states = node_states(g)
        self._states_mo = None
        self._est: dict = {}

    def rebind(self, g: LinkGraph) -> Topology:
        """Same geometry with different link delays (e.g. a new queuing draw); caches are shared."""
        t = object.__new__(Topology)
        t.__dict__.update(self.__dict__)
        t.g = g
        return t

    def ranked(self, i: int) -> tuple:
        r = self._ranked.get(i)
        if r is None:
            r = self._ranked[i] = tuple(neighbors_ranked(self.g, i, self.dest, self.K))
        return r

    def obs(self, i: int) -> Observation:
        o = self._obs.get(i)
        if o is None:
            rk = self.ranked(i)
            o = self._obs[i] = Observation(i, self.dest, rk, features(self._states, i, rk, self.dest, self.K))
        return o

    def mo_x(self, i: int, eps_c: float, eps_l: float) -> np.ndarray:
        if self._states_mo is None:
            self._states_mo = node_states(self.g, moving=True)
        return features(self._states_mo, i, self.ranked(i), self.dest, self.K, eps=(eps_c, eps_l))

    def links(self, i: int, nodes) -> LinkSet:
        g = self.g
        nodes = tuple(nodes)
        idx = np.array(nodes, dtype=int)
        q = g.queue[idx] * 1e3 if (g.queue is not None and idx.size) else np.zeros(idx.size)
        return LinkSet(
            nodes,
            g.delay[i, idx] * 1e3,
            g.capacity[i, idx] / 1e6,
            g.lifetime[i, idx] / 60.0,
            q,
        )

    def candidates(self, i: int, visited) -> tuple:
        seen = set(visited)
        return tuple(j for j in self.ranked(i) if j not in seen)

    def view(self, node: int, visited, feedback: bool = True) -> LocalView:
        visited = tuple(visited)
        cand = self.candidates(node, visited)
        reports = {}
        if feedback:
            for j1 in cand:
                if j1 == self.dest:
                    continue
                reports[j1] = Report(j1, self.links(j1, self.candidates(j1, visited)), self.obs(j1))
        return LocalView(
            node, self.dest, visited, self.obs(node), self.links(node, cand),
            float(self.dist[node]), self.dist[np.array(cand, dtype=int)], reports, self,
        )

    # estimates are cached per node (and per threshold pair for MO): they
    # depend only on the node's observation, not on the packet's path
    def estimate(self, model, i: int, eps=None) -> np.ndarray:
        key = (model, i, eps)
        e = self._est.get(key)
        if e is None:
            self.prefetch(model, [i], eps)
            e = self._est[key]
        return e

    def prefetch(self, model, nodes, eps=None) -> None:
        todo = [i for i in nodes if (model, i, eps) not in self._est]
        if not todo:
            return
        obs = [self.obs(i) for i in todo]
        if eps is None:
            out = model.predict_so(obs)
        else:
            out = model.predict_mo(obs, eps[0], eps[1], self)
        for i, e in zip(todo, out):
            self._est[(model, i, eps)] = e


# --------------------------------------------------------------------------
# estimators


def _check_K(model, K: int) -> None:
    mk = getattr(model, "K", None)
    if mk is not None and mk != K:
        raise ModelMismatchError(f"model was built for K={mk}, view uses K={K}")


class NetModel:
    """Wraps trained MLP parameters; undoes the target standardization stored at training time."""

    def __init__(self, params, K: int, kind: str = "SO", y_offset=None, y_scale=None):
        from .neural import forward

        self._forward = forward
        self.params = params
        self.K = K
        self.kind = kind
        dim = params.spec.output_dim
        self.y_offset = np.zeros(dim) if y_offset is None else np.asarray(y_offset, dtype=float)
        self.y_scale = np.ones(dim) if y_scale is None else np.asarray(y_scale, dtype=float)
        want = K if kind == "SO" else 3 * K
        if dim != want:
            raise ModelMismatchError(f"{kind} model with K={K} needs {want} outputs, network has {dim}")

    @classmethod
    def from_file(cls, path) -> NetModel:
        from .neural import load_model

        params, meta = load_model(path)
        return cls(params, int(meta["K"]), meta.get("kind", "SO"), meta.get("y_offset"), meta.get("y_scale"))

    def _run(self, x: np.ndarray) -> np.ndarray:
        return self._forward(self.params, x, mode="infer") * self.y_scale + self.y_offset

    def predict_so(self, obs) -> np.ndarray:
        if self.kind != "SO":
            raise ModelMismatchError("single-objective policy given a multi-objective model")
        return self._run(np.array([o.x for o in obs]))

    def predict_mo(self, obs, eps_c, eps_l, topo: Topology) -> np.ndarray:
        if self.kind != "MO":
            raise ModelMismatchError("multi-objective policy given a single-objective model")
        x = np.array([topo.mo_x(o.node, eps_c, eps_l) for o in obs])
        return self._run(x).reshape(len(obs), 3, self.K)


class OracleModel:
    """Stub estimator returning true costs-to-go computed from the full graph.

    SO: minimum delay to the destination. MO: metrics of the minimum-delay
    path whose links all exceed both thresholds, or of the unconstrained
    minimum-delay path when none exists.
    """

    def __init__(self, g: LinkGraph, dest: int, K: int):
        self.g = g
        self.dest = dest
        self.K = K
        self._so = floyd_warshall_constrained(g).dist[:, dest] * 1e3
        self._mo: dict = {}

    def _slots(self, o: Observation, values: np.ndarray) -> np.ndarray:
        out = np.full(self.K, SENTINEL)
        for k, j in enumerate(o.ranked):
            if np.isfinite(values[j]):
                out[k] = values[j]
        return out

    def predict_so(self, obs) -> np.ndarray:
        return np.array([self._slots(o, self._so) for o in obs])

    def _tables(self, eps_c, eps_l):
        key = (eps_c, eps_l)
        if key not in self._mo:
            from .datasetgen import _follow

            g, d = self.g, self.dest
            con = _follow(floyd_warshall_constrained(g, eps_c * 1e6, eps_l * 60.0, strict=True), g, d)
            unc = _follow(floyd_warshall_constrained(g, -INF, -INF, strict=True), g, d)
            ok = np.isfinite(con[0])
            self._mo[key] = tuple(np.where(ok, a, b) for a, b in zip(con, unc))
        D, C, L = self._mo[key]
        return D * 1e3, C / 1e6, L / 60.0

    def predict_mo(self, obs, eps_c, eps_l, topo=None) -> np.ndarray:
        D, C, L = self._tables(eps_c, eps_l)
        return np.array([[self._slots(o, D), self._slots(o, C), self._slots(o, L)] for o in obs])


# --------------------------------------------------------------------------
# baselines


def _argmin(nodes, scores):
    """Index-tie-broken argmin; None when nothing is finite."""
    best, best_s = None, INF
    for j, s in zip(nodes, scores):
        if s < best_s or (s == best_s and best is not None and j < best):
            best, best_s = j, s
    return best if np.isfinite(best_s) else None


def greedy_next_hop(view: LocalView):
    """Closest candidate to the destination, if strictly closer than the current node."""
    if view.dest in view.candidates:
        return view.dest
    closer = view.cand_dist_km < view.own_dist_km
    if not closer.any():
        return None
    return _argmin(
        [j for j, c in zip(view.candidates, closer) if c],
        view.cand_dist_km[closer],
    )


def glsr_next_hop(view: LocalView):
    """Among strictly closer candidates, the one with the lowest link delay plus its own queuing."""
    closer = view.cand_dist_km < view.own_dist_km
    if view.dest in view.candidates:
        closer |= np.array([j == view.dest for j in view.candidates])
    if not closer.any():
        return None
    cost = view.links.delay_ms + np.where(np.array(view.candidates) == view.dest, 0.0, view.links.queue_ms)
    return _argmin([j for j, c in zip(view.candidates, closer) if c], cost[closer])


# --------------------------------------------------------------------------
# DL-aided policies


def _slot_values(est_row: np.ndarray, obs: Observation, nodes) -> np.ndarray:
    """Pick the estimator slots belonging to ``nodes`` out of ``obs``'s ranked list."""
    pos = {j: k for k, j in enumerate(obs.ranked)}
    return np.array([est_row[pos[j]] for j in nodes], dtype=float)


def dl_next_hop_nofb(view: LocalView, model):
    """argmin_j D(p_n, j) + [1 - I_d(j)] * D^(j) with one inference at p_n."""
    c = view.candidates
    if not c:
        return None
    topo = view.topo
    _check_K(model, topo.K)
    est = _slot_values(topo.estimate(model, view.node), view.obs, c)
    scores = view.links.delay_ms + np.where(np.array(c) == view.dest, 0.0, est)
    return _argmin(c, scores)


def _penalty(lam, eps_c, eps_l, cap, life):
    if lam == 0.0:
        return 0.0
    return lam * np.maximum(eps_c - cap, 0.0) + lam * np.maximum(eps_l - life, 0.0)


def mutual_candidate_set(view: LocalView, first_round: dict) -> list:
    """Candidates of p_n that some candidate also lists, ascending by first-round estimate."""
    listed = set()
    for rep in view.reports.values():
        listed.update(rep.links.nodes)
    M = [j for j in view.candidates if j in listed]
    return sorted(M, key=lambda j: (first_round[j], j))


def _feedback_scores(view: LocalView, est_self, est_reports, lam=0.0, eps_c=0.0, eps_l=0.0):
    """Cost-to-go D~ per candidate after the first round and the mutual-set recomputation.

    ``est_self[j1]`` is p_n's own penalized estimate for j1 (used when j1 sent
    no report); ``est_reports[j1][j2]`` is j1's penalized estimate for j2.
    """
    dest = view.dest
    tilde = {}
    for j1 in view.candidates:
        if j1 == dest:
            tilde[j1] = 0.0
            continue
        rep = view.reports.get(j1)
        if rep is None:
            log.debug("no report from %s, using the forwarding node's own estimate", j1)
            tilde[j1] = est_self[j1]
            continue
        best = INF
        L = rep.links
        link = L.delay_ms + _penalty(lam, eps_c, eps_l, L.capacity_mbps, L.lifetime_min)
        for k, j2 in enumerate(L.nodes):
            v = link[k] + (0.0 if j2 == dest else est_reports[j1][j2])
            best = min(best, v)
        tilde[j1] = best

    M = mutual_candidate_set(view, tilde)
    rank = {m: k for k, m in enumerate(M)}
    for k, m in enumerate(M):
        rep = view.reports.get(m)
        if m == dest or rep is None:
            continue
        L = rep.links
        link = L.delay_ms + _penalty(lam, eps_c, eps_l, L.capacity_mbps, L.lifetime_min)
        best = INF
        reduced = False
        for q, j2 in enumerate(L.nodes):
            if j2 in rank and rank[j2] > k:
                continue
            reduced = True
            if j2 == dest:
                togo = 0.0
            elif j2 in rank:
                togo = tilde[j2]
            else:
                togo = est_reports[m][j2]
            best = min(best, link[q] + togo)
        if reduced:  # an empty reduced set keeps the first-round value
            tilde[m] = best
    return tilde, M


def _reporting_estimates(view: LocalView, model, eps=None, lam=0.0):
    """Penalized estimates p_n holds for its candidates and each report's candidates."""
    topo = view.topo
    topo.prefetch(model, [view.node] + list(view.reports), eps)

    def pick(node, obs, nodes):
        e = topo.estimate(model, node, eps)
        if eps is None:
            return dict(zip(nodes, _slot_values(e, obs, nodes)))
        d = _slot_values(e[0], obs, nodes)
        c = _slot_values(e[1], obs, nodes)
        l = _slot_values(e[2], obs, nodes)
        return dict(zip(nodes, d + _penalty(lam, eps[0], eps[1], c, l)))

    est_self = pick(view.node, view.obs, view.candidates)
    est_reports = {j1: pick(j1, rep.obs, rep.links.nodes) for j1, rep in view.reports.items()}
    return est_self, est_reports


def dl_next_hop_fb(view: LocalView, model):
    """Feedback rule: first round over next-2-hop reports, mutual-set recomputation, argmin."""
    c = view.candidates
    if not c:
        return None
    _check_K(model, view.topo.K)
    est_self, est_reports = _reporting_estimates(view, model)
    tilde, _ = _feedback_scores(view, est_self, est_reports)
    scores = [view.links.delay_ms[k] + (0.0 if j == view.dest else tilde[j]) for k, j in enumerate(c)]
    return _argmin(c, scores)


def dl_mo_scores(view: LocalView, model, eps_c: float, eps_l: float, lam: float = DEFAULT_LAMBDA):
    c = view.candidates
    est_self, est_reports = _reporting_estimates(view, model, (eps_c, eps_l), lam)
    tilde, _ = _feedback_scores(view, est_self, est_reports, lam, eps_c, eps_l)
    L = view.links
    pen = _penalty(lam, eps_c, eps_l, L.capacity_mbps, L.lifetime_min)
    out = []
    for k, j in enumerate(c):
        togo = 0.0 if j == view.dest else tilde[j]
        out.append(ScoredCandidate(j, togo, float(L.delay_ms[k] + togo + pen[k])))
    return out


def dl_mo_next_hop(view: LocalView, model, eps_c: float, eps_l: float, lam: float = DEFAULT_LAMBDA):
    """Penalized feedback rule for a given (eps_c [Mbps], eps_l [min]) requirement."""
    if not view.candidates:
        return None
    _check_K(model, view.topo.K)
    sc = dl_mo_scores(view, model, eps_c, eps_l, lam)
    return _argmin([s.node for s in sc], [s.score for s in sc])


def fit_net_model(ds, iters: int | None = None, seed: int = 0, batch: int = 1000, lr: float = 1e-3, log_every: int = 0):
    """Train the SO or MO network on a dataset; returns (NetModel, TrainResult).

    Targets are standardized per output slot over the unmasked entries and
    the wrapper maps predictions back to label units.
    """
    from .neural import mo_spec, so_spec, train

    spec = so_spec(ds.K) if ds.kind == "SO" else mo_spec(ds.K)
    iters = iters if iters is not None else (2000 if ds.kind == "SO" else 10000)
    m = ds.mask
    cnt = m.sum(axis=0)
    yz = np.where(m, ds.y, 0.0)
    mean = np.divide(yz.sum(axis=0), cnt, out=np.zeros(m.shape[1]), where=cnt > 0)
    var = np.divide((np.where(m, ds.y - mean, 0.0) ** 2).sum(axis=0), cnt, out=np.ones(m.shape[1]), where=cnt > 0)
    scale = np.where(var > 0, np.sqrt(var), 1.0)
    target = np.where(m, (ds.y - mean) / scale, 0.0)
    res = train(spec, ds.x, target, m, iters=iters, batch=batch, lr=lr, seed=seed, log_every=log_every)
    return NetModel(res.params, ds.K, ds.kind, mean, scale), res
