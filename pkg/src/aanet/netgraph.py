"""Per-snapshot link graph and exact minimum-delay solvers.

Nodes are addressed by their integer index in ``LinkGraph.ids``. Snapshots
sort nodes by id, so "smallest index" and "smallest id" coincide and every
tie in this module is broken toward the smaller index.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .geo import cartesian_array, max_link_range_array
from .linkmodel import QueueModel, RadioParams, lifetime_matrix, link_capacity

INF = np.inf


class GraphError(ValueError):
    pass


class InvalidPathError(GraphError):
    pass


class InternalInconsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinkMetrics:
    delay_s: float
    capacity_bps: float
    lifetime_s: float


@dataclass(frozen=True)
class PathMetrics:
    delay_s: float
    capacity_bps: float
    lifetime_s: float


Path = tuple  # tuple[int, ...] of node indices, source first


@dataclass
class LinkGraph:
    """Dense directed graph; ``adj[i, j]`` marks a feasible link i -> j.

    ``delay`` is +inf and ``capacity`` / ``lifetime`` are 0 where there is no
    link. ``geo`` holds (lat, lon, alt) rows and ``cart`` ECEF km rows.
    """

    ids: list
    adj: np.ndarray
    delay: np.ndarray
    capacity: np.ndarray
    lifetime: np.ndarray
    geo: np.ndarray | None = None
    cart: np.ndarray | None = None
    queue: np.ndarray | None = None
    ts: float = 0.0
    speed: np.ndarray | None = None
    heading: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.ids)

    def index(self, node_id) -> int:
        try:
            return self.ids.index(node_id)
        except ValueError:
            raise GraphError(f"unknown node {node_id!r}") from None

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adj[i])

    def edge(self, i: int, j: int) -> LinkMetrics:
        if not self.adj[i, j]:
            raise InvalidPathError(f"no link {i} -> {j}")
        return LinkMetrics(float(self.delay[i, j]), float(self.capacity[i, j]), float(self.lifetime[i, j]))

    def edge_count(self) -> int:
        return int(self.adj.sum())

    @classmethod
    def from_arrays(cls, adj, delay, capacity, lifetime, cart=None, ids=None, **kw) -> LinkGraph:
        adj = np.asarray(adj, dtype=bool).copy()
        np.fill_diagonal(adj, False)
        n = adj.shape[0]
        delay = np.where(adj, np.asarray(delay, dtype=float), INF)
        capacity = np.where(adj, np.asarray(capacity, dtype=float), 0.0)
        lifetime = np.where(adj, np.asarray(lifetime, dtype=float), 0.0)
        return cls(list(range(n)) if ids is None else list(ids), adj, delay, capacity, lifetime, cart=cart, **kw)


def build_graph(
    snap,
    queue,
    rp: RadioParams,
    scenario=None,
    rng: np.random.Generator | None = None,
    with_lifetime: bool = True,
) -> LinkGraph:
    """Link graph of a snapshot.

    ``queue`` is either a QueueModel (sampled once per node with ``rng``) or
    an explicit per-node array of queuing delays in seconds. Lifetimes need
    ``scenario``; without it (or with ``with_lifetime=False``) they are +inf.
    """
    nodes = snap.nodes
    n = len(nodes)
    if n == 0:
        raise GraphError("empty snapshot")
    geo = np.array([[s.pos.lat_deg, s.pos.lon_deg, s.pos.alt_km] for s in nodes], dtype=float)
    cart = cartesian_array(geo[:, 0], geo[:, 1], geo[:, 2])
    d = np.linalg.norm(cart[:, None, :] - cart[None, :, :], axis=-1)
    adj = d <= max_link_range_array(geo[:, None, 2], geo[None, :, 2])
    np.fill_diagonal(adj, False)
    adj &= d > 0.0

    q = queue.sample(n, rng) if isinstance(queue, QueueModel) else np.asarray(queue, dtype=float)
    if q.shape != (n,):
        raise GraphError(f"queue vector has shape {q.shape}, expected ({n},)")

    dd = np.where(adj, d, 1.0)
    cap = np.where(adj, link_capacity(dd, rp), 0.0)
    delay = np.where(adj, q[:, None] + rp.packet_bits / np.where(adj, cap, 1.0) + dd * 1000.0 / rp.light_speed_mps, INF)
    if with_lifetime and scenario is not None:
        life = lifetime_matrix(scenario, [s.id for s in nodes], snap.ts, adj)
    else:
        life = np.where(adj, INF, 0.0)
    return LinkGraph(
        ids=[s.id for s in nodes],
        adj=adj,
        delay=delay,
        capacity=cap,
        lifetime=life,
        geo=geo,
        cart=cart,
        queue=q,
        ts=snap.ts,
        speed=np.array([s.speed_mps for s in nodes]),
        heading=np.array([s.heading_deg for s in nodes]),
    )


def dist_to(g: LinkGraph, dest: int) -> np.ndarray:
    """Geographic (chord) distance of every node to ``dest`` in km."""
    if g.cart is None:
        raise GraphError("graph has no node positions")
    return np.linalg.norm(g.cart - g.cart[dest], axis=1)


def neighbors_ranked(g: LinkGraph, i: int, dest: int, K: int) -> list[int]:
    """Up to K neighbors of ``i`` ordered by distance to ``dest`` (ties: lower index)."""
    for v in (i, dest):
        if not 0 <= v < g.n:
            raise GraphError(f"unknown node {v}")
    nb = g.neighbors(i)
    dd = dist_to(g, dest)[nb]
    order = np.lexsort((nb, dd))
    return [int(x) for x in nb[order][:K]]


def dijkstra_min_delay(g: LinkGraph, src: int, dst: int, mask: np.ndarray | None = None) -> Path | None:
    """Minimum-delay path, or None if ``dst`` is unreachable.

    ``mask`` optionally restricts the usable links.
    """
    adj = g.adj if mask is None else (g.adj & mask)
    dist = np.full(g.n, INF)
    prev = np.full(g.n, -1)
    done = np.zeros(g.n, dtype=bool)
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == dst:
            break
        for v in np.flatnonzero(adj[u]):
            if done[v]:
                continue
            alt = du + g.delay[u, v]
            if alt < dist[v]:
                dist[v] = alt
                prev[v] = u
                heapq.heappush(heap, (alt, int(v)))
    if not np.isfinite(dist[dst]):
        return None
    path = [dst]
    while path[-1] != src:
        path.append(int(prev[path[-1]]))
    return tuple(reversed(path))


def dijkstra_all(g: LinkGraph, src: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Minimum delay from ``src`` to every node (inf where unreachable)."""
    adj = g.adj if mask is None else (g.adj & mask)
    dist = np.full(g.n, INF)
    done = np.zeros(g.n, dtype=bool)
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v in np.flatnonzero(adj[u]):
            alt = du + g.delay[u, v]
            if alt < dist[v]:
                dist[v] = alt
                heapq.heappush(heap, (alt, int(v)))
    return dist


@dataclass
class APSPResult:
    """All-pairs distances; ``dist`` is +inf for unreachable pairs, ``next`` is -1."""

    dist: np.ndarray
    next: np.ndarray

    def reachable(self, i: int, j: int) -> bool:
        return bool(np.isfinite(self.dist[i, j]))


def constraint_mask(g: LinkGraph, eps_c: float, eps_l: float, strict: bool = False) -> np.ndarray:
    if strict:
        return g.adj & (g.capacity > eps_c) & (g.lifetime > eps_l)
    return g.adj & (g.capacity >= eps_c) & (g.lifetime >= eps_l)


def floyd_warshall_constrained(g: LinkGraph, eps_c: float = 0.0, eps_l: float = 0.0, strict: bool = False) -> APSPResult:
    """All-pairs minimum delay over links with capacity >= eps_c and lifetime >= eps_l.

    ``strict=True`` uses > in both tests instead.
    """
    n = g.n
    keep = constraint_mask(g, eps_c, eps_l, strict)
    dist = np.where(keep, g.delay, INF)
    nxt = np.where(keep, np.arange(n)[None, :], -1)
    np.fill_diagonal(dist, 0.0)
    np.fill_diagonal(nxt, np.arange(n))
    for k in range(n):
        cand = dist[:, k, None] + dist[None, k, :]
        upd = cand < dist
        if upd.any():
            dist = np.where(upd, cand, dist)
            nxt = np.where(upd, nxt[:, k, None], nxt)
    return APSPResult(dist, nxt)


def extract_path(r: APSPResult, src: int, dst: int) -> Path | None:
    if src == dst:
        return (src,)
    if r.next[src, dst] < 0:
        return None
    path = [src]
    limit = r.next.shape[0]
    while path[-1] != dst:
        path.append(int(r.next[path[-1], dst]))
        if len(path) > limit or path[-1] < 0:
            raise InternalInconsistencyError(f"next-hop chain from {src} to {dst} does not terminate")
    return tuple(path)


def path_metrics(g: LinkGraph, p) -> PathMetrics:
    if len(p) == 0:
        raise InvalidPathError("empty path")
    if len(set(p)) != len(p):
        raise InvalidPathError(f"path repeats a node: {p}")
    delay, cap, life = 0.0, INF, INF
    for u, v in zip(p, p[1:]):
        e = g.edge(u, v)
        delay += e.delay_s
        cap = min(cap, e.capacity_bps)
        life = min(life, e.lifetime_s)
    return PathMetrics(delay, cap, life)


def random_graph(rng: np.random.Generator, n: int, p_edge: float = 0.4, symmetric: bool = True) -> LinkGraph:
    """Random geometric-free test graph with continuous delays, capacities and lifetimes.

    Node positions are random points on a 10 km shell so ranking works.
    """
    adj = rng.random((n, n)) < p_edge
    if symmetric:
        adj = np.triu(adj, 1)
        adj = adj | adj.T
    np.fill_diagonal(adj, False)
    delay = rng.uniform(1e-3, 50e-3, size=(n, n))
    capacity = rng.uniform(20e6, 60e6, size=(n, n))
    lifetime = rng.uniform(0.0, 1800.0, size=(n, n))
    if symmetric:
        capacity = np.triu(capacity, 1) + np.triu(capacity, 1).T
        lifetime = np.triu(lifetime, 1) + np.triu(lifetime, 1).T
    lat = rng.uniform(45, 60, n)
    lon = rng.uniform(-40, -10, n)
    alt = np.full(n, 10.0)
    geo = np.stack([lat, lon, alt], axis=1)
    return LinkGraph.from_arrays(adj, delay, capacity, lifetime, cart=cartesian_array(lat, lon, alt), geo=geo)


def with_queue(g: LinkGraph, q) -> LinkGraph:
    """Copy of ``g`` whose link delays use per-node queuing ``q`` (seconds) at the tail."""
    q = np.asarray(q, dtype=float)
    if q.shape != (g.n,):
        raise GraphError(f"queue vector has shape {q.shape}, expected ({g.n},)")
    old = g.queue if g.queue is not None else np.zeros(g.n)
    delay = np.where(g.adj, g.delay - old[:, None] + q[:, None], INF)
    return LinkGraph(
        g.ids, g.adj, delay, g.capacity, g.lifetime, g.geo, g.cart, q, g.ts, g.speed, g.heading,
    )
