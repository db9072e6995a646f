"""Packet-level replay of routing policies over frozen snapshots."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .datasetgen import EpsGrid
from .flightdata import Scenario, snapshot
from .linkmodel import QueueModel, RadioParams
from .netgraph import LinkGraph, PathMetrics, build_graph, dijkstra_min_delay, path_metrics, with_queue
from .router import (
    DEFAULT_LAMBDA,
    Topology,
    dl_mo_next_hop,
    dl_next_hop_fb,
    dl_next_hop_nofb,
    glsr_next_hop,
    greedy_next_hop,
)

HOP_LIMIT = 100
SUCCESS_DELAY_S = 0.200

DELIVERED = "Delivered"
VOID = "VoidFailure"
HOP_LIMIT_HIT = "HopLimit"
NO_CANDIDATES = "NoCandidates"

POLICY_NAMES = ("optimal", "greedy", "glsr", "dl-nofb", "dl-fb", "dl-mo")


@dataclass(frozen=True)
class Policy:
    """A named next-hop rule; DL policies carry their estimator, dl-mo its thresholds."""

    name: str
    model: object = None
    eps: tuple | None = None  # (eps_c Mbps, eps_l min) for dl-mo
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.name!r}; known: {', '.join(POLICY_NAMES)}")
        if self.name.startswith("dl") and self.model is None:
            raise ValueError(f"policy {self.name} needs a model")
        if self.name == "dl-mo" and self.eps is None:
            raise ValueError("policy dl-mo needs (eps_c, eps_l)")

    @property
    def feedback(self) -> bool:
        return self.name in ("dl-fb", "dl-mo")

    def next_hop(self, view):
        if self.name == "greedy":
            return greedy_next_hop(view)
        if self.name == "glsr":
            return glsr_next_hop(view)
        if self.name == "dl-nofb":
            return dl_next_hop_nofb(view, self.model)
        if self.name == "dl-fb":
            return dl_next_hop_fb(view, self.model)
        if self.name == "dl-mo":
            return dl_mo_next_hop(view, self.model, self.eps[0], self.eps[1], self.lam)
        raise ValueError(f"{self.name} is not a local policy")


@dataclass(frozen=True)
class RouteOutcome:
    status: str
    path: tuple
    metrics: PathMetrics | None
    hops: int

    @property
    def delivered(self) -> bool:
        return self.status == DELIVERED


def route_on_graph(
    g: LinkGraph,
    src: int,
    dst: int,
    policy: Policy,
    K: int = 10,
    hop_limit: int = HOP_LIMIT,
    topo: Topology | None = None,
) -> RouteOutcome:
    """Route one packet hop by hop on a frozen graph."""
    if src == dst:
        return RouteOutcome(DELIVERED, (src,), PathMetrics(0.0, math.inf, math.inf), 0)
    if policy.name == "optimal":
        p = dijkstra_min_delay(g, src, dst)
        if p is None:
            status = NO_CANDIDATES if not g.adj[src].any() else VOID
            return RouteOutcome(status, (src,), None, 0)
        return RouteOutcome(DELIVERED, p, path_metrics(g, p), len(p) - 1)
    topo = topo if topo is not None else Topology(g, dst, K)
    path = [src]
    cur = src
    while cur != dst:
        if len(path) - 1 >= hop_limit:
            return RouteOutcome(HOP_LIMIT_HIT, tuple(path), None, len(path) - 1)
        view = topo.view(cur, path, feedback=policy.feedback)
        if not view.candidates:
            return RouteOutcome(NO_CANDIDATES, tuple(path), None, len(path) - 1)
        nxt = policy.next_hop(view)
        if nxt is None:
            return RouteOutcome(VOID, tuple(path), None, len(path) - 1)
        path.append(int(nxt))
        cur = int(nxt)
    p = tuple(path)
    return RouteOutcome(DELIVERED, p, path_metrics(g, p), len(p) - 1)


def packet_rng(seed: int, ts_index: int, src_index: int) -> np.random.Generator:
    """Per-packet stream: identical for every policy evaluated on the same packet."""
    return np.random.default_rng([seed, ts_index, src_index])


def route_packet(
    scenario: Scenario,
    ts: float,
    src_id,
    dst_id,
    policy: Policy,
    seed: int = 0,
    K: int = 10,
    rp: RadioParams | None = None,
    queue: QueueModel | None = None,
    with_lifetime: bool = False,
    hop_limit: int = HOP_LIMIT,
) -> RouteOutcome:
    """Route one packet at ``ts``; queuing is drawn once per node for this packet."""
    rp = rp or RadioParams.preset()
    queue = queue or QueueModel.testing()
    snap = snapshot(scenario, ts)
    for nid in (src_id, dst_id):
        if nid not in snap.index:
            raise ValueError(f"node {nid!r} is not present at ts={ts}")
    g = build_graph(snap, queue, rp, scenario=scenario, rng=np.random.default_rng(seed), with_lifetime=with_lifetime)
    return route_on_graph(g, g.index(src_id), g.index(dst_id), policy, K, hop_limit)


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class PacketRecord:
    policy: str
    ts: float
    src: str
    status: str
    delay_s: float
    capacity_bps: float
    lifetime_s: float
    hops: int
    path: tuple


@dataclass
class EvalReport:
    policy: str
    records: list[PacketRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def delivered(self) -> list[PacketRecord]:
        return [r for r in self.records if r.status == DELIVERED]

    def delays_s(self) -> np.ndarray:
        """Per-packet delay, +inf for undelivered packets."""
        return np.array([r.delay_s if r.status == DELIVERED else math.inf for r in self.records])

    def success_probability(self, threshold_s: float = SUCCESS_DELAY_S) -> float:
        if not self.records:
            raise ValueError("empty report")
        return float(np.mean(self.delays_s() < threshold_s))

    def delivery_ratio(self) -> float:
        if not self.records:
            raise ValueError("empty report")
        return len(self.delivered()) / len(self.records)

    def mean_delay_s(self) -> float:
        d = [r.delay_s for r in self.delivered()]
        return float(np.mean(d)) if d else math.nan

    def cdf(self) -> tuple[np.ndarray, np.ndarray]:
        """Delivered delays (ms, sorted) and the empirical CDF over all packets."""
        d = np.sort(self.delays_s())
        n = len(d)
        fin = d[np.isfinite(d)]
        return fin * 1e3, np.arange(1, fin.size + 1) / n

    def status_counts(self) -> dict:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.status] = out.get(r.status, 0) + 1
        return out


def common_delivered(reports: dict) -> list[tuple[float, str]]:
    """(ts, src) keys delivered by every report."""
    sets = [{(r.ts, r.src) for r in rep.delivered()} for rep in reports.values()]
    return sorted(set.intersection(*sets)) if sets else []


def mean_delay_on(report: EvalReport, keys) -> float:
    keys = set(keys)
    d = [r.delay_s for r in report.delivered() if (r.ts, r.src) in keys]
    return float(np.mean(d)) if d else math.nan


def eval_policies(
    scenario: Scenario,
    timestamps,
    dst_id,
    policies: list[Policy],
    seed: int = 0,
    K: int = 10,
    rp: RadioParams | None = None,
    queue: QueueModel | None = None,
    with_lifetime: bool = False,
    hop_limit: int = HOP_LIMIT,
) -> dict[str, EvalReport]:
    """One packet from every airborne flight per timestamp, for each policy.

    Every policy sees the same per-packet queuing draw.
    """
    timestamps = list(timestamps)
    if not timestamps:
        raise ValueError("no timestamps to evaluate")
    rp = rp or RadioParams.preset()
    queue = queue or QueueModel.testing()
    names = [p.name if p.name != "dl-mo" else f"dl-mo{p.eps}" for p in policies]
    if len(set(names)) != len(names):
        raise ValueError("duplicate policies")
    reports = {k: EvalReport(k) for k in names}
    stations = set(scenario.stations)
    for k, ts in enumerate(timestamps):
        snap = snapshot(scenario, ts)
        if dst_id not in snap.index:
            continue
        base = build_graph(snap, np.zeros(len(snap.nodes)), rp, scenario=scenario, with_lifetime=with_lifetime)
        dst = base.index(dst_id)
        topo = Topology(base, dst, K)
        for i, nid in enumerate(base.ids):
            if nid in stations:
                continue
            q = queue.sample(base.n, packet_rng(seed, k, i))
            g = with_queue(base, q)
            t = topo.rebind(g)
            for name, pol in zip(names, policies):
                out = route_on_graph(g, i, dst, pol, K, hop_limit, t)
                m = out.metrics
                reports[name].records.append(
                    PacketRecord(
                        name, float(ts), str(nid), out.status,
                        m.delay_s if m else math.nan, m.capacity_bps if m else math.nan,
                        m.lifetime_s if m else math.nan, out.hops, tuple(base.ids[j] for j in out.path),
                    )
                )
    return reports


def eval_policy(scenario, timestamps, dst_id, policy: Policy, **kw) -> EvalReport:
    return next(iter(eval_policies(scenario, timestamps, dst_id, [policy], **kw).values()))


def write_eval_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "ts", "src", "status", "delay_ms", "capacity_mbps", "lifetime_min", "hops"])
        for rep in reports:
            for r in rep.records:
                w.writerow([
                    r.policy, f"{r.ts:g}", r.src, r.status, f"{r.delay_s * 1e3:.9g}",
                    f"{r.capacity_bps / 1e6:.9g}", f"{r.lifetime_s / 60:.9g}", r.hops,
                ])


def write_cdf_csv(report: EvalReport, path) -> None:
    d, c = report.cdf()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delay_ms", "cdf"])
        for a, b in zip(d, c):
            w.writerow([f"{a:.9g}", f"{b:.9g}"])


# --------------------------------------------------------------------------
# multi-objective sweep


@dataclass
class SweepPath:
    cells: list  # (eps_c, eps_l) pairs that produced this path
    outcome: RouteOutcome


def mo_sweep_graph(
    g: LinkGraph,
    src: int,
    dst: int,
    model,
    grid: EpsGrid | None = None,
    lam: float = DEFAULT_LAMBDA,
    K: int = 40,
    hop_limit: int = HOP_LIMIT,
) -> list[SweepPath]:
    """Route once per threshold cell with the penalized rule; identical paths are merged."""
    grid = grid or EpsGrid()
    topo = Topology(g, dst, K)
    found: dict[tuple, SweepPath] = {}
    for ec, el in grid.cells():
        out = route_on_graph(g, src, dst, Policy("dl-mo", model, (ec, el), lam), K, hop_limit, topo)
        if not out.delivered:
            continue
        if out.path in found:
            found[out.path].cells.append((ec, el))
        else:
            found[out.path] = SweepPath([(ec, el)], out)
    return list(found.values())


def mo_sweep(
    scenario: Scenario,
    ts: float,
    src_id,
    dst_id,
    model,
    grid: EpsGrid | None = None,
    lam: float = DEFAULT_LAMBDA,
    K: int = 40,
    rp: RadioParams | None = None,
    queue: QueueModel | None = None,
    seed: int = 0,
):
    """Sweep on the snapshot at ``ts``; returns (graph, merged paths)."""
    rp = rp or RadioParams.preset()
    queue = queue or QueueModel.testing()
    g = build_graph(snapshot(scenario, ts), queue, rp, scenario=scenario, rng=np.random.default_rng(seed))
    return g, mo_sweep_graph(g, g.index(src_id), g.index(dst_id), model, grid, lam, K)
