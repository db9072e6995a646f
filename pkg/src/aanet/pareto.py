"""Pareto machinery for (delay, capacity, lifetime) routing.

Delay is minimized; capacity and lifetime are maximized.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .netgraph import LinkGraph, Path, extract_path, floyd_warshall_constrained, path_metrics

BRUTE_FORCE_MAX_NODES = 12


@dataclass(frozen=True)
class ObjectiveVector:
    delay_s: float
    capacity_bps: float
    lifetime_s: float

    @classmethod
    def of(cls, m) -> ObjectiveVector:
        return cls(m.delay_s, m.capacity_bps, m.lifetime_s)

    def key(self) -> tuple[float, float, float]:
        """Sort key: lower is better in every component."""
        return (self.delay_s, -self.capacity_bps, -self.lifetime_s)


def dominates(a: ObjectiveVector, b: ObjectiveVector) -> bool:
    ka, kb = a.key(), b.key()
    return all(x <= y for x, y in zip(ka, kb)) and any(x < y for x, y in zip(ka, kb))


def _close(a: float, b: float, rel: float) -> bool:
    if a == b:
        return True
    return math.isfinite(a) and math.isfinite(b) and abs(a - b) <= rel * max(abs(a), abs(b))


def same_vector(a: ObjectiveVector, b: ObjectiveVector, rel: float = 1e-9) -> bool:
    return all(_close(x, y, rel) for x, y in zip(a.key(), b.key()))


@dataclass
class ParetoSet:
    solutions: list[tuple[Path, ObjectiveVector]] = field(default_factory=list)
    solver_calls: int = 0
    outer_iterations: int = 0
    trace: list[tuple[int, Path, ObjectiveVector]] = field(default_factory=list)

    def __len__(self):
        return len(self.solutions)

    def __iter__(self):
        return iter(self.solutions)

    def paths(self) -> list[Path]:
        return [p for p, _ in self.solutions]

    def vectors(self) -> list[ObjectiveVector]:
        return sorted((v for _, v in self.solutions), key=ObjectiveVector.key)

    def add(self, path: Path, vec: ObjectiveVector) -> bool:
        if any(p == path for p, _ in self.solutions):
            return False
        self.solutions.append((path, vec))
        return True


def same_front(a: ParetoSet, b: ParetoSet, rel: float = 1e-9) -> bool:
    """Equality of the two fronts as multisets of objective vectors."""
    va, vb = a.vectors(), b.vectors()
    return len(va) == len(vb) and all(same_vector(x, y, rel) for x, y in zip(va, vb))


def solve_eps_constraint(g: LinkGraph, src: int, dst: int, eps_c: float, eps_l: float, strict: bool = False):
    """Minimum-delay path whose links all meet the capacity / lifetime thresholds.

    Returns ``(path, ObjectiveVector)`` or None if no feasible path exists.
    """
    r = floyd_warshall_constrained(g, eps_c, eps_l, strict=strict)
    p = extract_path(r, src, dst)
    if p is None:
        return None
    return p, ObjectiveVector.of(path_metrics(g, p))


def pomor(g: LinkGraph, src: int, dst: int) -> ParetoSet:
    """Every Pareto-optimal path from ``src`` to ``dst`` via nested ε-constraint sweeps.

    The inner sweep re-solves with the capacity threshold raised to the
    capacity of the last solution; the outer sweep raises the lifetime
    threshold to the smallest lifetime seen in the previous inner sweep.
    Thresholds are strict, and the first solve of each sweep is unconstrained
    in that dimension.
    """
    out = ParetoSet()
    if src == dst:
        out.add((src,), ObjectiveVector(0.0, math.inf, math.inf))
        return out
    eps_l: float | None = -math.inf
    while eps_l is not None:
        out.outer_iterations += 1
        eps_c: float | None = -math.inf
        lifetimes = []
        while eps_c is not None:
            sol = solve_eps_constraint(g, src, dst, eps_c, eps_l, strict=True)
            out.solver_calls += 1
            if sol is None:
                eps_c = None
                continue
            path, vec = sol
            eps_c = vec.capacity_bps
            out.add(path, vec)
            out.trace.append((out.outer_iterations, path, vec))
            lifetimes.append(vec.lifetime_s)
        eps_l = min(lifetimes) if lifetimes else None
    return out


def simple_paths(g: LinkGraph, src: int, dst: int):
    """All simple paths src -> dst (depth-first, neighbors in index order)."""
    if src == dst:
        yield (src,)
        return
    stack = [(src, iter(g.neighbors(src)))]
    path = [src]
    on_path = {src}
    while stack:
        _, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            stack.pop()
            on_path.discard(path.pop())
            continue
        nxt = int(nxt)
        if nxt in on_path:
            continue
        if nxt == dst:
            yield tuple(path) + (dst,)
            continue
        path.append(nxt)
        on_path.add(nxt)
        stack.append((nxt, iter(g.neighbors(nxt))))


def non_dominated(items: list[tuple[Path, ObjectiveVector]]) -> list[tuple[Path, ObjectiveVector]]:
    items = sorted(items, key=lambda pv: pv[1].key())
    keep = []
    for p, v in items:
        if not any(dominates(w, v) for _, w in keep):
            keep.append((p, v))
    return keep


def brute_force_pareto(g: LinkGraph, src: int, dst: int, max_nodes: int = BRUTE_FORCE_MAX_NODES) -> ParetoSet:
    if g.n > max_nodes:
        raise ValueError(f"brute-force enumeration limited to {max_nodes} nodes, graph has {g.n}")
    items = [(p, ObjectiveVector.of(path_metrics(g, p))) for p in simple_paths(g, src, dst)]
    out = ParetoSet()
    for p, v in non_dominated(items):
        out.add(p, v)
    return out


def write_pareto_csv(front, path, ids=None) -> None:
    """One row per solution: delay_ms, capacity_mbps, lifetime_min, hop_count, node ids..."""
    rows = front.solutions if isinstance(front, ParetoSet) else list(front)
    rows = sorted(rows, key=lambda pv: pv[1].key())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delay_ms", "capacity_mbps", "lifetime_min", "hop_count", "node_ids"])
        for p, v in rows:
            names = [str(ids[i]) if ids is not None else str(i) for i in p]
            w.writerow([f"{v.delay_s * 1e3:.9g}", f"{v.capacity_bps / 1e6:.9g}", f"{v.lifetime_s / 60:.9g}", len(p) - 1, *names])


def read_pareto_csv(path) -> list[tuple[tuple[str, ...], ObjectiveVector]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            d, c, l = (float(x) for x in row[:3])
            out.append((tuple(row[4:]), ObjectiveVector(d / 1e3, c * 1e6, l * 60)))
    return out


def front_array(front: ParetoSet) -> np.ndarray:
    return np.array([v.key() for v in front.vectors()])
