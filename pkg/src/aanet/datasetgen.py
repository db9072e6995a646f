"""Supervised samples for the cost-to-go estimators.

Feature and label units: angles in degrees, altitude in km, speed in m/s,
delays in ms, capacities in Mbps, lifetimes in minutes.

Dataset file layout (integers little-endian)::

    b"AANETDS1"                 8-byte magic
    uint16 version              currently 1
    uint32 header_len
    header                      UTF-8 JSON: kind, K, x_dim, y_dim, n_rows, units, grid, meta
    rows                        n_rows records of
                                  x     float64[x_dim]
                                  y     float64[y_dim]   (sentinel 1e8 where masked)
                                  mask  uint8[y_dim]     (1 = real label)
                                  group int32            (scenario index)
                                  ts    float64
                                  node  int32            (row's node index in its snapshot)
    uint32 crc32(rows)
"""
from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .flightdata import Scenario, snapshot
from .linkmodel import QueueModel, RadioParams
from .netgraph import LinkGraph, build_graph, dist_to, floyd_warshall_constrained, neighbors_ranked

log = logging.getLogger(__name__)

SENTINEL = 1e8
MAGIC = b"AANETDS1"
FORMAT_VERSION = 1
UNITS = {"delay": "ms", "capacity": "Mbps", "lifetime": "min", "angle": "deg", "alt": "km", "speed": "m/s"}


class DatasetError(ValueError):
    pass


def so_dim(K: int) -> int:
    return 3 * (K + 2)


def mo_dim(K: int) -> int:
    return 5 * (K + 2) + 2


@dataclass(frozen=True)
class EpsGrid:
    """Threshold grid in Mbps (capacity) and minutes (lifetime); index 0 is the base value."""

    c0: float = 20.0
    dc: float = 2.0
    B: int = 15
    l0: float = 0.0
    dl: float = 5.0
    A: int = 6

    def __post_init__(self):
        if self.dc <= 0 or self.dl <= 0:
            raise ValueError("grid steps must be positive")
        if self.A < 0 or self.B < 0:
            raise ValueError("grid counts must be nonnegative")

    @property
    def eps_c(self) -> np.ndarray:
        return self.c0 + self.dc * np.arange(self.B + 1)

    @property
    def eps_l(self) -> np.ndarray:
        return self.l0 + self.dl * np.arange(self.A + 1)

    def cells(self) -> list[tuple[float, float]]:
        """(eps_c, eps_l) pairs, lifetime-major as in the generator sweep."""
        return [(float(c), float(l)) for l in self.eps_l for c in self.eps_c]

    def to_json(self) -> dict:
        return {"c0": self.c0, "dc": self.dc, "B": self.B, "l0": self.l0, "dl": self.dl, "A": self.A}


# --------------------------------------------------------------------------
# features


def node_states(g: LinkGraph, moving: bool = False) -> np.ndarray:
    """Per-node feature block: (lat, lon, alt) or (lat, lon, alt, speed, heading)."""
    if g.geo is None:
        raise DatasetError("graph has no node positions")
    if not moving:
        return g.geo
    speed = g.speed if g.speed is not None else np.zeros(g.n)
    heading = g.heading if g.heading is not None else np.zeros(g.n)
    return np.column_stack([g.geo, speed, heading])


def features(states: np.ndarray, i: int, ranked, dest: int, K: int, eps=None) -> np.ndarray:
    """[s_i, s_b1 .. s_bK (zeros past the last neighbor), s_dest(, eps_c, eps_l)]."""
    w = states.shape[1]
    x = np.zeros((K + 2) * w + (2 if eps is not None else 0))
    x[:w] = states[i]
    for k, j in enumerate(ranked[:K]):
        x[(k + 1) * w : (k + 2) * w] = states[j]
    x[(K + 1) * w : (K + 2) * w] = states[dest]
    if eps is not None:
        x[-2:] = eps
    return x


# --------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    kind: str  # "SO" or "MO"
    K: int
    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    group: np.ndarray
    ts: np.ndarray
    node: np.ndarray
    grid: EpsGrid | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.x)

    @property
    def x_dim(self) -> int:
        return so_dim(self.K) if self.kind == "SO" else mo_dim(self.K)

    @property
    def y_dim(self) -> int:
        return self.K if self.kind == "SO" else 3 * self.K

    def subset(self, rows) -> Dataset:
        rows = np.asarray(rows)
        return Dataset(
            self.kind, self.K, self.x[rows], self.y[rows], self.mask[rows], self.group[rows],
            self.ts[rows], self.node[rows], self.grid, dict(self.meta),
        )

    @classmethod
    def empty(cls, kind: str, K: int, grid: EpsGrid | None = None) -> Dataset:
        xd = so_dim(K) if kind == "SO" else mo_dim(K)
        yd = K if kind == "SO" else 3 * K
        return cls(
            kind, K, np.zeros((0, xd)), np.zeros((0, yd)), np.zeros((0, yd), dtype=bool),
            np.zeros(0, dtype=np.int32), np.zeros(0), np.zeros(0, dtype=np.int32), grid,
        )


def concat(parts: list[Dataset]) -> Dataset:
    if not parts:
        raise DatasetError("nothing to concatenate")
    a = parts[0]
    for p in parts[1:]:
        if (p.kind, p.K) != (a.kind, a.K):
            raise DatasetError("cannot concatenate datasets of different kind or K")
    return Dataset(
        a.kind, a.K,
        np.concatenate([p.x for p in parts]), np.concatenate([p.y for p in parts]),
        np.concatenate([p.mask for p in parts]), np.concatenate([p.group for p in parts]),
        np.concatenate([p.ts for p in parts]), np.concatenate([p.node for p in parts]),
        a.grid, dict(a.meta),
    )


def _training_graph(scenario: Scenario, ts: float, dest_id, rp: RadioParams, queue: QueueModel, lifetimes: bool):
    snap = snapshot(scenario, ts)
    if dest_id not in snap.index:
        log.warning("destination %s absent at ts=%s, skipped", dest_id, ts)
        return None
    g = build_graph(snap, queue, rp, scenario=scenario, with_lifetime=lifetimes)
    return g, g.index(dest_id)


def gen_so_samples(
    scenario: Scenario,
    timestamps,
    dest_id,
    K: int = 10,
    rp: RadioParams | None = None,
    queue: QueueModel | None = None,
    group: int = 0,
) -> Dataset:
    """Minimum-delay labels under constant queuing, one sample per node and timestamp.

    Nodes whose K slots are all masked (no neighbor reaches the destination)
    produce no sample.
    """
    rp = rp or RadioParams.preset()
    queue = queue or QueueModel.training()
    xs, ys, ms, tss, nodes = [], [], [], [], []
    for ts in timestamps:
        got = _training_graph(scenario, ts, dest_id, rp, queue, lifetimes=False)
        if got is None:
            continue
        g, dest = got
        dstar = floyd_warshall_constrained(g).dist[:, dest] * 1e3
        states = node_states(g)
        for i in range(g.n):
            if i == dest:
                continue
            ranked = neighbors_ranked(g, i, dest, K)
            y = np.full(K, SENTINEL)
            m = np.zeros(K, dtype=bool)
            for k, j in enumerate(ranked):
                if np.isfinite(dstar[j]):
                    y[k] = dstar[j]
                    m[k] = True
            if not m.any():
                continue
            xs.append(features(states, i, ranked, dest, K))
            ys.append(y)
            ms.append(m)
            tss.append(ts)
            nodes.append(i)
    if not xs:
        return Dataset.empty("SO", K)
    n = len(xs)
    return Dataset(
        "SO", K, np.array(xs), np.array(ys), np.array(ms), np.full(n, group, dtype=np.int32),
        np.array(tss, dtype=float), np.array(nodes, dtype=np.int32), meta={"dest": str(dest_id)},
    )


def _follow(r, g: LinkGraph, dest: int):
    """Delay, capacity and lifetime of every node's extracted path to ``dest``."""
    n = g.n
    delay = r.dist[:, dest].copy()
    cap = np.full(n, np.inf)
    life = np.full(n, np.inf)
    cur = np.arange(n)
    live = (r.next[:, dest] >= 0) & (cur != dest)
    for _ in range(n):
        if not live.any():
            break
        idx = np.flatnonzero(live)
        nxt = r.next[cur[idx], dest]
        cap[idx] = np.minimum(cap[idx], g.capacity[cur[idx], nxt])
        life[idx] = np.minimum(life[idx], g.lifetime[cur[idx], nxt])
        cur[idx] = nxt
        live[idx] = nxt != dest
    unreachable = ~np.isfinite(delay)
    cap[unreachable] = 0.0
    life[unreachable] = 0.0
    return delay, cap, life


def mo_label_tables(g: LinkGraph, dest: int, grid: EpsGrid):
    """Per-cell (D*, C*, L*) of every node, with the carry-forward fallback.

    Returns three arrays of shape (A+1, B+1, n) in seconds / bit/s / seconds;
    D* is +inf where neither the cell nor any earlier fallback had a path.
    """
    n = g.n
    A, B = grid.A, grid.B
    Dt = np.empty((A + 1, B + 1, n))
    Ct = np.empty_like(Dt)
    Lt = np.empty_like(Dt)
    D1, C1, L1 = np.full(n, np.inf), np.zeros(n), np.zeros(n)
    for a, el in enumerate(grid.eps_l):
        D2, C2, L2 = D1.copy(), C1.copy(), L1.copy()
        for b, ec in enumerate(grid.eps_c):
            r = floyd_warshall_constrained(g, ec * 1e6, el * 60.0, strict=False)
            d, c, l = _follow(r, g, dest)
            ok = np.isfinite(d)
            Dt[a, b] = np.where(ok, d, D2)
            Ct[a, b] = np.where(ok, c, C2)
            Lt[a, b] = np.where(ok, l, L2)
            D2, C2, L2 = Dt[a, b].copy(), Ct[a, b].copy(), Lt[a, b].copy()
            if b == 0:
                D1 = np.where(ok, d, D1)
                C1 = np.where(ok, c, C1)
                L1 = np.where(ok, l, L1)
    return Dt, Ct, Lt


def gen_mo_samples(
    scenario: Scenario,
    timestamps,
    dest_id,
    K: int = 40,
    grid: EpsGrid | None = None,
    rp: RadioParams | None = None,
    queue: QueueModel | None = None,
    group: int = 0,
) -> Dataset:
    """(D*, C*, L*) labels per ranked neighbor for every threshold cell.

    A sample is kept when the forwarding node's own D* is finite. Slots of
    padded or unreachable neighbors are masked; for a neighbor that is the
    destination only the delay slot (0) is kept.
    """
    rp = rp or RadioParams.preset()
    queue = queue or QueueModel.training()
    grid = grid or EpsGrid()
    xs, ys, ms, tss, nodes = [], [], [], [], []
    for ts in timestamps:
        got = _training_graph(scenario, ts, dest_id, rp, queue, lifetimes=True)
        if got is None:
            continue
        g, dest = got
        Dt, Ct, Lt = mo_label_tables(g, dest, grid)
        states = node_states(g, moving=True)
        ranked = {i: neighbors_ranked(g, i, dest, K) for i in range(g.n) if i != dest}
        for a, el in enumerate(grid.eps_l):
            for b, ec in enumerate(grid.eps_c):
                d, c, l = Dt[a, b] * 1e3, Ct[a, b] / 1e6, Lt[a, b] / 60.0
                for i, rk in ranked.items():
                    if not np.isfinite(d[i]):
                        continue
                    y = np.full(3 * K, SENTINEL)
                    m = np.zeros(3 * K, dtype=bool)
                    for k, j in enumerate(rk):
                        if not np.isfinite(d[j]):
                            continue
                        y[k] = d[j]
                        m[k] = True
                        if j != dest:
                            y[K + k], y[2 * K + k] = c[j], l[j]
                            m[K + k] = m[2 * K + k] = True
                    xs.append(features(states, i, rk, dest, K, eps=(ec, el)))
                    ys.append(y)
                    ms.append(m)
                    tss.append(ts)
                    nodes.append(i)
    if not xs:
        return Dataset.empty("MO", K, grid)
    n = len(xs)
    return Dataset(
        "MO", K, np.array(xs), np.array(ys), np.array(ms), np.full(n, group, dtype=np.int32),
        np.array(tss, dtype=float), np.array(nodes, dtype=np.int32), grid, meta={"dest": str(dest_id)},
    )


# --------------------------------------------------------------------------
# splitting


def split_counts(n_groups: int, fractions) -> list[int]:
    """Largest-remainder apportionment of ``n_groups`` whole groups."""
    f = np.asarray(fractions, dtype=float)
    if np.any(f < 0) or not np.isclose(f.sum(), 1.0):
        raise DatasetError(f"split fractions must be nonnegative and sum to 1, got {list(fractions)}")
    raw = f * n_groups
    counts = np.floor(raw + 1e-9).astype(int)
    rest = n_groups - counts.sum()
    for k in np.argsort(-(raw - counts), kind="stable")[:rest]:
        counts[k] += 1
    if np.any((f > 0) & (counts == 0)):
        raise DatasetError(f"{n_groups} scenarios are too few for split {list(fractions)}")
    return [int(c) for c in counts]


def split_dataset(ds: Dataset, fractions=(0.6, 0.3, 0.1), seed: int = 0) -> tuple[Dataset, ...]:
    """Split by scenario (``group``), never by individual sample."""
    groups = np.unique(ds.group)
    counts = split_counts(len(groups), fractions)
    order = np.random.default_rng(seed).permutation(groups)
    out = []
    start = 0
    for c in counts:
        chosen = order[start : start + c]
        start += c
        out.append(ds.subset(np.flatnonzero(np.isin(ds.group, chosen))))
    return tuple(out)


# --------------------------------------------------------------------------
# serialization


def _row_dtype(x_dim: int, y_dim: int) -> np.dtype:
    return np.dtype(
        [("x", "<f8", (x_dim,)), ("y", "<f8", (y_dim,)), ("mask", "u1", (y_dim,)),
         ("group", "<i4"), ("ts", "<f8"), ("node", "<i4")]
    )


def save_dataset(ds: Dataset, path) -> None:
    dt = _row_dtype(ds.x_dim, ds.y_dim)
    rows = np.zeros(len(ds), dtype=dt)
    rows["x"], rows["y"], rows["mask"] = ds.x, np.where(ds.mask, ds.y, SENTINEL), ds.mask
    rows["group"], rows["ts"], rows["node"] = ds.group, ds.ts, ds.node
    header = json.dumps(
        {
            "kind": ds.kind, "K": ds.K, "x_dim": ds.x_dim, "y_dim": ds.y_dim, "n_rows": len(ds),
            "units": UNITS, "sentinel": SENTINEL,
            "grid": ds.grid.to_json() if ds.grid else None, "meta": ds.meta,
        },
        sort_keys=True,
    ).encode("utf-8")
    payload = rows.tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_dataset(path, kind: str | None = None) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC or len(blob) < 14:
        raise DatasetError(f"{path}: not a dataset file")
    version, hlen = struct.unpack("<HI", blob[8:14])
    if version != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported dataset version {version}")
    try:
        h = json.loads(blob[14 : 14 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{path}: corrupt header ({exc})") from None
    if kind is not None and h["kind"] != kind:
        raise DatasetError(f"{path}: expected a {kind} dataset, found {h['kind']}")
    K = int(h["K"])
    xd = so_dim(K) if h["kind"] == "SO" else mo_dim(K)
    yd = K if h["kind"] == "SO" else 3 * K
    if (h["x_dim"], h["y_dim"]) != (xd, yd):
        raise DatasetError(f"{path}: dims {h['x_dim']}/{h['y_dim']} inconsistent with {h['kind']} K={K}")
    dt = _row_dtype(xd, yd)
    start = 14 + hlen
    end = start + dt.itemsize * int(h["n_rows"])
    if len(blob) != end + 4:
        raise DatasetError(f"{path}: expected {end + 4} bytes, found {len(blob)}")
    payload = blob[start:end]
    if struct.unpack("<I", blob[end:])[0] != zlib.crc32(payload):
        raise DatasetError(f"{path}: checksum mismatch")
    rows = np.frombuffer(payload, dtype=dt)
    grid = EpsGrid(**h["grid"]) if h.get("grid") else None
    return Dataset(
        h["kind"], K, rows["x"].copy(), rows["y"].copy(), rows["mask"].astype(bool), rows["group"].copy(),
        rows["ts"].copy(), rows["node"].copy(), grid, h.get("meta") or {},
    )
