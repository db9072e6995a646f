"""Flight scenarios: trajectories, interpolation, synthetic generation and snapshots.

Flight data files are line-delimited CSV::

    flight_id, ts_s, lat_deg, lon_deg, alt_km, speed_mps, heading_deg

Ground-station files hold ``gs_id, lat_deg, lon_deg``. Lines starting with
``#`` and blank lines are ignored in both.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .geo import EARTH_RADIUS_KM, GeoPos, central_angle, initial_bearing_deg, slerp_latlon, wrap_lon

log = logging.getLogger(__name__)

SAMPLING_INTERVAL_S = 10


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario data."""


@dataclass(frozen=True)
class FlightRecord:
    ts: float
    pos: GeoPos
    speed_mps: float
    heading_deg: float

    def __post_init__(self):
        if self.speed_mps < 0:
            raise ValueError(f"negative speed: {self.speed_mps}")
        if not 0.0 <= self.heading_deg < 360.0:
            raise ValueError(f"heading out of range: {self.heading_deg}")


@dataclass(frozen=True)
class NodeState:
    id: str
    pos: GeoPos
    speed_mps: float = 0.0
    heading_deg: float = 0.0


@dataclass(frozen=True)
class Trajectory:
    flight_id: str
    records: tuple[FlightRecord, ...]

    def __post_init__(self):
        if not self.records:
            raise ScenarioError(f"flight {self.flight_id}: no records")
        ts = [r.ts for r in self.records]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ScenarioError(f"flight {self.flight_id}: timestamps not strictly increasing")

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "ts": np.array([r.ts for r in self.records], dtype=float),
            "lat": np.array([r.pos.lat_deg for r in self.records]),
            "lon": np.array([r.pos.lon_deg for r in self.records]),
            "alt": np.array([r.pos.alt_km for r in self.records]),
            "speed": np.array([r.speed_mps for r in self.records]),
            "heading": np.array([r.heading_deg for r in self.records]),
        }

    @property
    def start(self) -> float:
        return self.records[0].ts

    @property
    def end(self) -> float:
        return self.records[-1].ts

    def shifted(self, dt: float) -> Trajectory:
        recs = tuple(FlightRecord(r.ts + dt, r.pos, r.speed_mps, r.heading_deg) for r in self.records)
        return Trajectory(self.flight_id, recs)


@dataclass(frozen=True)
class Scenario:
    flights: tuple[Trajectory, ...]
    ground_stations: tuple[tuple[str, GeoPos], ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ids = [t.flight_id for t in self.flights] + [g for g, _ in self.ground_stations]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise ScenarioError(f"duplicate ids: {sorted(dup)}")
        for gid, pos in self.ground_stations:
            if pos.alt_km != 0.0:
                raise ScenarioError(f"ground station {gid} must sit at altitude 0")

    @cached_property
    def by_id(self) -> dict[str, Trajectory]:
        return {t.flight_id: t for t in self.flights}

    @cached_property
    def stations(self) -> dict[str, GeoPos]:
        return dict(self.ground_stations)

    @property
    def interval_s(self) -> float:
        return float(self.meta.get("interval_s", SAMPLING_INTERVAL_S))

    def time_span(self) -> tuple[float, float]:
        return min(t.start for t in self.flights), max(t.end for t in self.flights)

    def track(self, node_id: str, times) -> np.ndarray:
        """Positions (lat, lon, alt) of a node at ``times``; NaN rows where absent."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.full((times.size, 3), np.nan)
        if node_id in self.stations:
            p = self.stations[node_id]
            out[:] = (p.lat_deg, p.lon_deg, p.alt_km)
            return out
        a = self.by_id[node_id].arrays
        ok = (times >= a["ts"][0]) & (times <= a["ts"][-1])
        if ok.any():
            t = times[ok]
            out[ok, 0] = np.interp(t, a["ts"], a["lat"])
            out[ok, 1] = _interp_circular(t, a["ts"], a["lon"], period=360.0, lo=-180.0)
            out[ok, 2] = np.interp(t, a["ts"], a["alt"])
        return out


def _interp_circular(t, ts, values, period, lo):
    """Linear interpolation along the shortest arc of a circular quantity."""
    unwrapped = np.unwrap(np.asarray(values, dtype=float), period=period)
    v = np.interp(t, ts, unwrapped)
    return (v - lo) % period + lo


def position_at(traj: Trajectory, ts: float) -> NodeState | None:
    a = traj.arrays
    if ts < a["ts"][0] or ts > a["ts"][-1]:
        return None
    i = int(np.searchsorted(a["ts"], ts))
    if a["ts"][i] == ts:
        r = traj.records[i]
        return NodeState(traj.flight_id, r.pos, r.speed_mps, r.heading_deg)
    lat = float(np.interp(ts, a["ts"], a["lat"]))
    lon = float(_interp_circular(ts, a["ts"], a["lon"], 360.0, -180.0))
    alt = float(np.interp(ts, a["ts"], a["alt"]))
    speed = float(np.interp(ts, a["ts"], a["speed"]))
    heading = float(_interp_circular(ts, a["ts"], a["heading"], 360.0, 0.0)) % 360.0
    return NodeState(traj.flight_id, GeoPos(lat, lon, alt), speed, heading)


@dataclass(frozen=True)
class Snapshot:
    ts: float
    nodes: tuple[NodeState, ...]

    @cached_property
    def ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    @cached_property
    def index(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}


def snapshot(s: Scenario, ts: float) -> Snapshot:
    """All nodes present at ``ts``, sorted by id (node index order == id order)."""
    nodes = [NodeState(gid, pos) for gid, pos in s.ground_stations]
    for traj in s.flights:
        st = position_at(traj, ts)
        if st is not None:
            nodes.append(st)
    nodes.sort(key=lambda n: n.id)
    return Snapshot(float(ts), tuple(nodes))


# --------------------------------------------------------------------------
# file I/O


def _parse_float(tok: str, lineno: int, path) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ScenarioError(f"{path}:{lineno}: not a number: {tok!r}") from None


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield lineno, [tok.strip() for tok in line.split(",")]


def load_scenario(path, stations_path=None, interval_s: float = SAMPLING_INTERVAL_S) -> Scenario:
    recs: dict[str, list[FlightRecord]] = {}
    for lineno, toks in _data_lines(path):
        if len(toks) != 7:
            raise ScenarioError(f"{path}:{lineno}: expected 7 fields, got {len(toks)}")
        fid = toks[0]
        ts, lat, lon, alt, speed, heading = (_parse_float(t, lineno, path) for t in toks[1:])
        try:
            rec = FlightRecord(ts, GeoPos(lat, lon, alt), speed, heading)
        except ValueError as exc:
            raise ScenarioError(f"{path}:{lineno}: {exc}") from None
        recs.setdefault(fid, []).append(rec)
    if not recs:
        raise ScenarioError(f"{path}: no flights")

    flights = []
    for fid, rs in recs.items():
        rs.sort(key=lambda r: r.ts)
        for a, b in zip(rs, rs[1:]):
            if a.ts == b.ts:
                raise ScenarioError(f"{path}: flight {fid} has non-monotone timestamps (repeated {a.ts})")
        flights.append(Trajectory(fid, tuple(rs)))

    stations = []
    if stations_path is not None:
        for lineno, toks in _data_lines(stations_path):
            if len(toks) != 3:
                raise ScenarioError(f"{stations_path}:{lineno}: expected 3 fields, got {len(toks)}")
            lat, lon = (_parse_float(t, lineno, stations_path) for t in toks[1:])
            try:
                stations.append((toks[0], GeoPos(lat, lon, 0.0)))
            except ValueError as exc:
                raise ScenarioError(f"{stations_path}:{lineno}: {exc}") from None
    return Scenario(tuple(flights), tuple(stations), {"interval_s": interval_s})


def save_scenario(s: Scenario, path, stations_path=None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# flight_id, ts_s, lat_deg, lon_deg, alt_km, speed_mps, heading_deg\n")
        for traj in s.flights:
            for r in traj.records:
                p = r.pos
                fh.write(
                    f"{traj.flight_id},{r.ts:.0f},{p.lat_deg!r},{p.lon_deg!r},{p.alt_km!r},"
                    f"{r.speed_mps!r},{r.heading_deg!r}\n"
                )
    if stations_path is not None:
        with open(stations_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# gs_id, lat_deg, lon_deg\n")
            for gid, p in s.ground_stations:
                fh.write(f"{gid},{p.lat_deg!r},{p.lon_deg!r}\n")


# --------------------------------------------------------------------------
# synthetic scenarios


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the great-circle flight generator.

    With ``staggered=False`` every flight is airborne for the whole
    ``duration_s``, starting at its origin and flying toward its destination
    (continuing along the same great circle if it gets there early). With
    ``staggered=True`` each flight flies origin to destination once, departing
    at a uniform time chosen so that traffic is stationary over the window;
    only flights airborne for at least two samples are kept.
    """

    lat_range: tuple[float, float] = (45.0, 60.0)
    lon_range: tuple[float, float] = (-40.0, -10.0)
    n_flights: int = 50
    duration_s: float = 3600.0
    alt_range_km: tuple[float, float] = (9.0, 12.0)
    speed_range_mps: tuple[float, float] = (220.0, 260.0)
    interval_s: float = SAMPLING_INTERVAL_S
    staggered: bool = False
    corridor: bool = False
    min_route_km: float = 300.0
    ground_stations: tuple[tuple[str, float, float], ...] = (("GS", 52.0, -10.5),)

    def validate(self) -> None:
        if self.n_flights <= 0:
            raise ValueError("n_flights must be positive")
        if self.duration_s <= 0 or self.interval_s <= 0:
            raise ValueError("duration_s and interval_s must be positive")
        if self.lat_range[0] >= self.lat_range[1] or self.lon_range[0] >= self.lon_range[1]:
            raise ValueError("empty bounding box")
        if self.alt_range_km[0] < 0 or self.alt_range_km[0] > self.alt_range_km[1]:
            raise ValueError("bad altitude band")
        if self.speed_range_mps[0] <= 0 or self.speed_range_mps[0] > self.speed_range_mps[1]:
            raise ValueError("bad speed band")
        if not self.ground_stations:
            raise ValueError("at least one ground station is required")


def _draw_endpoints(cfg: SynthConfig, rng: np.random.Generator):
    (la0, la1), (lo0, lo1) = cfg.lat_range, cfg.lon_range
    while True:
        lat = rng.uniform(la0, la1, size=2)
        if cfg.corridor:
            # origin in the western fifth, destination in the eastern fifth
            w = (lo1 - lo0) / 5.0
            lon = np.array([rng.uniform(lo0, lo0 + w), rng.uniform(lo1 - w, lo1)])
            if rng.random() < 0.5:
                lat, lon = lat[::-1], lon[::-1]
        else:
            lon = rng.uniform(lo0, lo1, size=2)
        sep_km = float(central_angle(lat[0], lon[0], lat[1], lon[1])) * EARTH_RADIUS_KM
        if sep_km >= cfg.min_route_km:
            return lat, lon, sep_km


def _fly(fid, lat, lon, route_km, alt, speed, t0, times) -> Trajectory:
    """Great-circle track departing (lat[0], lon[0]) at t0, sampled at ``times``."""
    route_m = route_km * 1000.0
    frac = (times - t0) * speed / route_m
    la, lo = slerp_latlon(lat[0], lon[0], lat[1], lon[1], frac)
    la2, lo2 = slerp_latlon(lat[0], lon[0], lat[1], lon[1], frac + 1000.0 / route_m)
    hd = initial_bearing_deg(la, lo, la2, lo2)
    recs = tuple(
        FlightRecord(float(t), GeoPos(float(a), float(o), alt), speed, float(h) % 360.0)
        for t, a, o, h in zip(times, la, lo, hd)
    )
    return Trajectory(fid, recs)


def synth_scenario(cfg: SynthConfig, seed: int) -> Scenario:
    cfg.validate()
    rng = np.random.default_rng(seed)
    step = cfg.interval_s
    grid = np.arange(0.0, cfg.duration_s + step / 2, step)
    flights = []
    n = 0
    while len(flights) < cfg.n_flights:
        lat, lon, route_km = _draw_endpoints(cfg, rng)
        alt = float(np.round(rng.uniform(*cfg.alt_range_km), 3))
        speed = float(np.round(rng.uniform(*cfg.speed_range_mps), 1))
        fid = f"F{n:04d}"
        n += 1
        if not cfg.staggered:
            flights.append(_fly(fid, lat, lon, route_km, alt, speed, 0.0, grid))
            continue
        flight_s = route_km * 1000.0 / speed
        dep = rng.uniform(-flight_s, cfg.duration_s)
        times = grid[(grid >= dep) & (grid <= dep + flight_s)]
        if times.size >= 2:
            flights.append(_fly(fid, lat, lon, route_km, alt, speed, dep, times))
    stations = tuple((gid, GeoPos(la, float(wrap_lon(lo)), 0.0)) for gid, la, lo in cfg.ground_stations)
    return Scenario(tuple(flights), stations, {"interval_s": step, "seed": seed})


def time_shift_augment(s: Scenario, sigma_s: float, seed: int) -> Scenario:
    """Shift every flight along the timeline by an independent N(0, sigma_s²) draw.

    Shifts are rounded to the sampling grid. ``meta["shifts"]`` records them.
    """
    if sigma_s < 0:
        raise ValueError("sigma_s must be nonnegative")
    rng = np.random.default_rng(seed)
    step = s.interval_s
    draws = rng.normal(0.0, sigma_s, size=len(s.flights)) if sigma_s > 0 else np.zeros(len(s.flights))
    shifts = np.round(draws / step) * step
    flights = tuple(t.shifted(float(dt)) if dt else t for t, dt in zip(s.flights, shifts))
    meta = dict(s.meta)
    meta["shifts"] = {t.flight_id: float(dt) for t, dt in zip(s.flights, shifts)}
    return Scenario(flights, s.ground_stations, meta)


def active_flight_count(s: Scenario, ts: float) -> int:
    return sum(1 for t in s.flights if t.start <= ts <= t.end)


def snapshot_times(s: Scenario, start: float, stop: float, every_s: float) -> list[float]:
    n = int(math.floor((stop - start) / every_s + 1e-9)) + 1
    return [start + k * every_s for k in range(n)]
