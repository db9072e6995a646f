"""Air-to-air link physics: Shannon capacity, per-hop delay and link lifetime."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geo import GeoPos, cartesian_array, max_link_range_array

BOLTZMANN_ROUNDED = 1.3e-23  # value used for the Ku-band preset


class LinkError(ValueError):
    """Raised for links that are not physically feasible."""


def db_to_lin(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_w(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def noise_power(k: float, T: float, W: float, F_lin: float) -> float:
    """Thermal noise power kTWF in watts."""
    return k * T * W * F_lin


@dataclass(frozen=True)
class RadioParams:
    bandwidth_hz: float
    carrier_hz: float
    tx_power_w: float
    tx_gain_lin: float
    rx_gain_lin: float
    noise_power_w: float
    packet_bits: float = 8192.0
    light_speed_mps: float = 3e8

    def __post_init__(self):
        for name, v in vars(self).items():
            if not v > 0:
                raise ValueError(f"{name} must be strictly positive, got {v}")

    @classmethod
    def preset(cls, name: str = "paper-ku-band") -> RadioParams:
        if name not in PRESETS:
            raise KeyError(f"unknown radio preset {name!r}; known: {sorted(PRESETS)}")
        return PRESETS[name]


PRESETS = {
    "paper-ku-band": RadioParams(
        bandwidth_hz=6e6,
        carrier_hz=14e9,
        tx_power_w=dbm_to_w(30.0),
        tx_gain_lin=db_to_lin(25.0),
        rx_gain_lin=db_to_lin(25.0),
        noise_power_w=noise_power(BOLTZMANN_ROUNDED, 223.15, 6e6, db_to_lin(4.0)),
        packet_bits=8192.0,
        light_speed_mps=3e8,
    ),
}


def snr(d_km, rp: RadioParams):
    d_m = np.asarray(d_km, dtype=float) * 1000.0
    path_gain = (rp.light_speed_mps / (4 * math.pi * rp.carrier_hz * d_m)) ** 2
    return rp.tx_power_w * rp.tx_gain_lin * rp.rx_gain_lin / rp.noise_power_w * path_gain


def link_capacity(d_km, rp: RadioParams):
    """Free-space Shannon capacity in bit/s. Accepts scalars or arrays."""
    d = np.asarray(d_km, dtype=float)
    if np.any(d <= 0):
        raise LinkError("link distance must be positive")
    c = rp.bandwidth_hz * np.log2(1.0 + snr(d, rp))
    return float(c) if c.ndim == 0 else c


def link_delay_from_distance(d_km, q_s, rp: RadioParams):
    """Queuing + transmission + propagation delay in seconds."""
    cap = link_capacity(d_km, rp)
    return q_s + rp.packet_bits / cap + np.asarray(d_km) * 1000.0 / rp.light_speed_mps


def link_delay(i, j, q_i: float, rp: RadioParams) -> float:
    """Delay of sending one packet from node ``i`` to node ``j`` (NodeStates or GeoPos)."""
    pi = getattr(i, "pos", i)
    pj = getattr(j, "pos", j)
    a = cartesian_array(pi.lat_deg, pi.lon_deg, pi.alt_km)
    b = cartesian_array(pj.lat_deg, pj.lon_deg, pj.alt_km)
    d = float(np.linalg.norm(a - b))
    if d > float(max_link_range_array(pi.alt_km, pj.alt_km)):
        raise LinkError(f"nodes are not visible to each other (d = {d:.1f} km)")
    if d == 0.0:
        raise LinkError("coincident nodes have no defined link delay")
    return float(link_delay_from_distance(d, q_i, rp))


# --------------------------------------------------------------------------
# queuing


@dataclass(frozen=True)
class QueueModel:
    """Per-node queuing delay, in seconds.

    ``constant`` gives every node ``value_s``; ``truncgauss`` draws each node
    independently from N(mean_s, std_s²) restricted to [lower_s, inf).
    """

    kind: str = "constant"
    value_s: float = 0.010
    mean_s: float = 0.010
    std_s: float = 0.005
    lower_s: float = 0.001

    def __post_init__(self):
        if self.kind not in ("constant", "truncgauss"):
            raise ValueError(f"unknown queue model kind {self.kind!r}")
        if self.kind == "constant" and self.value_s < 0:
            raise ValueError("constant queuing delay must be nonnegative")
        if self.kind == "truncgauss" and (self.std_s < 0 or self.lower_s < 0):
            raise ValueError("bad truncated-Gaussian parameters")

    @classmethod
    def training(cls) -> QueueModel:
        return cls("constant", value_s=0.010)

    @classmethod
    def testing(cls) -> QueueModel:
        return cls("truncgauss", mean_s=0.010, std_s=0.005, lower_s=0.001)

    def sample(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, self.value_s)
        if rng is None:
            raise ValueError("a random generator is required for truncgauss sampling")
        out = np.empty(n)
        filled = 0
        while filled < n:
            draw = rng.normal(self.mean_s, self.std_s, size=2 * (n - filled) + 8)
            draw = draw[draw >= self.lower_s][: n - filled]
            out[filled : filled + draw.size] = draw
            filled += draw.size
        return out


# --------------------------------------------------------------------------
# lifetime

LIFETIME_HORIZON_S = 3600.0
LIFETIME_RESOLUTION_S = 1.0


def _track(obj, times) -> np.ndarray:
    """(lat, lon, alt) rows for a Trajectory / GeoPos / (scenario, id) at ``times``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if isinstance(obj, GeoPos):
        return np.tile([obj.lat_deg, obj.lon_deg, obj.alt_km], (times.size, 1))
    if isinstance(obj, tuple):
        scenario, node_id = obj
        return scenario.track(node_id, times)
    from .flightdata import Scenario, Trajectory

    if isinstance(obj, Trajectory):
        return Scenario((obj,)).track(obj.flight_id, times)
    raise TypeError(f"cannot track {type(obj).__name__}")


def _visible_rows(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Pairwise visibility of matching rows; absent (NaN) positions are never visible."""
    ca = cartesian_array(pa[..., 0], pa[..., 1], pa[..., 2])
    cb = cartesian_array(pb[..., 0], pb[..., 1], pb[..., 2])
    d = np.linalg.norm(ca - cb, axis=-1)
    with np.errstate(invalid="ignore"):
        ok = d <= max_link_range_array(pa[..., 2], pb[..., 2])
    return ok & ~np.isnan(d)


def link_lifetime(
    traj_i,
    traj_j,
    t: float,
    horizon_s: float = LIFETIME_HORIZON_S,
    resolution_s: float = LIFETIME_RESOLUTION_S,
    scan_step_s: float = 10.0,
) -> float:
    """Time (s) the pair stays visible from ``t``: coarse scan, then bisection.

    ``traj_i`` / ``traj_j`` may be a Trajectory, a fixed GeoPos, or a
    ``(scenario, node_id)`` pair. Capped at ``horizon_s``.
    """
    offsets = np.arange(0.0, horizon_s + scan_step_s, scan_step_s)
    offsets[-1] = min(offsets[-1], horizon_s)
    times = t + offsets
    vis = _visible_rows(_track(traj_i, times), _track(traj_j, times))
    if not vis[0]:
        raise LinkError("pair not visible at the starting time")
    lost = np.flatnonzero(~vis)
    if lost.size == 0:
        return float(horizon_s)
    k = int(lost[0])
    return _bisect(traj_i, traj_j, float(offsets[k - 1]), float(offsets[k]), t, resolution_s)


def _bisect(a, b, lo, hi, t, resolution_s):
    """Shrink [lo, hi] (visible at lo, not at hi) to width <= resolution; returns lo."""
    while hi - lo > resolution_s:
        mid = 0.5 * (lo + hi)
        if _visible_rows(_track(a, t + mid), _track(b, t + mid))[0]:
            lo = mid
        else:
            hi = mid
    return lo


def lifetime_matrix(
    scenario,
    ids: list[str],
    t: float,
    adjacency: np.ndarray,
    horizon_s: float = LIFETIME_HORIZON_S,
    resolution_s: float = LIFETIME_RESOLUTION_S,
    scan_step_s: float = 10.0,
) -> np.ndarray:
    """Lifetimes for every True entry of ``adjacency``; the coarse scan is vectorized."""
    n = len(ids)
    offsets = np.arange(0.0, horizon_s + scan_step_s, scan_step_s)
    offsets[-1] = min(offsets[-1], horizon_s)
    times = t + offsets
    tracks = np.stack([scenario.track(i, times) for i in ids], axis=1)  # (T, n, 3)
    cart = cartesian_array(tracks[..., 0], tracks[..., 1], tracks[..., 2])
    d = np.linalg.norm(cart[:, :, None, :] - cart[:, None, :, :], axis=-1)
    with np.errstate(invalid="ignore"):
        vis = d <= max_link_range_array(tracks[:, :, None, 2], tracks[:, None, :, 2])
    out = np.zeros((n, n))
    never_lost = vis.all(axis=0)
    first_lost = np.argmin(vis, axis=0)
    for i, j in zip(*np.nonzero(adjacency)):
        if never_lost[i, j]:
            out[i, j] = horizon_s
        elif i < j or not adjacency[j, i]:
            k = first_lost[i, j]
            out[i, j] = _bisect((scenario, ids[i]), (scenario, ids[j]), offsets[k - 1], offsets[k], t, resolution_s)
        else:
            out[i, j] = out[j, i]  # visibility is symmetric
    return out
