"""Spherical-Earth geometry for airborne and ground nodes.

Positions enter and leave this module in degrees / km; radians are only
used internally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class GeoPos:
    lat_deg: float
    lon_deg: float
    alt_km: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.lat_deg <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat_deg}")
        if not -180.0 <= self.lon_deg < 180.0:
            raise ValueError(f"longitude out of range: {self.lon_deg}")
        if self.alt_km < 0.0:
            raise ValueError(f"negative altitude: {self.alt_km}")


@dataclass(frozen=True)
class CartPos:
    x_km: float
    y_km: float
    z_km: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_km, self.y_km, self.z_km])


def wrap_lon(lon_deg):
    """Map longitudes into [-180, 180)."""
    return (np.asarray(lon_deg) + 180.0) % 360.0 - 180.0


def to_cartesian(p: GeoPos) -> CartPos:
    x, y, z = cartesian_array(p.lat_deg, p.lon_deg, p.alt_km)
    return CartPos(float(x), float(y), float(z))


def cartesian_array(lat_deg, lon_deg, alt_km) -> np.ndarray:
    """Vectorized conversion; returns an array of shape (..., 3) in km."""
    lat = np.radians(np.asarray(lat_deg, dtype=float))
    lon = np.radians(np.asarray(lon_deg, dtype=float))
    r = EARTH_RADIUS_KM + np.asarray(alt_km, dtype=float)
    return np.stack(
        [r * np.cos(lat) * np.cos(lon), r * np.cos(lat) * np.sin(lon), r * np.sin(lat)],
        axis=-1,
    )


def distance(a: GeoPos, b: GeoPos) -> float:
    """Straight-line (chord) distance in km between two positions."""
    return float(np.linalg.norm(to_cartesian(a).as_array() - to_cartesian(b).as_array()))


def max_link_range(h_i: float, h_j: float) -> float:
    """Longest line-of-sight distance between nodes at altitudes h_i, h_j (km)."""
    return float(max_link_range_array(h_i, h_j))


def max_link_range_array(h_i, h_j):
    r = EARTH_RADIUS_KM
    hi = np.asarray(h_i, dtype=float)
    hj = np.asarray(h_j, dtype=float)
    return np.sqrt((hi + r) ** 2 - r**2) + np.sqrt((hj + r) ** 2 - r**2)


def visible(a, b) -> bool:
    """True when nodes ``a`` and ``b`` (anything with a ``pos: GeoPos``) see each other."""
    pa = getattr(a, "pos", a)
    pb = getattr(b, "pos", b)
    return distance(pa, pb) <= max_link_range(pa.alt_km, pb.alt_km)


def initial_bearing_deg(lat1, lon1, lat2, lon2):
    """Great-circle bearing from point 1 toward point 2, clockwise from north in [0, 360)."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    y = np.sin(dl) * np.cos(p2)
    x = np.cos(p1) * np.sin(p2) - np.sin(p1) * np.cos(p2) * np.cos(dl)
    return np.degrees(np.arctan2(y, x)) % 360.0


def central_angle(lat1, lon1, lat2, lon2):
    """Angular separation in radians (haversine form)."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def slerp_latlon(lat1, lon1, lat2, lon2, frac):
    """Points at fraction ``frac`` along the great circle from 1 to 2 (degrees)."""
    a = cartesian_array(lat1, lon1, 0.0) / EARTH_RADIUS_KM
    b = cartesian_array(lat2, lon2, 0.0) / EARTH_RADIUS_KM
    omega = math.acos(float(np.clip(np.dot(a, b), -1.0, 1.0)))
    frac = np.asarray(frac, dtype=float)[..., None]
    if omega < 1e-12:
        pts = np.broadcast_to(a, frac.shape[:-1] + (3,))
    else:
        pts = (np.sin((1 - frac) * omega) * a + np.sin(frac * omega) * b) / math.sin(omega)
    lat = np.degrees(np.arcsin(np.clip(pts[..., 2], -1.0, 1.0)))
    lon = wrap_lon(np.degrees(np.arctan2(pts[..., 1], pts[..., 0])))
    return lat, lon
