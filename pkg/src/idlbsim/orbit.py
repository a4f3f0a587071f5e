"""Walker-star constellation geometry.

Circular Keplerian orbits over a spherical, rotating Earth. Everything here is
a pure function of an immutable :class:`ConstellationConfig`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Union

import numpy as np

MU_EARTH = 398600.4418  # km^3/s^2
SPEED_OF_LIGHT = 299792.458  # km/s
EARTH_ROTATION_RATE = 7.2921159e-5  # rad/s, sidereal
EARTH_RADIUS = 6371.0  # km, spherical


@dataclass(frozen=True)
class ConstellationConfig:
    num_planes: int = 30
    sats_per_plane: int = 48
    altitude: float = 600.0
    inclination: float = 86.4
    co_rotating_spacing: float = 6.0
    cross_seam_spacing: float = 12.0  # carried as metadata only
    phase_offset: float = 3.75
    earth_radius: float = EARTH_RADIUS
    earth_rotation_rate: float = EARTH_ROTATION_RATE
    inter_plane_shutdown_lat: float = 80.0

    def __post_init__(self):
        if self.num_planes <= 0 or self.sats_per_plane <= 0:
            raise ValueError("constellation needs at least one plane and one satellite")
        if not 0.0 < self.inclination <= 90.0:
            raise ValueError(f"inclination must lie in (0, 90], got {self.inclination}")
        if self.altitude <= 0.0:
            raise ValueError(f"altitude must be positive, got {self.altitude}")

    @property
    def num_sats(self) -> int:
        return self.num_planes * self.sats_per_plane

    @property
    def orbit_radius(self) -> float:
        return self.earth_radius + self.altitude

    @property
    def mean_motion(self) -> float:
        """Angular rate along the orbit in rad/s."""
        return math.sqrt(MU_EARTH / self.orbit_radius**3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion

    @property
    def in_plane_spacing(self) -> float:
        return 360.0 / self.sats_per_plane

    def raan(self, plane: int) -> float:
        return plane * self.co_rotating_spacing


class SatId(NamedTuple):
    plane: int
    slot: int

    def flat(self, config: ConstellationConfig) -> int:
        return self.plane * config.sats_per_plane + self.slot

    @classmethod
    def from_flat(cls, index: int, config: ConstellationConfig) -> "SatId":
        plane, slot = divmod(int(index), config.sats_per_plane)
        return cls(plane, slot)


class GroundPoint(NamedTuple):
    latitude: float
    longitude: float

    @property
    def xyz(self) -> np.ndarray:
        return geodetic_to_ecef(self.latitude, self.longitude, EARTH_RADIUS)


class SatPosition(NamedTuple):
    sat: SatId
    time: float
    latitude: float
    longitude: float
    radius: float

    @property
    def xyz(self) -> np.ndarray:
        return geodetic_to_ecef(self.latitude, self.longitude, self.radius)


def wrap_longitude(lon):
    """Map longitudes to [-180, 180)."""
    return (np.asarray(lon) + 180.0) % 360.0 - 180.0


def geodetic_to_ecef(lat, lon, radius) -> np.ndarray:
    lat_r = np.radians(lat)
    lon_r = np.radians(lon)
    cl = np.cos(lat_r)
    return np.stack(
        [radius * cl * np.cos(lon_r), radius * cl * np.sin(lon_r), radius * np.sin(lat_r)],
        axis=-1,
    )


def ecef_to_geodetic(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xyz = np.asarray(xyz, dtype=float)
    r = np.linalg.norm(xyz, axis=-1)
    lat = np.degrees(np.arcsin(np.clip(xyz[..., 2] / r, -1.0, 1.0)))
    lon = wrap_longitude(np.degrees(np.arctan2(xyz[..., 1], xyz[..., 0])))
    return lat, lon, r


@lru_cache(maxsize=8)
def _layout(config: ConstellationConfig) -> tuple[np.ndarray, np.ndarray]:
    planes = np.repeat(np.arange(config.num_planes), config.sats_per_plane)
    slots = np.tile(np.arange(config.sats_per_plane), config.num_planes)
    raan = np.radians(planes * config.co_rotating_spacing)
    phase0 = np.radians(slots * config.in_plane_spacing + planes * config.phase_offset)
    raan.flags.writeable = False
    phase0.flags.writeable = False
    return raan, phase0


def argument_of_latitude(config: ConstellationConfig, t: float) -> np.ndarray:
    """In-plane phase of every satellite (flat order) at time ``t``, radians."""
    _, phase0 = _layout(config)
    return phase0 + config.mean_motion * t


def positions_eci(config: ConstellationConfig, t: float) -> np.ndarray:
    """Inertial positions of all satellites in flat order, shape (N, 3) km."""
    raan, _ = _layout(config)
    u = argument_of_latitude(config, t)
    inc = math.radians(config.inclination)
    cu, su = np.cos(u), np.sin(u)
    cr, sr = np.cos(raan), np.sin(raan)
    r = config.orbit_radius
    return np.stack(
        [
            r * (cr * cu - sr * su * math.cos(inc)),
            r * (sr * cu + cr * su * math.cos(inc)),
            r * su * math.sin(inc),
        ],
        axis=-1,
    )


def eci_to_ecef(xyz: np.ndarray, config: ConstellationConfig, t: float) -> np.ndarray:
    theta = config.earth_rotation_rate * t
    c, s = math.cos(theta), math.sin(theta)
    out = np.empty_like(xyz)
    out[..., 0] = c * xyz[..., 0] + s * xyz[..., 1]
    out[..., 1] = -s * xyz[..., 0] + c * xyz[..., 1]
    out[..., 2] = xyz[..., 2]
    return out


def positions_ecef(config: ConstellationConfig, t: float) -> np.ndarray:
    """Earth-fixed positions of all satellites, shape (N, 3) km."""
    return eci_to_ecef(positions_eci(config, t), config, t)


def latitudes(config: ConstellationConfig, t: float) -> np.ndarray:
    """Geocentric latitude of every satellite in degrees (no Earth-rotation dependence)."""
    u = argument_of_latitude(config, t)
    return np.degrees(np.arcsin(np.sin(u) * math.sin(math.radians(config.inclination))))


def satellite_position(config: ConstellationConfig, sat: SatId, t: float) -> SatPosition:
    if t < 0:
        raise ValueError("time must be non-negative")
    xyz = positions_ecef(config, t)[sat.flat(config)]
    lat, lon, r = ecef_to_geodetic(xyz)
    return SatPosition(sat, float(t), float(lat), float(lon), float(r))


Located = Union[SatPosition, GroundPoint, np.ndarray]


def _as_xyz(p: Located) -> np.ndarray:
    if isinstance(p, (SatPosition, GroundPoint)):
        return p.xyz
    return np.asarray(p, dtype=float)


def propagation_delay(a: Located, b: Located) -> float:
    """Straight-line (chord) light time between two points, in seconds."""
    return float(np.linalg.norm(_as_xyz(a) - _as_xyz(b)) / SPEED_OF_LIGHT)


def elevation_angles(ground_xyz: np.ndarray, sat_xyz: np.ndarray) -> np.ndarray:
    """Elevation in degrees of each satellite seen from each ground point.

    ``ground_xyz`` is (G, 3) or (3,), ``sat_xyz`` is (N, 3); the result
    broadcasts to (G, N) or (N,).
    """
    g = np.asarray(ground_xyz, dtype=float)
    s = np.asarray(sat_xyz, dtype=float)
    if g.ndim == 1:
        d = s - g
        up = g / np.linalg.norm(g)
        sin_el = d @ up / np.linalg.norm(d, axis=-1)
    else:
        up = g / np.linalg.norm(g, axis=-1, keepdims=True)
        d = s[None, :, :] - g[:, None, :]
        sin_el = np.einsum("gnk,gk->gn", d, up) / np.linalg.norm(d, axis=-1)
    return np.degrees(np.arcsin(np.clip(sin_el, -1.0, 1.0)))


def elevation_angle(terminal_pos: GroundPoint | tuple[float, float], sat_pos: SatPosition) -> float:
    g = GroundPoint(*terminal_pos)
    return float(elevation_angles(g.xyz, sat_pos.xyz[None, :])[0])


def coverage_half_angle(config: ConstellationConfig, min_elevation: float) -> float:
    """Earth central angle (degrees) between a terminal and a satellite seen at ``min_elevation``."""
    eps = math.radians(min_elevation)
    ratio = config.earth_radius / config.orbit_radius
    return math.degrees(math.acos(ratio * math.cos(eps)) - eps)


def visibility_window(
    config: ConstellationConfig,
    terminal_pos: GroundPoint | tuple[float, float],
    min_elevation: float,
    step: float = 1.0,
) -> float:
    """Longest single-satellite pass above ``min_elevation`` within one orbital period.

    Passes are resolved on a ``step`` grid and their edges refined by linear
    interpolation of the elevation; only passes that both rise and set inside
    the sweep are counted.
    """
    if not 0.0 < min_elevation < 90.0:
        raise ValueError("min_elevation must lie in (0, 90)")
    g = GroundPoint(*terminal_pos).xyz
    # longest possible pass: overhead arc at the orbital rate, padded for Earth rotation
    margin = 2.0 * math.radians(coverage_half_angle(config, min_elevation)) / config.mean_motion * 1.2
    times = np.arange(0.0, config.period + margin + step, step)
    elev = np.empty((times.size, config.num_sats))
    for i, t in enumerate(times):
        elev[i] = elevation_angles(g, positions_ecef(config, float(t)))
    above = elev >= min_elevation
    best = 0.0
    for sat in np.flatnonzero(above.any(axis=0)):
        col = above[:, sat]
        edges = np.diff(col.astype(np.int8))
        rises = np.flatnonzero(edges == 1)
        sets = np.flatnonzero(edges == -1)
        for r in rises:
            later = sets[sets > r]
            if later.size == 0:
                continue
            s = later[0]
            e = elev[:, sat]
            t_rise = times[r] + step * (min_elevation - e[r]) / (e[r + 1] - e[r])
            t_set = times[s] + step * (min_elevation - e[s]) / (e[s + 1] - e[s])
            best = max(best, t_set - t_rise)
    return float(best)


class MovementGrid:
    """Satellite positions sampled every ``step`` seconds with linear interpolation between samples."""

    def __init__(self, config: ConstellationConfig, step: float = 5.0, cache_size: int = 256):
        self.config = config
        self.step = float(step)
        self._cache: dict[int, np.ndarray] = {}
        self._cache_size = cache_size

    def index(self, t: float) -> int:
        return int(math.floor(t / self.step + 1e-9))

    def at_index(self, k: int) -> np.ndarray:
        pos = self._cache.get(k)
        if pos is None:
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            pos = positions_ecef(self.config, k * self.step)
            pos.flags.writeable = False
            self._cache[k] = pos
        return pos

    def positions(self, t: float) -> np.ndarray:
        k = self.index(t)
        frac = t / self.step - k
        p0 = self.at_index(k)
        if frac <= 1e-12:
            return p0
        return p0 + (self.at_index(k + 1) - p0) * frac
