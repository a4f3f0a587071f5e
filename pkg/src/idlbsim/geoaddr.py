"""Geographic address resolution.

The Earth is cut into 3 x 3 degree cells between -87 and +87 degrees latitude
plus one cap cell per pole, 6962 areas in total. An area id takes 13 bits and
is the high part of every 32-bit terminal address.

Inter-cluster forwarding is steered by a per-cluster switching table that
maps every area to the neighbouring cluster to hand the packet to. The
target ("serving") cluster of an area is a pure function of geometry and
time, so every controller computes the same table without signalling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cluster import ClusterMap
from .orbit import ConstellationConfig, argument_of_latitude, geodetic_to_ecef, positions_ecef, wrap_longitude
from .topology import DIRECTIONS, EAST, NORTH, SOUTH, WEST

CELL_DEG = 3.0
CAP_LAT = 87.0
NUM_BANDS = 58
NUM_CELLS = 120
SOUTH_CAP = NUM_BANDS * NUM_CELLS  # 6960
NORTH_CAP = SOUTH_CAP + 1
NUM_AREAS = SOUTH_CAP + 2
AREA_BITS = 13
LOCAL_BITS = 19

LOCAL = 4  # direction code for "resolve inside this cluster"
DIRECTION_NAMES = DIRECTIONS + ("local",)


def areas_of(lat, lon) -> np.ndarray:
    """Vectorised :func:`area_of`."""
    lat = np.asarray(lat, dtype=float)
    lon = wrap_longitude(lon)
    band = np.clip(np.floor((lat + CAP_LAT) / CELL_DEG), 0, NUM_BANDS - 1).astype(np.int64)
    cell = np.clip(np.floor((lon + 180.0) / CELL_DEG), 0, NUM_CELLS - 1).astype(np.int64)
    ids = band * NUM_CELLS + cell
    ids = np.where(lat <= -CAP_LAT, SOUTH_CAP, ids)
    return np.where(lat >= CAP_LAT, NORTH_CAP, ids)


def area_of(lat: float, lon: float) -> int:
    return int(areas_of(lat, lon))


def area_centroid(area: int) -> tuple[float, float]:
    if not 0 <= area < NUM_AREAS:
        raise ValueError(f"area id out of range: {area}")
    if area == SOUTH_CAP:
        return (-90.0, 0.0)
    if area == NORTH_CAP:
        return (90.0, 0.0)
    band, cell = divmod(area, NUM_CELLS)
    return (-CAP_LAT + (band + 0.5) * CELL_DEG, -180.0 + (cell + 0.5) * CELL_DEG)


def _centroid_table() -> np.ndarray:
    out = np.array([area_centroid(a) for a in range(NUM_AREAS)])
    out.flags.writeable = False
    return out


CENTROIDS = _centroid_table()


class TerminalAddress(NamedTuple):
    area: int
    local: int

    @property
    def value(self) -> int:
        if not 0 <= self.area < (1 << AREA_BITS) or not 0 <= self.local < (1 << LOCAL_BITS):
            raise ValueError(f"address fields out of range: {self}")
        return (self.area << LOCAL_BITS) | self.local

    @classmethod
    def from_value(cls, value: int) -> "TerminalAddress":
        return cls(value >> LOCAL_BITS, value & ((1 << LOCAL_BITS) - 1))


# --- seam handling -------------------------------------------------------

def ascending_sheet(config: ConstellationConfig, lat, lon, t: float) -> np.ndarray:
    """True where the ground point lies under the ascending half of the constellation.

    The two halves meet along the seams. Their position follows from the
    inertial longitude of plane 0's ascending ground track at the point's
    latitude, with half a plane spacing of margin on each edge of the sheet.
    """
    lat = np.asarray(lat, dtype=float)
    inc = math.radians(config.inclination)
    s = np.clip(np.sin(np.radians(lat)) / math.sin(inc), -1.0, 1.0)
    u = np.arcsin(s)
    track = np.degrees(np.arctan2(math.cos(inc) * np.sin(u), np.cos(u)))
    inertial = np.asarray(lon, dtype=float) + math.degrees(config.earth_rotation_rate) * t
    width = config.num_planes * config.co_rotating_spacing
    rel = (inertial - track + config.co_rotating_spacing / 2.0) % 360.0
    return rel < width


def seam_epoch_schedule(
    config: ConstellationConfig, duration: float = 7200.0, step: float = 5.0
) -> list[tuple[float, frozenset[int]]]:
    """Movement-grid instants at which areas switch to the other side of the seam.

    All terminals of an affected area are handed over together at that
    instant, so controllers can update their tables without signalling.
    """
    n = int(math.floor(duration / step + 1e-9))
    lat, lon = CENTROIDS[:, 0], CENTROIDS[:, 1]
    prev = ascending_sheet(config, lat, lon, 0.0)
    out = []
    for k in range(1, n + 1):
        cur = ascending_sheet(config, lat, lon, k * step)
        flipped = np.flatnonzero(cur != prev)
        if flipped.size:
            out.append((k * step, frozenset(int(a) for a in flipped)))
        prev = cur
    return out


def satellite_sheet(config: ConstellationConfig, t: float) -> np.ndarray:
    """True for satellites on the ascending (northbound) half of their orbit."""
    return np.cos(argument_of_latitude(config, t)) > 0.0


def serving_clusters(
    cmap: ClusterMap,
    t: float,
    areas: np.ndarray | None = None,
    positions: np.ndarray | None = None,
) -> np.ndarray:
    """Cluster responsible for each area at time ``t``.

    It is the cluster of the satellite nearest to the area centroid among
    the satellites on the area's side of the seam.
    """
    config = cmap.config
    areas = np.arange(NUM_AREAS) if areas is None else np.asarray(areas, dtype=np.int64)
    if positions is None:
        positions = positions_ecef(config, t)
    cent = CENTROIDS[areas]
    side = ascending_sheet(config, cent[:, 0], cent[:, 1], t)
    sheet = satellite_sheet(config, t)
    g = geodetic_to_ecef(cent[:, 0], cent[:, 1], 1.0)
    unit = positions / np.linalg.norm(positions, axis=1, keepdims=True)
    cos = g @ unit.T
    same = side[:, None] == sheet[None, :]
    cos = np.where(same, cos, -2.0)
    return cmap.sat_cluster[np.argmax(cos, axis=1)]


def grid_step(cmap: ClusterMap, src: int, dst: int) -> int:
    """Direction code of the next cluster hop from ``src`` toward ``dst``.

    Column (inter-plane) moves go first and never wrap, so the seam is never
    crossed; row moves then take the shorter way around the ring. Going
    sideways first keeps traffic in its own row until the goal's column and
    lets it arrive from north and south as well as from the side.
    """
    if src == dst:
        return LOCAL
    cs, rs = cmap.position(src)
    cd, rd = cmap.position(dst)
    if cs != cd:
        return EAST if cd > cs else WEST
    fwd = (rd - rs) % cmap.rows
    return NORTH if fwd <= cmap.rows - fwd else SOUTH


def grid_steps_toward(cmap: ClusterMap, src: int, dst: int) -> tuple[int, int | None]:
    """Preferred direction code plus the other productive one, if the goal is diagonal."""
    first = grid_step(cmap, src, dst)
    cs, rs = cmap.position(src)
    cd, rd = cmap.position(dst)
    if rs != rd and cs != cd:
        fwd = (rd - rs) % cmap.rows
        return first, (NORTH if fwd <= cmap.rows - fwd else SOUTH)
    return first, None


def _grid_steps(cmap: ClusterMap, src: int, dst: np.ndarray) -> np.ndarray:
    cs, rs = cmap.position(src)
    cd, rd = np.divmod(dst, cmap.rows)
    fwd = (rd - rs) % cmap.rows
    out = np.where(fwd <= cmap.rows - fwd, NORTH, SOUTH)
    out = np.where(cd != cs, np.where(cd > cs, EAST, WEST), out)
    return np.where(dst == src, LOCAL, out).astype(np.int8)


@dataclass(frozen=True)
class GeoSwitchTable:
    cluster: int
    time: float
    direction: np.ndarray  # (NUM_AREAS,) int8 direction codes
    target: np.ndarray  # (NUM_AREAS,) serving cluster per area
    interfaces: dict[str, tuple[int, ...]]

    def lookup(self, area: int) -> tuple[str, tuple[int, ...]]:
        d = DIRECTION_NAMES[int(self.direction[area])]
        return d, (() if d == "local" else self.interfaces[d])


def build_switch_table(
    cmap: ClusterMap,
    t: float,
    targets: np.ndarray | None = None,
    positions: np.ndarray | None = None,
) -> list[GeoSwitchTable]:
    """Geographic switching tables of every cluster at time ``t``."""
    if targets is None:
        targets = serving_clusters(cmap, t, positions=positions)
    return [
        GeoSwitchTable(c, t, _grid_steps(cmap, c, targets), targets, cmap.interface[c])
        for c in range(cmap.num_clusters)
    ]


def seam_violations(cmap: ClusterMap, t: float, tables: list[GeoSwitchTable] | None = None) -> int:
    """Count (cluster, area) pairs whose table walk crosses the seam or fails to arrive.

    Every cluster follows its own table entry for the area, hop by hop, until
    the walk reaches the serving cluster. Stepping east out of the last column
    or west out of the first would cross the seam.
    """
    tables = tables or build_switch_table(cmap, t)
    direction = np.stack([tb.direction for tb in tables])  # (C, A)
    target = tables[0].target
    areas = np.arange(direction.shape[1])
    bad = 0
    for start in range(cmap.num_clusters):
        cur = np.full(areas.size, start, dtype=np.int64)
        alive = np.ones(areas.size, dtype=bool)
        for _ in range(cmap.columns + cmap.rows + 1):
            d = direction[cur, areas]
            moving = alive & (d != LOCAL)
            if not moving.any():
                break
            nxt = cmap.neighbor[cur, np.minimum(d, 3)]
            crossed = moving & (nxt < 0)
            bad += int(crossed.sum())
            alive &= ~crossed
            step = moving & ~crossed
            cur = np.where(step, nxt, cur)
        arrived = cur == target
        bad += int((alive & ~arrived).sum())
    return bad
