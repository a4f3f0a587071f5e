"""Time-varying inter-satellite link graph.

Every satellite has up to four ISLs: two intra-plane (slot +/- 1, wrapping
around the plane) and two inter-plane (same slot in plane +/- 1). There is no
link across the seam between the last and the first plane, and inter-plane
links are switched off while either endpoint is poleward of the shutdown
latitude.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .orbit import SPEED_OF_LIGHT, ConstellationConfig, SatId, argument_of_latitude, latitudes, positions_ecef

INTRA_PLANE = "intra_plane"
INTER_PLANE = "inter_plane"

# neighbour slots in the (N, 4) neighbour table
NORTH, SOUTH, EAST, WEST = 0, 1, 2, 3
DIRECTIONS = ("north", "south", "east", "west")

ISL_CAPACITY = 1e9  # bit/s


class LinkId(NamedTuple):
    endpoint_a: int
    endpoint_b: int
    kind: str

    @classmethod
    def between(cls, a: int, b: int, config: ConstellationConfig) -> "LinkId":
        a, b = min(a, b), max(a, b)
        same_plane = a // config.sats_per_plane == b // config.sats_per_plane
        return cls(a, b, INTRA_PLANE if same_plane else INTER_PLANE)


@dataclass(frozen=True)
class LinkState:
    link: LinkId
    capacity: float
    active: bool
    occupancy: tuple[float, float] = (0.0, 0.0)  # bits queued a->b, b->a
    shutdown_pending: bool = False


@dataclass(frozen=True)
class LinkTable:
    """Static link inventory of a constellation, independent of time."""

    config: ConstellationConfig
    endpoints: np.ndarray  # (L, 2) flat sat indices, a < b
    inter: np.ndarray  # (L,) bool
    neighbor: np.ndarray  # (N, 4) neighbour sat or -1
    neighbor_link: np.ndarray  # (N, 4) link index or -1

    @property
    def num_links(self) -> int:
        return len(self.endpoints)

    def link_id(self, index: int) -> LinkId:
        a, b = self.endpoints[index]
        return LinkId(int(a), int(b), INTER_PLANE if self.inter[index] else INTRA_PLANE)

    def index_of(self, a: int, b: int) -> int:
        for d in range(4):
            if self.neighbor[a, d] == b:
                return int(self.neighbor_link[a, d])
        raise KeyError(f"no link between {a} and {b}")


@lru_cache(maxsize=8)
def link_table(config: ConstellationConfig) -> LinkTable:
    P, S = config.num_planes, config.sats_per_plane
    N = P * S
    neighbor = np.full((N, 4), -1, dtype=np.int64)
    neighbor_link = np.full((N, 4), -1, dtype=np.int64)
    ends: list[tuple[int, int]] = []
    inter: list[bool] = []

    def add(a: int, da: int, b: int, db: int, is_inter: bool) -> None:
        idx = len(ends)
        ends.append((min(a, b), max(a, b)))
        inter.append(is_inter)
        neighbor[a, da], neighbor_link[a, da] = b, idx
        neighbor[b, db], neighbor_link[b, db] = a, idx

    for p in range(P):
        for s in range(S):
            a = p * S + s
            b = p * S + (s + 1) % S
            if b != a and (S > 2 or s == 0):
                add(a, NORTH, b, SOUTH, False)
    for p in range(P - 1):
        for s in range(S):
            add(p * S + s, EAST, (p + 1) * S + s, WEST, True)
    for arr in (neighbor, neighbor_link):
        arr.flags.writeable = False
    return LinkTable(config, np.array(ends, dtype=np.int64), np.array(inter), neighbor, neighbor_link)


def _shutdown_sin_threshold(config: ConstellationConfig) -> float:
    return math.sin(math.radians(config.inter_plane_shutdown_lat)) / math.sin(math.radians(config.inclination))


def polar_mask(config: ConstellationConfig, t: float) -> np.ndarray:
    """Satellites poleward of the inter-plane shutdown latitude at ``t``."""
    return np.abs(latitudes(config, t)) > config.inter_plane_shutdown_lat


def shutdown_warnings(config: ConstellationConfig, t: float, horizon: float) -> np.ndarray:
    """Per-satellite flag: inter-plane links currently up but going down within ``horizon`` seconds."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    thr = _shutdown_sin_threshold(config)
    if thr >= 1.0:
        return np.zeros(config.num_sats, dtype=bool)
    u0 = argument_of_latitude(config, t)
    u1 = u0 + config.mean_motion * horizon
    # |sin u| peaks at u = pi/2 + k*pi; check whether such a peak lies in [u0, u1]
    k0 = np.ceil((u0 - math.pi / 2) / math.pi)
    contains_peak = (math.pi / 2 + k0 * math.pi) <= u1
    peak = np.where(contains_peak, 1.0, np.maximum(np.abs(np.sin(u0)), np.abs(np.sin(u1))))
    now_polar = np.abs(np.sin(u0)) > thr
    return (~now_polar) & (peak > thr)


def shutdown_warning(config: ConstellationConfig, sat: SatId, t: float, horizon: float) -> bool:
    return bool(shutdown_warnings(config, t, horizon)[sat.flat(config)])


@dataclass
class TopologySnapshot:
    time: float
    config: ConstellationConfig
    table: LinkTable
    active: np.ndarray  # (L,) bool
    polar: np.ndarray  # (N,) bool
    positions: np.ndarray  # (N, 3) ECEF km
    capacity: float = ISL_CAPACITY
    warned: np.ndarray | None = None  # (N,) bool shutdown warnings, if computed
    occupancy: dict[int, tuple[float, float]] = field(default_factory=dict)

    @property
    def nodes(self) -> range:
        return range(self.config.num_sats)

    @cached_property
    def adjacency(self) -> list[list[int]]:
        nb = self.table.neighbor
        nl = self.table.neighbor_link
        out = []
        for n in range(self.config.num_sats):
            out.append([int(nb[n, d]) for d in range(4) if nl[n, d] >= 0 and self.active[nl[n, d]]])
        return out

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])

    @cached_property
    def link_delays(self) -> np.ndarray:
        e = self.table.endpoints
        return np.linalg.norm(self.positions[e[:, 0]] - self.positions[e[:, 1]], axis=1) / SPEED_OF_LIGHT

    @property
    def links(self) -> list[LinkState]:
        pending = self.pending_links()
        return [
            LinkState(
                self.table.link_id(i),
                self.capacity,
                bool(self.active[i]),
                self.occupancy.get(i, (0.0, 0.0)),
                bool(pending[i]),
            )
            for i in range(self.table.num_links)
        ]

    def pending_links(self) -> np.ndarray:
        if self.warned is None:
            return np.zeros(self.table.num_links, dtype=bool)
        e = self.table.endpoints
        return self.active & self.table.inter & (self.warned[e[:, 0]] | self.warned[e[:, 1]])

    def graph(self, exclude_pending: bool = False) -> sp.csr_matrix:
        """Unit-weight symmetric adjacency matrix of the usable links."""
        mask = self.active.copy()
        if exclude_pending:
            mask &= ~self.pending_links()
        e = self.table.endpoints[mask]
        n = self.config.num_sats
        data = np.ones(2 * len(e))
        return sp.csr_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))

    def is_connected(self) -> bool:
        ncomp, _ = connected_components(self.graph(), directed=False)
        return ncomp == 1


def build_topology(
    config: ConstellationConfig,
    t: float,
    warning_horizon: float | None = None,
    positions: np.ndarray | None = None,
) -> TopologySnapshot:
    if t < 0:
        raise ValueError("time must be non-negative")
    table = link_table(config)
    polar = polar_mask(config, t)
    e = table.endpoints
    active = ~(table.inter & (polar[e[:, 0]] | polar[e[:, 1]]))
    warned = shutdown_warnings(config, t, warning_horizon) if warning_horizon else None
    if positions is None:
        positions = positions_ecef(config, t)
    return TopologySnapshot(t, config, table, active, polar, positions, warned=warned)
