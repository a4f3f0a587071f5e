"""Fixed in-constellation SDN clusters and the control-plane cost model.

Clusters are rectangular blocks of ``planes_per_cluster`` x ``slots_per_cluster``
satellites that travel with the constellation. Columns run across planes (no
wrap: the seam cuts the grid), rows run along the planes and wrap around.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra, shortest_path

from .orbit import SPEED_OF_LIGHT, ConstellationConfig, positions_ecef
from .topology import DIRECTIONS, EAST, NORTH, SOUTH, WEST, link_table, polar_mask


class ClusterConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterMap:
    config: ConstellationConfig
    planes_per_cluster: int
    slots_per_cluster: int
    columns: int
    rows: int
    sat_cluster: np.ndarray  # (N,) cluster id of each satellite
    members: tuple[tuple[int, ...], ...]
    controller: tuple[int, ...]
    border: tuple[dict[str, tuple[int, ...]], ...]  # own nodes facing each direction
    interface: tuple[dict[str, tuple[int, ...]], ...]  # neighbour nodes across each boundary
    neighbor: np.ndarray  # (C, 4) adjacent cluster id or -1
    seam_adjacent: tuple[bool, ...]

    @property
    def num_clusters(self) -> int:
        return self.columns * self.rows

    def cluster_id(self, col: int, row: int) -> int:
        return col * self.rows + row

    def position(self, cluster: int) -> tuple[int, int]:
        return divmod(cluster, self.rows)

    def interface_nodes(self, cluster: int) -> tuple[int, ...]:
        return tuple(n for d in DIRECTIONS for n in self.interface[cluster].get(d, ()))

    @cached_property
    def interface_owner(self) -> dict[int, tuple[tuple[int, str], ...]]:
        """Interface node -> ((monitoring cluster, direction), ...)."""
        out: dict[int, list[tuple[int, str]]] = {}
        for c in range(self.num_clusters):
            for d, nodes in self.interface[c].items():
                for n in nodes:
                    out.setdefault(n, []).append((c, d))
        return {k: tuple(v) for k, v in out.items()}

    def grid_distance(self, a: int, b: int) -> int:
        """Hop distance on the cluster grid: columns do not wrap, rows do."""
        ca, ra = self.position(a)
        cb, rb = self.position(b)
        dr = abs(ra - rb)
        return abs(ca - cb) + min(dr, self.rows - dr)

    @cached_property
    def hops_to_controller(self) -> np.ndarray:
        """(N,) min-hop distance of each satellite to its own controller inside its cluster."""
        out = np.zeros(self.config.num_sats)
        g = _intra_cluster_graph(self)
        dist = shortest_path(g, unweighted=True, indices=list(self.controller))
        for c, members in enumerate(self.members):
            out[list(members)] = dist[c, list(members)]
        return out


def _intra_cluster_graph(cmap: ClusterMap, active: np.ndarray | None = None, weights: np.ndarray | None = None):
    table = link_table(cmap.config)
    e = table.endpoints
    keep = cmap.sat_cluster[e[:, 0]] == cmap.sat_cluster[e[:, 1]]
    if active is not None:
        keep &= active
    w = np.ones(table.num_links) if weights is None else weights
    e, w = e[keep], w[keep]
    n = cmap.config.num_sats
    return sp.csr_matrix((np.r_[w, w], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))


def build_cluster_map(
    config: ConstellationConfig, planes_per_cluster: int = 6, slots_per_cluster: int = 8
) -> ClusterMap:
    P, S = config.num_planes, config.sats_per_plane
    if planes_per_cluster <= 0 or slots_per_cluster <= 0:
        raise ClusterConfigError("cluster dimensions must be positive")
    if P % planes_per_cluster or S % slots_per_cluster:
        raise ClusterConfigError(
            f"{P} planes x {S} slots cannot be tiled by {planes_per_cluster} x {slots_per_cluster} clusters"
        )
    cols, rows = P // planes_per_cluster, S // slots_per_cluster
    planes = np.repeat(np.arange(P), S)
    slots = np.tile(np.arange(S), P)
    sat_cluster = (planes // planes_per_cluster) * rows + slots // slots_per_cluster
    sat_cluster.flags.writeable = False
    members = tuple(tuple(int(i) for i in np.flatnonzero(sat_cluster == c)) for c in range(cols * rows))

    neighbor = np.full((cols * rows, 4), -1, dtype=np.int64)
    for col in range(cols):
        for row in range(rows):
            c = col * rows + row
            if rows > 1:
                neighbor[c, NORTH] = col * rows + (row + 1) % rows
                neighbor[c, SOUTH] = col * rows + (row - 1) % rows
            if col + 1 < cols:
                neighbor[c, EAST] = (col + 1) * rows + row
            if col > 0:
                neighbor[c, WEST] = (col - 1) * rows + row
    neighbor.flags.writeable = False

    table = link_table(config)
    border, interface = [], []
    for c in range(cols * rows):
        b: dict[str, tuple[int, ...]] = {}
        f: dict[str, tuple[int, ...]] = {}
        for d, name in enumerate(DIRECTIONS):
            if neighbor[c, d] < 0:
                continue
            own, other = [], []
            for n in members[c]:
                m = table.neighbor[n, d]
                if m >= 0 and sat_cluster[m] == neighbor[c, d]:
                    own.append(n)
                    other.append(int(m))
            b[name], f[name] = tuple(own), tuple(other)
        border.append(b)
        interface.append(f)

    partial = ClusterMap(
        config, planes_per_cluster, slots_per_cluster, cols, rows, sat_cluster, members,
        tuple(m[0] for m in members), tuple(border), tuple(interface), neighbor,
        tuple(bool(neighbor[c, EAST] < 0 or neighbor[c, WEST] < 0) for c in range(cols * rows)),
    )
    # controller: member minimising the summed hop distance to all members, lowest index on ties
    dist = shortest_path(_intra_cluster_graph(partial), unweighted=True)
    controllers = []
    for m in members:
        sub = dist[np.ix_(m, m)].sum(axis=1)
        controllers.append(m[int(np.argmin(sub))])
    return ClusterMap(
        config, planes_per_cluster, slots_per_cluster, cols, rows, sat_cluster, members,
        tuple(controllers), tuple(border), tuple(interface), neighbor, partial.seam_adjacent,
    )


def avg_hops_to_controller(cmap: ClusterMap, cluster: int) -> float:
    members = [n for n in cmap.members[cluster] if n != cmap.controller[cluster]]
    if not members:
        return 0.0
    return float(cmap.hops_to_controller[members].mean())


def interface_hops(cmap: ClusterMap, cluster: int) -> list[float]:
    """Hop count from each monitored interface node to this cluster's controller.

    An interface node reaches the controller through the border node it is
    linked to, so its distance is one more than that border node's.
    """
    out = []
    h = cmap.hops_to_controller
    for d in DIRECTIONS:
        for n in cmap.border[cluster].get(d, ()):
            out.append(float(h[n]) + 1.0)
    return out


def avg_interface_hops(cmap: ClusterMap, cluster: int) -> float:
    hops = interface_hops(cmap, cluster)
    return float(np.mean(hops)) if hops else 0.0


@dataclass(frozen=True)
class SignalingCostModel:
    n_c: int
    h_c: float
    n_int: int  # interface nodes of a cluster away from the seam
    h_int: float
    n_int_seam: int
    h_int_seam: float
    n_seamless: int
    n_seam: int
    message_size: float = 1.0
    r_update: float = 1.0

    def __post_init__(self):
        for name in ("n_c", "h_c", "message_size", "r_update"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SignalingCost:
    per_cluster_seamless: float
    per_cluster_seam: float
    total: float


def cluster_cost(message_size: float, h_c: float, n_c: int, h_int: float, n_int: float, r_update: float) -> float:
    """Packets per unit time spent on state reports, flow instructions and interface monitoring."""
    return message_size * (2.0 * h_c * (n_c - 1) + h_int * n_int) * r_update


def signaling_cost(model: SignalingCostModel) -> SignalingCost:
    seamless = cluster_cost(model.message_size, model.h_c, model.n_c, model.h_int, model.n_int, model.r_update)
    seam = cluster_cost(model.message_size, model.h_c, model.n_c, model.h_int_seam, model.n_int_seam, model.r_update)
    return SignalingCost(seamless, seam, model.n_seamless * seamless + model.n_seam * seam)


def signaling_model(cmap: ClusterMap, message_size: float = 1.0, r_update: float = 1.0) -> SignalingCostModel:
    """Cost-model inputs measured on a cluster map.

    Seam clusters need not be mirror images of each other (the controller sits
    off-centre), so their interface terms are averaged.
    """
    seam = [c for c in range(cmap.num_clusters) if cmap.seam_adjacent[c]]
    seamless = [c for c in range(cmap.num_clusters) if not cmap.seam_adjacent[c]]

    def mean_terms(cs):
        if not cs:
            return 0, 0.0
        n = [len(interface_hops(cmap, c)) for c in cs]
        tot = [sum(interface_hops(cmap, c)) for c in cs]
        n_int = float(np.mean(n))
        return int(round(n_int)), (float(np.mean(tot)) / n_int if n_int else 0.0)

    n_int, h_int = mean_terms(seamless)
    n_int_s, h_int_s = mean_terms(seam)
    h_c = float(np.mean([avg_hops_to_controller(cmap, c) for c in range(cmap.num_clusters)]))
    n_c = len(cmap.members[0])
    return SignalingCostModel(n_c, h_c, n_int, h_int, n_int_s, h_int_s, len(seamless), len(seam), message_size, r_update)


def max_intra_cluster_delay(
    cmap: ClusterMap,
    config: ConstellationConfig | None = None,
    start: float = 0.0,
    window: float | None = None,
    step: float = 10.0,
) -> float:
    """Longest controller-to-member light time over a time window, in seconds.

    At each sample the member-to-controller route is the min-hop path over
    the cluster's currently active links (polar inter-plane links are down),
    with the lowest-delay path taken among equal-hop alternatives.
    """
    config = config or cmap.config
    window = config.period if window is None else window
    if all(len(m) <= 1 for m in cmap.members):
        return 0.0
    table = link_table(config)
    e = table.endpoints
    ctrl = list(cmap.controller)
    worst = 0.0
    for t in np.arange(start, start + window + 1e-9, step):
        polar = polar_mask(config, float(t))
        active = ~(table.inter & (polar[e[:, 0]] | polar[e[:, 1]]))
        pos = positions_ecef(config, float(t))
        delay = np.linalg.norm(pos[e[:, 0]] - pos[e[:, 1]], axis=1) / SPEED_OF_LIGHT
        # one hop dominates any total delay, so lexicographic (hops, delay) ordering
        g = _intra_cluster_graph(cmap, active, 1.0 + delay)
        dist = dijkstra(g, indices=ctrl)
        for c, m in enumerate(cmap.members):
            d = dist[c, list(m)]
            d = d[np.isfinite(d)]
            worst = max(worst, float((d - np.floor(d)).max()))
    return worst
