"""Control and data plane of the load-balanced cluster routing and the SSPF benchmark.

Targets inside a cluster are encoded as plain integers: a non-negative value
is an exact satellite (the one serving the destination terminal, inside the
cluster or one of its monitored interface nodes), a negative value ``-(d+1)``
is the interface set of the neighbouring cluster in direction ``d``. When two
grid directions both bring a packet closer to its goal, the second one rides
along as ``-(d+1) - 4*(d2+1)`` and is used only when the first is overloaded.
"""
from __future__ import annotations

import heapq
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .cluster import ClusterMap
from .geoaddr import LOCAL, GeoSwitchTable
from .topology import DIRECTIONS, TopologySnapshot

DIRECTION_INDEX = {name: i for i, name in enumerate(DIRECTIONS)}


def direction_target(d: int, fallback: int | None = None) -> int:
    return -(d + 1) - (4 * (fallback + 1) if fallback is not None else 0)


def target_direction(target: int) -> int | None:
    return (-target - 1) % 4 if target < 0 else None


def fallback_direction(target: int) -> int | None:
    """Second productive direction carried by a direction target, if any."""
    if target >= 0:
        return None
    f = (-target - 1) // 4 - 1
    return f if f >= 0 else None


def primary_target(target: int) -> int:
    """The plain single-direction target, dropping any fallback."""
    return target if target >= 0 else direction_target(target_direction(target))


@dataclass(frozen=True)
class RoutingParams:
    theta_warn: float = 0.6
    theta_block: float = 0.9
    alpha: float = 8.0
    k: int = 4
    update_period: float = 1.0
    warning_horizon: float | None = None  # defaults to two update periods
    capacity: float = 1e9
    buffer_size: float = 6e6

    def __post_init__(self):
        if not 0.0 <= self.theta_warn < self.theta_block:
            raise ValueError("need 0 <= theta_warn < theta_block")
        if self.k < 1 or self.update_period <= 0:
            raise ValueError("k must be >= 1 and update_period positive")

    @property
    def horizon(self) -> float:
        return self.warning_horizon if self.warning_horizon is not None else 2.0 * self.update_period


DEFAULT_PARAMS = RoutingParams()
READMIT_PENALTY = 1000.0  # cost of a readmitted (overloaded) link, dominates any admissible path


def link_weight(
    occupancy: float, warned: bool = False, failed: bool = False, params: RoutingParams = DEFAULT_PARAMS
) -> float | None:
    """Cost of a link at the given load fraction; ``None`` means excluded."""
    if failed or warned or occupancy >= params.theta_block:
        return None
    if occupancy <= params.theta_warn:
        return 1.0
    return 1.0 + params.alpha * (occupancy - params.theta_warn) / (params.theta_block - params.theta_warn)


@dataclass(frozen=True)
class LinkReport:
    neighbor: int
    occupancy: float  # bits queued in the output buffer
    load: float  # offered bits over the last period / (capacity * period)
    drops: int = 0


@dataclass(frozen=True)
class NodeStateReport:
    node: int
    time: float
    links: tuple[LinkReport, ...]
    shutdown_warning: bool = False
    attached: tuple[int, ...] = ()  # terminal addresses
    demand: Mapping[int, float] = field(default_factory=dict)  # target -> bit/s entering here
    buffer_size: float = 6e6

    def link(self, neighbor: int) -> LinkReport | None:
        for lr in self.links:
            if lr.neighbor == neighbor:
                return lr
        return None

    def fill(self, neighbor: int) -> float:
        lr = self.link(neighbor)
        return lr.occupancy / self.buffer_size if lr else 0.0

    def congestion(self, exclude: Iterable[int] = ()) -> float:
        """Worst buffer fill over the outgoing links, saturated when drops occurred."""
        skip = set(exclude)
        worst = 0.0
        for lr in self.links:
            if lr.neighbor in skip:
                continue
            worst = max(worst, 1.0 if lr.drops else lr.occupancy / self.buffer_size)
        return worst

    def overloaded(self, params: RoutingParams = DEFAULT_PARAMS, exclude: Iterable[int] = ()) -> bool:
        return self.congestion(exclude) >= params.theta_block


@dataclass(frozen=True)
class Route:
    nodes: tuple[int, ...]
    weight: float = 0.0

    @property
    def hops(self) -> int:
        return max(len(self.nodes) - 1, 0)


@dataclass
class ForwardingTable:
    owner: int
    entries: dict = field(default_factory=dict)  # (entry node, target) -> next hop
    version: int = 0


# --- generic shortest paths over small dict graphs ------------------------

Graph = Mapping[int, Mapping[int, float]]


def dijkstra(graph: Graph, source: int, targets: Iterable[int], banned_nodes=(), banned_edges=()) -> Route | None:
    """Least-weight path from ``source`` to the nearest of ``targets``.

    Ties resolve toward the lowest node indices, so results are reproducible.
    """
    targets = set(targets)
    banned_nodes = set(banned_nodes)
    banned_edges = set(banned_edges)
    if source in banned_nodes:
        return None
    dist = {source: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u in targets:
            path = [u]
            while path[-1] != source:
                path.append(prev[path[-1]])
            return Route(tuple(reversed(path)), d)
        for v, w in sorted(graph.get(u, {}).items()):
            if v in banned_nodes or (u, v) in banned_edges or v in done:
                continue
            nd = d + w
            if nd < dist.get(v, math.inf) - 1e-12:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    return None


def k_shortest_paths(graph: Graph, source: int, targets: Iterable[int], k: int) -> list[Route]:
    """Yen's loopless k-shortest paths from ``source`` to a target set."""
    targets = set(targets)
    first = dijkstra(graph, source, targets)
    if first is None:
        return []
    found = [first]
    candidates: list[tuple[float, tuple[int, ...]]] = []
    seen = {first.nodes}
    while len(found) < k:
        last = found[-1].nodes
        for i in range(len(last) - 1):
            spur, root = last[i], last[: i + 1]
            banned_edges = {(p.nodes[i], p.nodes[i + 1]) for p in found if p.nodes[: i + 1] == root and len(p.nodes) > i + 1}
            banned_nodes = set(root[:-1])
            spur_route = dijkstra(graph, spur, targets, banned_nodes, banned_edges)
            if spur_route is None:
                continue
            nodes = root[:-1] + spur_route.nodes
            if nodes in seen:
                continue
            seen.add(nodes)
            heapq.heappush(candidates, (path_weight(graph, nodes), nodes))
        if not candidates:
            break
        w, nodes = heapq.heappop(candidates)
        found.append(Route(nodes, w))
    return found


def path_weight(graph: Graph, nodes: tuple[int, ...]) -> float:
    return sum(graph[u][v] for u, v in zip(nodes, nodes[1:]))


def reverse_tree(graph: Graph, targets: Iterable[int]) -> dict[int, int]:
    """Next hop toward the nearest target for every node that can reach one."""
    rev: dict[int, list[tuple[int, float]]] = {}
    for u, nbrs in graph.items():
        for v, w in nbrs.items():
            rev.setdefault(v, []).append((u, w))
    dist: dict[int, float] = {}
    nxt: dict[int, int] = {}
    heap = [(0.0, t, t) for t in sorted(set(targets))]
    heapq.heapify(heap)
    while heap:
        d, u, via = heapq.heappop(heap)
        if u in dist:
            continue
        dist[u] = d
        if via != u:
            nxt[u] = via
        for p, w in sorted(rev.get(u, ())):
            if p not in dist:
                heapq.heappush(heap, (d + w, p, u))
    return nxt


# --- source-routed shortest path first --------------------------------------

class ShortestPathOracle:
    """Min-hop routes on one topology snapshot, lexicographically smallest among ties."""

    def __init__(self, topology: TopologySnapshot, exclude_pending: bool = True):
        self.topology = topology
        self.graph = topology.graph(exclude_pending=exclude_pending)
        indptr, indices = self.graph.indptr, self.graph.indices
        self.adjacency = [sorted(int(v) for v in indices[indptr[u]: indptr[u + 1]]) for u in range(self.graph.shape[0])]
        self._dist: dict[int, np.ndarray] = {}

    def distances_to(self, dst: int) -> np.ndarray:
        d = self._dist.get(dst)
        if d is None:
            d = shortest_path(self.graph, unweighted=True, indices=dst)
            self._dist[dst] = d
        return d

    def route(self, src: int, dst: int) -> Route | None:
        if src == dst:
            return Route((src,))
        dist = self.distances_to(dst)
        if not np.isfinite(dist[src]):
            return None
        path = [src]
        u = src
        while u != dst:
            want = dist[u] - 1
            u = next(v for v in self.adjacency[u] if dist[v] == want)
            path.append(u)
        return Route(tuple(path), float(len(path) - 1))


def sspf_route(topology: TopologySnapshot, src: int, dst: int) -> Route | None:
    return ShortestPathOracle(topology).route(src, dst)


# --- cluster controller ----------------------------------------------------------

@dataclass
class ClusterTables:
    """Instructions computed by one controller in one network update."""

    cluster: int
    version: int
    time: float
    effective: dict[int, float]  # node -> time the instructions take effect there
    graph: dict[int, dict[int, float]]  # final weighted graph, used for default routes
    exits: dict[int, tuple[int, ...]]  # direction target -> usable interface nodes
    tables: dict[int, ForwardingTable]
    routes: dict[tuple[int, int], Route]
    failed: frozenset[int] = frozenset()
    _trees: dict[int, dict[int, int]] = field(default_factory=dict)

    def next_hop(self, node: int, entry: int, target: int) -> int | None:
        tab = self.tables.get(node)
        if tab is not None:
            hop = tab.entries.get((entry, target))
            if hop is not None:
                return hop
        return self.default_next_hop(node, target)

    def default_next_hop(self, node: int, target: int) -> int | None:
        tree = self._trees.get(target)
        if tree is None:
            goal = self.exits.get(primary_target(target), ()) if target < 0 else (target,)
            tree = reverse_tree(self.graph, goal)
            self._trees[target] = tree
        return tree.get(node)


class ClusterController:
    """The on-board SDN controller of one cluster."""

    def __init__(self, cmap: ClusterMap, cluster: int, params: RoutingParams = DEFAULT_PARAMS):
        self.cmap = cmap
        self.cluster = cluster
        self.params = params
        self.members = frozenset(cmap.members[cluster])
        self.interfaces = {DIRECTION_INDEX[d]: tuple(n) for d, n in cmap.interface[cluster].items()}
        self.interface_set = frozenset(n for ns in self.interfaces.values() for n in ns)
        self.controller = cmap.controller[cluster]
        self.version = 0
        self._routes: dict[tuple[int, int], Route] = {}

    def network_update(
        self,
        reports: Mapping[int, NodeStateReport],
        topology: TopologySnapshot,
        t: float,
        switch_table: GeoSwitchTable | None = None,
        install_delay: Mapping[int, float] | None = None,
    ) -> ClusterTables:
        p = self.params
        table = topology.table
        # status scan over cluster nodes and monitored interface nodes
        failed = {n for n in self.members | self.interface_set if n not in reports}
        active_c = self.members - failed
        active_int = self.interface_set - failed
        warned = {n for n in active_c | active_int if reports[n].shutdown_warning}
        congested = {n for n in active_int if reports[n].overloaded(p, exclude=self.members)}

        # inter-cluster: usable exits per direction
        exits: dict[int, tuple[int, ...]] = {}
        for d, nodes in self.interfaces.items():
            live = tuple(n for n in nodes if n in active_int)
            exits[direction_target(d)] = tuple(n for n in live if n not in congested) or live

        # candidate links: intra-cluster and border -> interface, active at this instant
        edges: dict[tuple[int, int], tuple[float, bool]] = {}  # (u, v) -> (buffer fill, load-excluded ok)
        for u in sorted(active_c):
            rep = reports[u]
            for d in range(4):
                v = int(table.neighbor[u, d])
                if v < 0 or v in failed or not (v in self.members or v in self.interface_set):
                    continue
                if not topology.active[table.neighbor_link[u, d]]:
                    continue
                if d >= 2 and (u in warned or v in warned):
                    continue
                edges[(u, v)] = (rep.fill(v), True)

        demands = []
        for n in sorted(active_c):
            for target, rate in reports[n].demand.items():
                if rate > 0:
                    demands.append((-rate, n, target))
        demands.sort()

        load: dict[tuple[int, int], float] = {}
        into: dict[int, float] = {}  # rate assigned toward each exit node in this update
        routes: dict[tuple[int, int], Route] = {}

        def commit(key, route, rate):
            routes[key] = route
            for u, v in zip(route.nodes, route.nodes[1:]):
                load[(u, v)] = load.get((u, v), 0.0) + rate
            into[route.nodes[-1]] = into.get(route.nodes[-1], 0.0) + rate

        # flows keep last update's path while it stays clear of the warning band, so
        # rebalancing moves only what must move and downstream clusters see stable entries
        pending = []
        for neg_rate, src, target in demands:
            rate = -neg_rate
            old = self._routes.get((src, target))
            if old is not None and self._still_fits(old, target, rate, edges, load, exits, congested):
                commit((src, target), old, rate)
            else:
                pending.append((rate, src, target))
        for rate, src, target in pending:
            route = None
            for option in self._options(target):
                goal = self._goal(src, option, exits, edges, reports, congested, into)
                if not goal:
                    continue
                cand = self._assign(src, goal, rate, edges, load)
                if cand is None:
                    continue
                if route is None or self._bottleneck(cand, rate, edges, load) < self._bottleneck(route, rate, edges, load):
                    route = cand
                if self._bottleneck(route, rate, edges, load) <= p.theta_warn:
                    break  # the preferred direction has room: no detour
            if route is not None:
                commit((src, target), route, rate)
        self._routes = dict(routes)

        # default routes for flows without measured demand; excluded links stay as a
        # last resort, priced above any admissible path
        graph: dict[int, dict[int, float]] = {}
        for (u, v), (fill, _) in edges.items():
            occ = max(fill, load.get((u, v), 0.0) / p.capacity)
            w = link_weight(occ, params=p)
            graph.setdefault(u, {})[v] = w if w is not None else READMIT_PENALTY + occ

        tables = {n: ForwardingTable(n, {}, self.version + 1) for n in active_c}
        for (entry, target), route in routes.items():
            for u, v in zip(route.nodes, route.nodes[1:]):
                if u in tables:
                    tables[u].entries[(entry, target)] = v
        self.version += 1
        effective = {n: t + (install_delay or {}).get(n, 0.0) for n in self.members}
        return ClusterTables(self.cluster, self.version, t, effective, graph, exits, tables, routes, frozenset(failed))

    @staticmethod
    def _options(target: int) -> tuple[int, ...]:
        if target >= 0:
            return (target,)
        f = fallback_direction(target)
        first = primary_target(target)
        return (first,) if f is None else (first, direction_target(f))

    def _bottleneck(self, route: Route, rate: float, edges, load) -> float:
        cap = self.params.capacity
        return max(
            (max(edges[(u, v)][0], (load.get((u, v), 0.0) + rate) / cap) for u, v in zip(route.nodes, route.nodes[1:])),
            default=0.0,
        )

    def _goal(self, src, target, exits, edges, reports, congested, into) -> tuple[int, ...]:
        if target >= 0:
            return (target,) if target in self.members or target in self.interface_set else ()
        d = target_direction(target)
        nodes = self.interfaces.get(d, ())
        usable = exits.get(target, ())
        if not usable:
            return ()
        default = self._nearest(src, nodes, edges)
        if default is not None and default in congested:
            # flow-specific interface adjustment: the least occupied interface node of the
            # same direction, counting what this update already steers toward it
            alt = [n for n in nodes if n in reports and n not in congested]
            if alt:
                cap = self.params.capacity
                best = min(alt, key=lambda n: (max(reports[n].congestion(self.members), into.get(n, 0.0) / cap), n))
                return (best,)
        return usable

    def _still_fits(self, route, target, rate, edges, load, exits, congested) -> bool:
        end = route.nodes[-1]
        if target >= 0:
            if end != target:
                return False
        elif all(end not in exits.get(o, ()) for o in self._options(target)) or end in congested:
            return False
        p = self.params
        for u, v in zip(route.nodes, route.nodes[1:]):
            e = edges.get((u, v))
            if e is None:
                return False
            if max(e[0], (load.get((u, v), 0.0) + rate) / p.capacity) > p.theta_warn:
                return False
        return True

    @staticmethod
    def _nearest(src, nodes, edges) -> int | None:
        adj: dict[int, list[int]] = {}
        for u, v in edges:
            adj.setdefault(u, []).append(v)
        goal = set(nodes)
        seen = {src}
        frontier = [src]
        while frontier:
            hit = sorted(n for n in frontier if n in goal)
            if hit:
                return hit[0]
            nxt = []
            for u in frontier:
                for v in adj.get(u, ()):
                    if v not in seen:
                        seen.add(v)
                        nxt.append(v)
            frontier = nxt
        return None

    def _assign(self, src, goal, rate, edges, load) -> Route | None:
        p = self.params
        graph: dict[int, dict[int, float]] = {}
        occ: dict[tuple[int, int], float] = {}
        excluded = []
        for (u, v), (fill, _) in edges.items():
            o = max(fill, (load.get((u, v), 0.0) + rate) / p.capacity)
            occ[(u, v)] = o
            w = link_weight(o, params=p)
            if w is None:
                excluded.append((o, u, v))
            else:
                graph.setdefault(u, {})[v] = w
        route = dijkstra(graph, src, goal)
        if route is not None:
            return route
        # availability over load avoidance: readmit the least loaded excluded links first
        for o, u, v in sorted(excluded):
            graph.setdefault(u, {})[v] = READMIT_PENALTY + o
            if dijkstra(graph, src, goal) is not None:
                break
        else:
            return None
        for cand in k_shortest_paths(graph, src, goal, p.k):
            if max(occ[(u, v)] for u, v in zip(cand.nodes, cand.nodes[1:])) < p.theta_block:
                return cand
        return dijkstra(graph, src, goal)
