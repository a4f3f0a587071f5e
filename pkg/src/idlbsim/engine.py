"""Deterministic packet-level discrete-event core.

Every output port (ISL, downlink, aggregated uplink) is a drop-tail FIFO that
is tracked by the time its transmitter becomes free: a packet that arrives at
time ``t`` leaves at ``max(t, free_at) + size / capacity`` and the queued
volume at ``t`` is ``(free_at - t) * capacity``. Ports only ever see arrivals
in nondecreasing time order, so this is an exact FIFO model that needs a
single event per packet and hop.
"""
from __future__ import annotations

import heapq
from heapq import heappush
import logging
import math
import time as _time
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .cluster import ClusterMap, _intra_cluster_graph, build_cluster_map, interface_hops
from .errors import ConfigError
from .geoaddr import grid_step, grid_steps_toward, serving_clusters
from .ground import GW, HandoverManager, Terminal
from .metrics import DROP_CAUSES, MetricsReport
from .orbit import SPEED_OF_LIGHT, ConstellationConfig, MovementGrid
from .routing import (
    DEFAULT_PARAMS,
    ClusterController,
    ClusterTables,
    LinkReport,
    NodeStateReport,
    RoutingParams,
    ShortestPathOracle,
    direction_target,
)
from .topology import DIRECTIONS, build_topology, link_table, polar_mask, shutdown_warnings

log = logging.getLogger(__name__)

IDLB, SSPF = "idlb", "sspf"
PROTOCOLS = (IDLB, SSPF)
UT_UT, UT_GW = "ut_ut", "ut_gw"

# event kinds double as priorities for simultaneous events
_TICK, _UPDATE, _GEN, _ARRIVE = 0, 1, 2, 3


@dataclass(frozen=True)
class Session:
    id: int
    src: int  # terminal index
    dst: int
    rate: float
    start: float
    duration: float
    kind: str

    @property
    def end(self) -> float:
        return self.start + self.duration


def generate_sessions(
    uts: Sequence[Terminal],
    gws: Sequence[Terminal],
    n_sessions: int,
    sim_duration: float,
    seed: int,
    mean_duration: float = 30.0,
    rate: float = 1e8,
) -> list[Session]:
    """Random session schedule; half UT-to-UT, half between a UT and a gateway.

    Gateway sessions pick their direction with a fair coin.
    """
    if n_sessions <= 0:
        return []
    if len(uts) < 2 or not gws:
        raise ConfigError("sessions need at least 2 user terminals and 1 gateway")
    rng = np.random.default_rng(seed)
    kinds = rng.random(n_sessions) < 0.5
    starts = rng.uniform(0.0, sim_duration, n_sessions)
    durations = rng.exponential(mean_duration, n_sessions)
    out = []
    for i in range(n_sessions):
        if kinds[i]:
            a, b = rng.choice(len(uts), size=2, replace=False)
            src, dst, kind = uts[a].index, uts[b].index, UT_UT
        else:
            ut = uts[int(rng.integers(len(uts)))].index
            gw = gws[int(rng.integers(len(gws)))].index
            src, dst = (ut, gw) if rng.random() < 0.5 else (gw, ut)
            kind = UT_GW
        out.append(Session(i, int(src), int(dst), rate, float(starts[i]), float(durations[i]), kind))
    return out


def time_average_concurrency(sessions: Sequence[Session], sim_duration: float) -> float:
    """Mean number of sessions alive over ``[0, sim_duration]``."""
    alive = sum(max(0.0, min(s.end, sim_duration) - s.start) for s in sessions)
    return alive / sim_duration


@dataclass(frozen=True)
class SimulationParams:
    duration: float = 7200.0
    step: float = 5.0
    max_hops: int = 60
    t_r: float = 1e-5
    t_s: float = 1e-5
    packet_size: float = 1.2e6
    isl_capacity: float = 1e9
    buffer_size: float = 6e6
    downlink_capacity: float = 1e9
    ut_uplink_capacity: float = 1e9
    gw_uplink_capacity: float = 5e9
    trace: bool = False

    def __post_init__(self):
        if self.duration < 0:
            raise ConfigError("duration must be non-negative")
        for name in ("step", "packet_size", "isl_capacity", "downlink_capacity", "ut_uplink_capacity",
                     "gw_uplink_capacity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_hops < 1:
            raise ConfigError("max_hops must be at least 1")
        if self.t_r < 0 or self.t_s < 0:
            raise ConfigError("t_r and t_s must be non-negative")
        if self.buffer_size < self.packet_size:
            raise ConfigError("buffer_size must hold at least one packet")


@dataclass
class Scenario:
    constellation: ConstellationConfig
    terminals: list[Terminal]
    sessions: list[Session]
    protocol: str = IDLB
    routing: RoutingParams = DEFAULT_PARAMS
    sim: SimulationParams = field(default_factory=SimulationParams)
    planes_per_cluster: int = 6
    slots_per_cluster: int = 8
    seed: int = 0
    config_hash: str = ""
    # terminal -> satellite attachments that bypass handover (controlled experiments)
    pinned: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        n = len(self.terminals)
        for s in self.sessions:
            if not (0 <= s.src < n and 0 <= s.dst < n) or s.src == s.dst:
                raise ConfigError(f"session {s.id} has invalid endpoints")
        for i, sat in self.pinned.items():
            if not (0 <= i < n and 0 <= sat < self.constellation.num_sats):
                raise ConfigError(f"pinned attachment {i} -> {sat} is out of range")


class Packet:
    __slots__ = (
        "id", "session", "dst", "created", "hops", "cluster", "entry", "target", "goal",
        "route", "rpos", "tr", "ts", "w", "prop", "trace",
    )

    def __init__(self, pid: int, session: int, dst: int, created: float, trace: bool):
        self.id = pid
        self.session = session
        self.dst = dst
        self.created = created
        self.hops = 0
        self.cluster = -1
        self.entry = -1
        self.target = 0
        self.goal = -1
        self.route: tuple[int, ...] = ()
        self.rpos = 0
        self.tr = self.ts = self.w = self.prop = 0.0
        self.trace: list | None = [] if trace else None

    def latency_components(self) -> float:
        return self.tr + self.ts + self.w + self.prop


@dataclass(frozen=True)
class PacketTrace:
    """Per-hop history of one packet.

    ``hops`` holds ``(node, time, t_r, t_s, W, D_prop)`` with node -1 for the
    source terminal; ``time`` is when the node starts handling the packet.
    """

    id: int
    session: int
    created: float
    end: float
    outcome: str  # "delivered", a drop cause, or "in_flight"
    hops: tuple[tuple[int, float, float, float, float, float], ...]

    @property
    def nodes(self) -> list[int]:
        return [h[0] for h in self.hops if h[0] >= 0]

    def component_sum(self) -> float:
        return sum(h[2] + h[3] + h[4] + h[5] for h in self.hops)


class EventQueue:
    """Time-ordered events with a (time, kind, sequence) total order."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def push(self, t: float, kind: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, kind, self._seq, payload))

    def pop(self):
        return heapq.heappop(self._heap)

    def peek_time(self) -> float:
        return self._heap[0][0] if self._heap else math.inf

    def __len__(self) -> int:
        return len(self._heap)

    def payloads(self):
        return (e[3] for e in self._heap)


class _Port:
    """Drop-tail FIFO transmitter."""

    __slots__ = ("capacity", "buffer", "free_at")

    def __init__(self, capacity: float, buffer: float):
        self.capacity = capacity
        self.buffer = buffer
        self.free_at = 0.0

    def backlog(self, t: float) -> float:
        return max(0.0, self.free_at - t) * self.capacity


class Simulator:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.cfg = scenario.constellation
        self.sim = scenario.sim
        self.params = scenario.routing
        self.cmap: ClusterMap = build_cluster_map(self.cfg, scenario.planes_per_cluster, scenario.slots_per_cluster)
        self.table = link_table(self.cfg)
        self.grid = MovementGrid(self.cfg, self.sim.step, cache_size=4)
        self.terminals = scenario.terminals
        self.term_area = [t.area for t in self.terminals]
        self.term_kind = [t.kind for t in self.terminals]
        N = self.cfg.num_sats
        self.neighbor = self.table.neighbor.tolist()
        self.neighbor_link = self.table.neighbor_link.tolist()
        self.sat_cluster = self.cmap.sat_cluster.tolist()
        self.dir_of = [{v: d for d, v in enumerate(row) if v >= 0} for row in self.neighbor]
        cap, buf = self.sim.isl_capacity, self.sim.buffer_size
        # ISL output ports flattened as node * 4 + direction
        self.isl_free = [0.0] * (4 * N)
        self.isl_cap = cap
        self.isl_tx = self.sim.packet_size / cap
        self.buffer = buf
        self.size = self.sim.packet_size
        self.t_r, self.t_s = self.sim.t_r, self.sim.t_s
        self.t_proc = self.t_r + self.t_s
        self.max_hops = self.sim.max_hops
        self.inv_step = 1.0 / self.sim.step
        self.downlink = [_Port(self.sim.downlink_capacity, buf) for _ in range(N)]
        self.uplink: dict[tuple[int, str], _Port] = {}
        self.offered = [0.0] * (4 * N)
        self.port_drops = [0] * (4 * N)
        self.queue = EventQueue()
        self.heap = self.queue._heap
        self._seq = 0
        self.protocol = scenario.protocol

        # ground state, refreshed at every movement tick
        self.manager = HandoverManager(self.cfg, self.terminals, self.grid, preferred=self._preferred)
        self.serving = [-1] * len(self.terminals)
        self._areas = sorted(set(self.term_area))
        self._area_row = {a: i for i, a in enumerate(self._areas)}
        self.area_target = {}
        self._cluster_masks: dict[int, list[np.ndarray]] = {}

        # routing state
        self.controllers = [ClusterController(self.cmap, c, self.params) for c in range(self.cmap.num_clusters)]
        self.tables: list[tuple[ClusterTables | None, ClusterTables | None]] = [(None, None)] * self.cmap.num_clusters
        self.demand: list[dict[tuple[int, int], float]] = [dict() for _ in range(self.cmap.num_clusters)]
        self.interface_sets = [frozenset(self.cmap.interface_nodes(c)) for c in range(self.cmap.num_clusters)]
        self._last_update_key: list = [None] * self.cmap.num_clusters
        self.signaling_per_update = self._signaling_per_update()
        self.signaling = 0.0
        self.oracle: ShortestPathOracle | None = None
        self.session_route: dict[int, tuple[int, int, int, tuple[int, ...]]] = {}

        # metrics
        self.generated = 0
        self.delivered = 0
        self.in_flight_late = 0
        self.drops = {c: 0 for c in DROP_CAUSES}
        self.lat_sum: dict[int, float] = {}
        self.lat_cnt: dict[int, int] = {}
        self.hop_sum: dict[int, int] = {}
        self.first_hops: dict[int, int] = {}
        self.hop_hist: dict[int, int] = {}
        self.traces: list[PacketTrace] = []
        self._pid = 0

    # --- static helpers -------------------------------------------------------

    def _signaling_per_update(self) -> float:
        h = self.cmap.hops_to_controller
        total = 0.0
        for c, members in enumerate(self.cmap.members):
            total += 2.0 * sum(float(h[n]) for n in members if n != self.cmap.controller[c])
            total += sum(interface_hops(self.cmap, c))
        return total

    def _preferred(self, i: int, t: float) -> list[np.ndarray]:
        target = self.area_target.get(self.term_area[i])
        if target is None:
            return []
        masks = self._cluster_masks.get(target)
        if masks is None:
            sc = self.cmap.sat_cluster
            near = [target] + [int(n) for n in self.cmap.neighbor[target] if n >= 0]
            masks = [sc == target, np.isin(sc, near)]
            self._cluster_masks[target] = masks
        return masks

    # --- movement tick -----------------------------------------------------------

    def _tick(self, k: int) -> None:
        t = k * self.sim.step
        self.tick_index = k
        self.tick_time = t
        p0 = self.grid.at_index(k)
        p1 = self.grid.at_index(k + 1)
        horizon = self.params.horizon
        self.topology = build_topology(self.cfg, t, warning_horizon=horizon + self.sim.step, positions=p0)
        self.active = self.topology.active.tolist()
        e = self.table.endpoints
        d0 = np.linalg.norm(p0[e[:, 0]] - p0[e[:, 1]], axis=1) / SPEED_OF_LIGHT
        d1 = np.linalg.norm(p1[e[:, 0]] - p1[e[:, 1]], axis=1) / SPEED_OF_LIGHT
        self.delay0 = d0.tolist()
        self.ddelay = (d1 - d0).tolist()

        if self._areas:
            targets = serving_clusters(self.cmap, t, np.array(self._areas), positions=p0)
            self.area_target = dict(zip(self._areas, targets.tolist()))
        self.manager.step(t, force=range(len(self.terminals)))
        self.serving = [self.manager.assignment.sat_of(i) for i in range(len(self.terminals))]
        for i, sat in self.sc.pinned.items():
            self.serving[i] = sat
        self.attached_at = {}
        if self.terminals:
            xyz = self.manager.xyz
            sats = np.array(self.serving)
            ok = sats >= 0
            g0 = np.full(len(sats), np.nan)
            g1 = np.full(len(sats), np.nan)
            g0[ok] = np.linalg.norm(xyz[ok] - p0[sats[ok]], axis=1) / SPEED_OF_LIGHT
            g1[ok] = np.linalg.norm(xyz[ok] - p1[sats[ok]], axis=1) / SPEED_OF_LIGHT
            self.gdelay0 = g0.tolist()
            self.gddelay = (g1 - g0).tolist()

        if self.protocol == SSPF:
            self.oracle = ShortestPathOracle(self.topology, exclude_pending=True)
            self.pending = self.topology.pending_links().tolist()
        else:
            self._control_delays(p0)

    def _control_delays(self, pos: np.ndarray) -> None:
        """Light time from each controller to its members over active intra-cluster links."""
        e = self.table.endpoints
        delay = np.linalg.norm(pos[e[:, 0]] - pos[e[:, 1]], axis=1) / SPEED_OF_LIGHT
        g = _intra_cluster_graph(self.cmap, self.topology.active, 1.0 + delay)
        dist = _csgraph_dijkstra(g, indices=list(self.cmap.controller))
        self.ctrl_delay = []
        for c, members in enumerate(self.cmap.members):
            d = dist[c]
            node_delay = {}
            for n in members:
                node_delay[n] = float(d[n] - math.floor(d[n])) if np.isfinite(d[n]) else 0.0
            worst = max(node_delay.values())
            # interface nodes report through the border node they are linked to
            for name, nodes in self.cmap.border[c].items():
                d = DIRECTIONS.index(name)
                for b in nodes:
                    worst = max(worst, node_delay[b] + float(delay[self.neighbor_link[b][d]]))
            self.ctrl_delay.append((node_delay, worst))

    def _link_delay(self, u: int, d: int, t: float) -> float:
        li = self.neighbor_link[u][d]
        frac = (t - self.tick_time) / self.sim.step
        return self.delay0[li] + self.ddelay[li] * frac

    def _ground_delay(self, term: int, t: float) -> float:
        frac = (t - self.tick_time) / self.sim.step
        return self.gdelay0[term] + self.gddelay[term] * frac

    # --- control plane ----------------------------------------------------------

    def _update(self, t: float) -> None:
        period = self.params.update_period
        self.signaling += self.signaling_per_update
        # links of satellites already past the shutdown latitude stay up until the next tick
        warned = (shutdown_warnings(self.cfg, t, self.params.horizon) | polar_mask(self.cfg, t)).tolist()
        cap = self.sim.isl_capacity
        buf = self.sim.buffer_size
        offered = self.offered
        drops = self.port_drops
        free = self.isl_free
        reports: dict[int, NodeStateReport] = {}
        # demand per entry node, as bit/s
        node_demand: dict[int, dict[int, float]] = {}
        for c in range(self.cmap.num_clusters):
            for (entry, target), bits in self.demand[c].items():
                node_demand.setdefault(entry, {})[target] = bits / period
            self.demand[c] = {}
        for u in range(self.cfg.num_sats):
            links = []
            for d in range(4):
                v = self.neighbor[u][d]
                if v < 0:
                    continue
                port = 4 * u + d
                backlog = max(0.0, free[port] - t) * cap
                links.append(LinkReport(v, backlog, offered[port] / (cap * period), drops[port]))
            reports[u] = NodeStateReport(u, t, tuple(links), warned[u], (), node_demand.get(u, {}), buf)
        self.offered = [0.0] * len(offered)
        self.port_drops = [0] * len(drops)
        for c, ctl in enumerate(self.controllers):
            node_delay, worst = self.ctrl_delay[c]
            nodes = self.cmap.members[c]
            busy = any(reports[n].demand for n in nodes) or any(
                lr.occupancy > 0 or lr.load > 0 for n in nodes for lr in reports[n].links
            ) or any(reports[n].congestion() > 0 for n in self.interface_sets[c])
            key = (self.tick_index, tuple(warned[n] for n in nodes), tuple(warned[n] for n in self.interface_sets[c]))
            prev_new = self.tables[c][1]
            if not busy and prev_new is not None and self._last_update_key[c] == key:
                continue  # nothing observable changed: the controller would emit the same instructions
            self._last_update_key[c] = key if not busy else None
            sub = {n: reports[n] for n in nodes}
            sub.update({n: reports[n] for n in self.interface_sets[c]})
            install = {n: worst + node_delay[n] for n in nodes}
            new = ctl.network_update(sub, self.topology, t, install_delay=install)
            self.tables[c] = (prev_new, new)

    def _tables_for(self, c: int, node: int, t: float) -> ClusterTables | None:
        prev, new = self.tables[c]
        if new is not None and t >= new.effective.get(node, new.time):
            return new
        return prev if prev is not None else new

    # --- data plane ---------------------------------------------------------------

    def _drop(self, pkt: Packet, cause: str, t: float) -> None:
        self.drops[cause] += 1
        if pkt.trace is not None:
            self._finish_trace(pkt, t, cause)

    def _finish_trace(self, pkt: Packet, t: float, outcome: str) -> None:
        self.traces.append(PacketTrace(pkt.id, pkt.session, pkt.created, t, outcome, tuple(tuple(h) for h in pkt.trace)))

    def _generate(self, t: float, s: Session) -> None:
        sim = self.sim
        interval = sim.packet_size / s.rate
        nxt = t + interval
        if nxt < s.end and nxt < sim.duration:
            self._seq += 1
            heappush(self.heap, (nxt, _GEN, self._seq, s))
        self._pid += 1
        pkt = Packet(self._pid, s.id, s.dst, t, sim.trace)
        self.generated += 1
        sat = self.serving[s.src]
        if sat < 0:
            if pkt.trace is not None:
                pkt.trace.append((-1, t, 0.0, 0.0, 0.0, 0.0))
            self._drop(pkt, "unserved", t)
            return
        kind = self.term_kind[s.src]
        port = self.uplink.get((sat, kind))
        if port is None:
            cap = sim.gw_uplink_capacity if kind == GW else sim.ut_uplink_capacity
            port = self.uplink[(sat, kind)] = _Port(cap, sim.buffer_size)
        size = sim.packet_size
        if port.backlog(t) + size > port.buffer:
            if pkt.trace is not None:
                pkt.trace.append((-1, t, 0.0, 0.0, 0.0, 0.0))
            self._drop(pkt, "uplink_capacity", t)
            return
        depart = max(t, port.free_at) + size / port.capacity
        port.free_at = depart
        w = depart - t
        prop = self._ground_delay(s.src, depart)
        pkt.w += w
        pkt.prop += prop
        if pkt.trace is not None:
            pkt.trace.append((-1, t, 0.0, 0.0, w, prop))
        if self.protocol == SSPF:
            self._source_route(pkt, s, sat)
        self._arrive_later(pkt, sat, depart + prop)

    def _arrive_later(self, pkt: Packet, node: int, t_arrival: float) -> None:
        pkt.tr += self.t_r
        pkt.ts += self.t_s
        self._seq += 1
        heappush(self.heap, (t_arrival + self.t_proc, _ARRIVE, self._seq, (pkt, node)))

    def _source_route(self, pkt: Packet, s: Session, src_sat: int) -> None:
        dst_sat = self.serving[s.dst]
        cached = self.session_route.get(s.id)
        if cached is not None:
            tick, a, b, route = cached
            if a == src_sat and b == dst_sat and (tick == self.tick_index or self._route_ok(route)):
                self.session_route[s.id] = (self.tick_index, a, b, route)
                pkt.route, pkt.rpos = route, 0
                return
        route = ()
        if dst_sat >= 0:
            r = self.oracle.route(src_sat, dst_sat)
            route = r.nodes if r is not None else ()
        self.session_route[s.id] = (self.tick_index, src_sat, dst_sat, route)
        pkt.route, pkt.rpos = route, 0

    def _route_ok(self, route: tuple[int, ...]) -> bool:
        for u, v in zip(route, route[1:]):
            li = self.neighbor_link[u][self.dir_of[u][v]]
            if not self.active[li] or self.pending[li]:
                return False
        return True

    def _arrive(self, t: float, pkt: Packet, u: int) -> None:
        # hot path: one call per packet and satellite, kept flat on purpose
        if pkt.trace is not None:
            pkt.trace.append([u, t, self.t_r, self.t_s, 0.0, 0.0])
        s_dst = self.serving[pkt.dst]
        if s_dst == u:
            self._downlink(t, pkt, u)
            return
        if pkt.hops >= self.max_hops:
            self._drop(pkt, "ttl", t)
            return
        if s_dst < 0:
            self._drop(pkt, "unserved", t)
            return
        if self.protocol == SSPF:
            nh = self._next_hop_sspf(pkt, u)
        else:
            c = self.sat_cluster[u]
            target = pkt.target
            if pkt.cluster != c or (target >= 0 and target != s_dst):
                self._resolve(pkt, c, u)
                target = pkt.target
            prev, tab = self.tables[c]
            if tab is not None and t < tab.effective[u] and prev is not None:
                tab = prev
            nh = None
            if tab is not None:
                ft = tab.tables.get(u)
                if ft is not None:
                    nh = ft.entries.get((pkt.entry, target))
                if nh is None:
                    nh = tab.default_next_hop(u, target)
                if nh is not None and not self.active[self.neighbor_link[u][self.dir_of[u][nh]]]:
                    nh = self._fallback(tab, u, nh, target)
        if nh is None:
            self._drop(pkt, "no_route", t)
            return
        if nh.__class__ is str:
            self._drop(pkt, nh, t)
            return
        d = self.dir_of[u][nh]
        port = u * 4 + d
        size = self.size
        self.offered[port] += size
        free = self.isl_free[port]
        if free > t:
            if (free - t) * self.isl_cap + size > self.buffer:
                self.port_drops[port] += 1
                self._drop(pkt, "isl_buffer_overflow", t)
                return
            depart = free + self.isl_tx
        else:
            depart = t + self.isl_tx
        self.isl_free[port] = depart
        li = self.neighbor_link[u][d]
        prop = self.delay0[li] + self.ddelay[li] * (depart - self.tick_time) * self.inv_step
        pkt.w += depart - t
        pkt.prop += prop
        pkt.hops += 1
        pkt.tr += self.t_r
        pkt.ts += self.t_s
        if pkt.trace is not None:
            pkt.trace[-1][4:] = [depart - t, prop]
        self._seq += 1
        heappush(self.heap, (depart + prop + self.t_proc, _ARRIVE, self._seq, (pkt, nh)))

    def _fallback(self, tab: ClusterTables, u: int, nh: int, target: int):
        alt = tab.default_next_hop(u, target)
        if alt is not None and self._usable(u, alt):
            return alt
        return "inter_plane_shutdown" if self.dir_of[u][nh] >= 2 else None

    def _downlink(self, t: float, pkt: Packet, u: int) -> None:
        port = self.downlink[u]
        size = self.sim.packet_size
        if port.backlog(t) + size > port.buffer:
            self._drop(pkt, "downlink_buffer_overflow", t)
            return
        depart = max(t, port.free_at) + size / port.capacity
        port.free_at = depart
        w = depart - t
        prop = self._ground_delay(pkt.dst, depart)
        pkt.w += w
        pkt.prop += prop
        end = depart + prop
        if pkt.trace is not None:
            pkt.trace[-1][4:] = [w, prop]
        if end > self.sim.duration:
            self.in_flight_late += 1
            if pkt.trace is not None:
                self._finish_trace(pkt, end, "in_flight")
            return
        self.delivered += 1
        sid = pkt.session
        self.lat_sum[sid] = self.lat_sum.get(sid, 0.0) + (end - pkt.created)
        self.lat_cnt[sid] = self.lat_cnt.get(sid, 0) + 1
        self.hop_sum[sid] = self.hop_sum.get(sid, 0) + pkt.hops
        self.first_hops.setdefault(sid, pkt.hops)
        self.hop_hist[pkt.hops] = self.hop_hist.get(pkt.hops, 0) + 1
        if pkt.trace is not None:
            self._finish_trace(pkt, end, "delivered")

    def _usable(self, u: int, v: int) -> bool:
        d = self.dir_of[u].get(v)
        return d is not None and self.active[self.neighbor_link[u][d]]

    def _next_hop_sspf(self, pkt: Packet, u: int):
        route = pkt.route
        i = pkt.rpos
        if i + 1 < len(route) and route[i] == u and self._usable(u, route[i + 1]):
            pkt.rpos = i + 1
            return route[i + 1]
        # stale source route (handover of the destination, or a link went down): recompute here
        r = self.oracle.route(u, self.serving[pkt.dst])
        if r is None or r.hops == 0:
            return None
        pkt.route, pkt.rpos = r.nodes, 1
        return r.nodes[1]

    def _resolve(self, pkt: Packet, c: int, u: int) -> None:
        """Pick the in-cluster target of a packet entering cluster ``c`` at node ``u``.

        Packets head for the cluster responsible for the destination area.
        That cluster knows where its terminals are attached and, when the
        serving satellite lies elsewhere (near the seam), labels the packet
        with the serving satellite's cluster; later clusters follow the label.
        """
        s = self.serving[pkt.dst]
        if self.sat_cluster[s] == c or s in self.interface_sets[c]:
            target = s
        else:
            goal = pkt.goal
            if goal < 0 or goal == c:
                goal = self.area_target.get(self.term_area[pkt.dst], self.sat_cluster[s])
                if goal == c or pkt.goal == c:
                    goal = self.sat_cluster[s]
                    pkt.goal = goal
            target = direction_target(*grid_steps_toward(self.cmap, c, goal))
        pkt.cluster, pkt.entry, pkt.target = c, u, target
        dem = self.demand[c]
        key = (u, target)
        dem[key] = dem.get(key, 0.0) + self.sim.packet_size

    # --- main loop ------------------------------------------------------------------

    def _push(self, t: float, kind: int, payload) -> None:
        self._seq += 1
        heappush(self.heap, (t, kind, self._seq, payload))

    def run(self) -> MetricsReport:
        started = _time.perf_counter()
        sim = self.sim
        n_ticks = int(math.floor(sim.duration / sim.step + 1e-9))
        for k in range(n_ticks + 1):
            self._push(k * sim.step, _TICK, k)
        if self.protocol == IDLB:
            n_up = int(math.floor(sim.duration / self.params.update_period + 1e-9))
            for j in range(n_up + 1):
                self._push(j * self.params.update_period, _UPDATE, None)
        for s in self.sc.sessions:
            if s.start < sim.duration and s.duration > 0:
                self._push(s.start, _GEN, s)
        end = sim.duration
        heap = self.heap
        pop = heapq.heappop
        arrive = self._arrive
        while heap:
            event = pop(heap)
            t, kind, _, payload = event
            if t > end:
                heappush(heap, event)
                break
            if kind == _ARRIVE:
                arrive(t, payload[0], payload[1])
            elif kind == _GEN:
                self._generate(t, payload)
            elif kind == _TICK:
                self._tick(payload)
            else:
                self._update(t)
        q = self.queue
        in_queue = [p for p in q.payloads() if isinstance(p, tuple)]
        in_flight = len(in_queue) + self.in_flight_late
        if sim.trace:
            for pkt, _node in in_queue:
                self._finish_trace(pkt, end, "in_flight")
        session_latency = {sid: self.lat_sum[sid] / self.lat_cnt[sid] for sid in sorted(self.lat_sum)}
        session_hops = {sid: self.hop_sum[sid] / self.lat_cnt[sid] for sid in sorted(self.hop_sum)}
        return MetricsReport(
            protocol=self.protocol,
            seed=self.sc.seed,
            config_hash=self.sc.config_hash,
            duration=sim.duration,
            sessions=len(self.sc.sessions),
            generated=self.generated,
            delivered=self.delivered,
            in_flight=in_flight,
            drops=dict(self.drops),
            session_latency=session_latency,
            session_hops=session_hops,
            session_first_hops=dict(sorted(self.first_hops.items())),
            hop_counts=dict(sorted(self.hop_hist.items())),
            packet_latency_sum=sum(self.lat_sum[s] for s in sorted(self.lat_sum)),
            signaling_packets=self.signaling,
            wall_time=_time.perf_counter() - started,
        )


def run(scenario: Scenario) -> MetricsReport:
    return Simulator(scenario).run()


def run_with_traces(scenario: Scenario) -> tuple[MetricsReport, list[PacketTrace]]:
    """Run with per-hop packet tracing switched on."""
    from dataclasses import replace

    sim = Simulator(replace(scenario, sim=replace(scenario.sim, trace=True)))
    report = sim.run()
    return report, sorted(sim.traces, key=lambda p: p.id)
