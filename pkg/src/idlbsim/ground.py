"""Ground segment: terminal placement, satellite visibility and handovers."""
from __future__ import annotations

import csv
import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .geoaddr import TerminalAddress, areas_of
from .orbit import ConstellationConfig, MovementGrid, elevation_angles, geodetic_to_ecef, positions_ecef

log = logging.getLogger(__name__)

UT, GW = "UT", "GW"
UT_MIN_ELEVATION = 30.0
GW_MIN_ELEVATION = 20.0
DENSITY_CAP = 100.0  # persons / km^2


@dataclass(frozen=True)
class Terminal:
    index: int  # position in the scenario's terminal list
    id: int  # 19-bit identifier, unique within the area
    kind: str
    latitude: float
    longitude: float
    min_elevation: float
    area: int
    name: str = ""

    @property
    def address(self) -> TerminalAddress:
        return TerminalAddress(self.area, self.id)

    @property
    def position(self) -> tuple[float, float]:
        return (self.latitude, self.longitude)


@dataclass(frozen=True)
class DensityGrid:
    lat_min: np.ndarray
    lon_min: np.ndarray
    cell_deg: np.ndarray
    density: np.ndarray
    cap: float = DENSITY_CAP

    def __len__(self) -> int:
        return len(self.density)

    def capped(self) -> np.ndarray:
        return np.minimum(self.density, self.cap)

    def cell_areas(self) -> np.ndarray:
        """Cell surface in km^2 on the spherical Earth."""
        r = 6371.0
        lo = np.radians(self.lat_min)
        hi = np.radians(np.minimum(self.lat_min + self.cell_deg, 90.0))
        return r * r * np.radians(self.cell_deg) * (np.sin(hi) - np.sin(lo))

    @classmethod
    def from_cells(cls, rows: Iterable[tuple[float, float, float, float]], cap: float = DENSITY_CAP) -> "DensityGrid":
        arr = np.array(list(rows), dtype=float).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], cap)


def load_density_grid(path: str | Path | None = None, cap: float = DENSITY_CAP) -> DensityGrid:
    """Read a ``lat_min,lon_min,cell_deg,density`` CSV; the bundled synthetic grid by default."""
    if path is None:
        with resources.files("idlbsim.data").joinpath("density.csv").open() as fh:
            return _read_density(fh, "density.csv", cap)
    with open(path, newline="") as fh:
        return _read_density(fh, path, cap)


def _read_density(fh, name, cap: float) -> DensityGrid:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        raise ConfigError(f"{name}: empty density grid")
    if [h.strip() for h in header] != ["lat_min", "lon_min", "cell_deg", "density"]:
        raise ParseError(name, 1, f"unexpected header {header}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            vals = tuple(float(x) for x in row)
        except ValueError as exc:
            raise ParseError(name, lineno, str(exc)) from None
        if len(vals) != 4 or vals[2] <= 0 or vals[3] < 0:
            raise ParseError(name, lineno, f"bad cell {row}")
        rows.append(vals)
    return DensityGrid.from_cells(rows, cap)


# (lat, lon, sigma_lat, sigma_lon, peak density)
_POPULATION_BLOBS = (
    (50, 10, 6, 12, 150), (53, -2, 3, 3, 200), (23, 79, 8, 8, 300), (32, 114, 8, 8, 300),
    (36, 138, 3, 4, 300), (-7, 110, 2, 6, 300), (9, 7, 5, 5, 150), (9, 39, 4, 4, 100),
    (-2, 34, 5, 4, 80), (28, 31, 4, 1.5, 200), (39, -78, 6, 6, 100), (41, -89, 4, 6, 50),
    (36, -120, 4, 3, 80), (20, -100, 4, 4, 100), (-22, -46, 5, 5, 100), (-34, -60, 3, 3, 60),
    (5, -74, 3, 3, 60), (15, 102, 6, 5, 100), (30, 71, 5, 4, 150), (37, 40, 5, 10, 60),
    (55, 38, 4, 10, 30), (-34, 150, 3, 3, 40), (-27, 28, 4, 4, 40), (13, 122, 4, 2, 150),
    (37, 127, 2, 2, 300), (24, 90, 3, 3, 300),
)


def synthetic_density_grid(cell_deg: float = 2.0, floor: float = 1.0) -> DensityGrid:
    """Continent-like population blobs on a regular grid; cells below ``floor`` are dropped."""
    lat = np.arange(-90.0, 90.0, cell_deg)
    lon = np.arange(-180.0, 180.0, cell_deg)
    la, lo = np.meshgrid(lat + cell_deg / 2, lon + cell_deg / 2, indexing="ij")
    dens = np.zeros_like(la)
    for blat, blon, slat, slon, peak in _POPULATION_BLOBS:
        dlon = (lo - blon + 180.0) % 360.0 - 180.0
        dens += peak * np.exp(-0.5 * (((la - blat) / slat) ** 2 + (dlon / slon) ** 2))
    keep = dens >= floor
    lat_min = np.broadcast_to(lat[:, None], la.shape)[keep]
    lon_min = np.broadcast_to(lon[None, :], la.shape)[keep]
    return DensityGrid(lat_min, lon_min, np.full(keep.sum(), cell_deg), np.round(dens[keep], 3))


def generate_terminals(grid: DensityGrid, n: int, seed: int, first_index: int = 0) -> list[Terminal]:
    """Draw ``n`` user terminals from the capped population of ``grid``.

    Cells are picked by inverse-CDF sampling over population (capped density
    times cell area); positions are area-uniform inside the cell.
    """
    if n <= 0:
        raise ConfigError("number of terminals must be positive")
    if len(grid) == 0:
        raise ConfigError("density grid is empty")
    weights = grid.capped() * grid.cell_areas()
    total = weights.sum()
    if total <= 0:
        raise ConfigError("density grid has no population")
    cdf = np.cumsum(weights) / total
    rng = np.random.default_rng(seed)
    cells = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(grid) - 1)
    lo = np.radians(grid.lat_min[cells])
    hi = np.radians(np.minimum(grid.lat_min[cells] + grid.cell_deg[cells], 90.0))
    lat = np.degrees(np.arcsin(np.sin(lo) + rng.random(n) * (np.sin(hi) - np.sin(lo))))
    lon = grid.lon_min[cells] + rng.random(n) * grid.cell_deg[cells]
    lon = (lon + 180.0) % 360.0 - 180.0
    return _with_ids(UT, lat, lon, UT_MIN_ELEVATION, first_index)


def _with_ids(kind, lat, lon, min_elev, first_index, names: Sequence[str] | None = None) -> list[Terminal]:
    areas = areas_of(lat, lon)
    counters: dict[int, int] = {}
    out = []
    for i, (la, lo, a) in enumerate(zip(lat, lon, areas)):
        local = counters.get(int(a), 0)
        counters[int(a)] = local + 1
        name = names[i] if names else ""
        out.append(Terminal(first_index + i, local, kind, float(la), float(lo), min_elev, int(a), name))
    return out


def load_gateways(path: str | Path | None = None, first_index: int = 0, id_offset: int = 1 << 18) -> list[Terminal]:
    """Read a ``name,lat_deg,lon_deg`` gateway file; the bundled 39 gateways by default.

    Gateway ids start at ``id_offset`` so they never collide with user
    terminals in the same area.
    """
    if path is None:
        with resources.files("idlbsim.data").joinpath("gateways.csv").open() as fh:
            rows = _read_gateways(fh, "gateways.csv")
    else:
        with open(path, newline="") as fh:
            rows = _read_gateways(fh, path)
    if not rows:
        log.warning("gateway file %s lists no gateways", path)
        return []
    names = [r[0] for r in rows]
    lat = np.array([r[1] for r in rows])
    lon = np.array([r[2] for r in rows])
    gws = _with_ids(GW, lat, lon, GW_MIN_ELEVATION, first_index, names)
    return [Terminal(g.index, g.id + id_offset, g.kind, g.latitude, g.longitude, g.min_elevation, g.area, g.name) for g in gws]


def _read_gateways(fh, name) -> list[tuple[str, float, float]]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return []
    if [h.strip() for h in header] != ["name", "lat_deg", "lon_deg"]:
        raise ParseError(name, 1, f"unexpected header {header}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 3:
            raise ParseError(name, lineno, f"expected 3 fields, got {len(row)}")
        try:
            lat, lon = float(row[1]), float(row[2])
        except ValueError as exc:
            raise ParseError(name, lineno, str(exc)) from None
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 360.0):
            raise ParseError(name, lineno, f"coordinates out of range: {lat}, {lon}")
        rows.append((row[0].strip(), lat, lon))
    return rows


# --- visibility ----------------------------------------------------------

def terminal_xyz(terminals: Sequence[Terminal], config: ConstellationConfig) -> np.ndarray:
    lat = np.array([t.latitude for t in terminals])
    lon = np.array([t.longitude for t in terminals])
    return geodetic_to_ecef(lat, lon, config.earth_radius).reshape(-1, 3)


def remaining_visibility(
    grid: MovementGrid, ground_xyz: np.ndarray, min_elevation: float, sats: np.ndarray, t: float, horizon: float = 900.0
) -> np.ndarray:
    """Seconds each satellite in ``sats`` stays at or above ``min_elevation`` from time ``t``.

    Resolved on the movement grid with linear interpolation of the final
    crossing; satellites already below the threshold get 0.
    """
    sats = np.asarray(sats, dtype=np.int64)
    out = np.zeros(len(sats))
    if len(sats) == 0:
        return out
    prev = elevation_angles(ground_xyz, grid.positions(t)[sats])
    alive = prev >= min_elevation
    t_prev = t
    k = grid.index(t) + 1
    while alive.any() and k * grid.step - t <= horizon:
        tk = k * grid.step
        cur = elevation_angles(ground_xyz, grid.at_index(k)[sats])
        ended = alive & (cur < min_elevation)
        frac = (prev[ended] - min_elevation) / np.maximum(prev[ended] - cur[ended], 1e-12)
        out[ended] = t_prev + frac * (tk - t_prev) - t
        out[alive & ~ended] = tk - t
        alive &= ~ended
        prev, t_prev = cur, tk
        k += 1
    return out


def visible_satellites(
    config: ConstellationConfig, terminal: Terminal, t: float, grid: MovementGrid | None = None
) -> list[int]:
    """Satellites at or above the terminal's minimum elevation, longest remaining pass first."""
    grid = grid or MovementGrid(config)
    g = terminal_xyz([terminal], config)[0]
    elev = elevation_angles(g, grid.positions(t))
    cand = np.flatnonzero(elev >= terminal.min_elevation)
    rem = remaining_visibility(grid, g, terminal.min_elevation, cand, t)
    order = np.lexsort((cand, -rem))
    return [int(c) for c in cand[order]]


# --- handover ------------------------------------------------------------

@dataclass(frozen=True)
class HandoverEvent:
    time: float
    terminal: int
    old_sat: int
    new_sat: int


@dataclass
class ServingAssignment:
    serving: dict[int, int] = field(default_factory=dict)  # terminal -> sat, -1 when unserved
    attached: dict[int, set[int]] = field(default_factory=dict)  # sat -> terminals
    next_candidate: dict[int, int] = field(default_factory=dict)

    def assign(self, terminal: int, sat: int) -> None:
        old = self.serving.get(terminal, -1)
        if old >= 0:
            self.attached[old].discard(terminal)
            if not self.attached[old]:
                del self.attached[old]
        self.serving[terminal] = sat
        if sat >= 0:
            self.attached.setdefault(sat, set()).add(terminal)

    def sat_of(self, terminal: int) -> int:
        return self.serving.get(terminal, -1)

    def is_consistent(self) -> bool:
        for term, sat in self.serving.items():
            if sat >= 0 and term not in self.attached.get(sat, ()):
                return False
        return all(self.serving.get(term) == sat for sat, terms in self.attached.items() for term in terms)


# Chooses one of ``candidates`` given their remaining visibility in seconds.
HandoverPolicy = Callable[[np.ndarray, np.ndarray], int]


def longest_visibility(candidates: np.ndarray, remaining: np.ndarray) -> int:
    best = np.lexsort((candidates, -remaining))[0]
    return int(candidates[best])


class HandoverManager:
    """Tracks which satellite serves each terminal and hands over on the movement grid.

    ``preferred`` may narrow the candidate set for a terminal (for example to
    the satellites of the cluster responsible for its area); it returns a list
    of candidate masks in order of preference.
    """

    def __init__(
        self,
        config: ConstellationConfig,
        terminals: Sequence[Terminal],
        grid: MovementGrid | None = None,
        policy: HandoverPolicy = longest_visibility,
        preferred: Callable[[int, float], list[np.ndarray]] | None = None,
    ):
        self.config = config
        self.terminals = list(terminals)
        self.grid = grid or MovementGrid(config)
        self.policy = policy
        self.preferred = preferred
        self.xyz = terminal_xyz(self.terminals, config) if self.terminals else np.zeros((0, 3))
        self.min_elev = np.array([t.min_elevation for t in self.terminals])
        self.assignment = ServingAssignment()

    def _elevations(self, t: float) -> np.ndarray:
        if not self.terminals:
            return np.zeros((0, self.config.num_sats))
        return elevation_angles(self.xyz, self.grid.positions(t))

    def _choose(self, i: int, t: float, elev_now: np.ndarray, elev_next: np.ndarray) -> int:
        visible = elev_now >= self.min_elev[i]
        masks = self.preferred(i, t) if self.preferred else []
        lasting = visible & (elev_next >= self.min_elev[i])
        for base in (lasting, visible):
            for m in [*masks, None]:
                cand = np.flatnonzero(base if m is None else base & m)
                if cand.size:
                    rem = remaining_visibility(self.grid, self.xyz[i], self.min_elev[i], cand, t)
                    return self.policy(cand, rem)
        return -1

    def step(self, t: float, force: Iterable[int] = ()) -> list[HandoverEvent]:
        """Hand over every terminal whose serving satellite would drop out before the next grid tick.

        Terminals in ``force`` are re-evaluated regardless, and are moved if
        the preferred candidate set no longer contains their satellite.
        """
        if not self.terminals:
            return []
        elev_now = self._elevations(t)
        elev_next = self._elevations(t + self.grid.step)
        forced = set(force)
        events = []
        rows = np.arange(len(self.terminals))
        current = np.array([self.assignment.sat_of(i) for i in rows])
        served = current >= 0
        keep_now = np.zeros(len(rows), dtype=bool)
        keep_next = np.zeros(len(rows), dtype=bool)
        keep_now[served] = elev_now[rows[served], current[served]] >= self.min_elev[served]
        keep_next[served] = elev_next[rows[served], current[served]] >= self.min_elev[served]
        for i in rows:
            old = int(current[i])
            if old >= 0 and keep_now[i] and keep_next[i] and i not in forced:
                continue
            if old >= 0 and keep_now[i] and keep_next[i] and self.preferred:
                masks = self.preferred(int(i), t)
                if masks and any(m[old] for m in masks):
                    continue
            new = self._choose(int(i), t, elev_now[i], elev_next[i])
            if new == old:
                continue
            self.assignment.assign(int(i), new)
            if old >= 0 and new >= 0:
                events.append(HandoverEvent(t, int(i), old, new))
            elif new < 0:
                log.warning("terminal %d has no visible satellite at t=%.1f", i, t)
        return events

    def serving_elevations(self, t: float) -> np.ndarray:
        """Elevation of each terminal's serving satellite (NaN when unserved)."""
        elev = self._elevations(t)
        out = np.full(len(self.terminals), np.nan)
        for i in range(len(self.terminals)):
            s = self.assignment.sat_of(i)
            if s >= 0:
                out[i] = elev[i, s]
        return out


def handover_step(manager: HandoverManager, t: float, force: Iterable[int] = ()) -> tuple[ServingAssignment, list[HandoverEvent]]:
    events = manager.step(t, force)
    return manager.assignment, events
