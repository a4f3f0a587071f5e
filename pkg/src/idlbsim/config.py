"""Scenario configuration: INI files with one section per block.

Unknown sections or keys are rejected so that a typo never silently falls
back to a default. Every value has a default, so an empty file is the
full-scale reference scenario.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .engine import PROTOCOLS, Scenario, SimulationParams, generate_sessions
from .errors import ConfigError
from .ground import generate_terminals, load_density_grid, load_gateways, synthetic_density_grid
from .orbit import ConstellationConfig
from .routing import RoutingParams


@dataclass(frozen=True)
class GroundConfig:
    ut_count: int = 10000
    active_uts: int = 2000
    gateway_file: str = ""
    density_file: str = ""
    seed: int = 1


@dataclass(frozen=True)
class TrafficConfig:
    sessions: int = 20000
    mean_duration: float = 30.0
    session_rate: float = 1e8
    seed: int = 1


@dataclass(frozen=True)
class ClusterConfig:
    planes_per_cluster: int = 6
    slots_per_cluster: int = 8


@dataclass(frozen=True)
class ScenarioConfig:
    constellation: ConstellationConfig = field(default_factory=ConstellationConfig)
    clusters: ClusterConfig = field(default_factory=ClusterConfig)
    ground: GroundConfig = field(default_factory=GroundConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    routing: RoutingParams = field(default_factory=RoutingParams)
    simulation: SimulationParams = field(default_factory=SimulationParams)
    protocol: str = "idlb"

    def with_protocol(self, protocol: str) -> "ScenarioConfig":
        return replace(self, protocol=protocol)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, ground=replace(self.ground, seed=seed), traffic=replace(self.traffic, seed=seed))

    def to_ini(self) -> str:
        lines = [f"[run]\nprotocol = {self.protocol}\n"]
        for name in _SECTIONS:
            lines.append(f"[{name}]")
            block = getattr(self, name)
            for f in fields(block):
                if name == "simulation" and f.name == "trace":
                    continue
                value = getattr(block, f.name)
                lines.append(f"{f.name} = {'' if value is None else value!r}".replace("'", ""))
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        """Short digest of the fully resolved configuration (protocol excluded)."""
        body = replace(self, protocol="idlb").to_ini()
        return hashlib.sha256(body.encode()).hexdigest()[:16]


_SECTIONS = ("constellation", "clusters", "ground", "traffic", "routing", "simulation")


def full_scale() -> ScenarioConfig:
    return ScenarioConfig()


def desk_scale() -> ScenarioConfig:
    """Reduced scenario for CI: fewer active terminals and a short window, same per-link load regime."""
    return ScenarioConfig(
        ground=GroundConfig(ut_count=10000, active_uts=200),
        traffic=TrafficConfig(sessions=1500),
        simulation=SimulationParams(duration=360.0),
    )


def bench_scale() -> ScenarioConfig:
    """Desk-sized comparison scenario with enough concurrent load to overflow links.

    Packets and buffers are both four times larger than in the reference, so
    the buffer still holds five packets while the event count drops fourfold.
    """
    return ScenarioConfig(
        ground=GroundConfig(ut_count=10000, active_uts=200),
        traffic=TrafficConfig(sessions=1000),
        simulation=SimulationParams(duration=120.0, packet_size=4.8e6, buffer_size=24e6),
    )


PRESETS = {"full": full_scale, "desk": desk_scale, "bench": bench_scale}


def _coerce(block_name: str, f: dataclasses.Field, raw: str, path, line: int):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    raw = raw.strip()
    try:
        if "bool" in kind:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "None" in kind and raw == "":
            return None
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{path}: [{block_name}] {f.name} = {raw!r} is not a valid {kind}") from None


def load_config(path: str | Path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Read an INI scenario file on top of ``base`` (full scale by default)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(parser, path, base)


def loads_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"<string>: {exc}") from None
    return parse_config(parser, "<string>", base)


def parse_config(parser: configparser.ConfigParser, path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    cfg = base or full_scale()
    preset = parser.get("run", "preset", fallback="").strip() if parser.has_section("run") else ""
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"{path}: [run] preset must be one of {sorted(PRESETS)}, got {preset!r}")
        cfg = PRESETS[preset]()
    updates = {}
    for section in parser.sections():
        if section == "run":
            for key, raw in parser.items("run"):
                if key == "protocol":
                    updates["protocol"] = raw.strip()
                elif key != "preset":
                    raise ConfigError(f"{path}: unknown key [run] {key}")
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        block = getattr(cfg, section)
        known = {f.name: f for f in fields(block)}
        changes = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{path}: unknown key [{section}] {key}")
            changes[key] = _coerce(section, known[key], raw, path, 0)
        try:
            updates[section] = replace(block, **changes)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: [{section}] {exc}") from None
    cfg = replace(cfg, **updates)
    validate(cfg, path)
    return cfg


def validate(cfg: ScenarioConfig, path="<config>") -> None:
    if cfg.protocol not in PROTOCOLS:
        raise ConfigError(f"{path}: [run] protocol must be one of {PROTOCOLS}, got {cfg.protocol!r}")
    g, tr = cfg.ground, cfg.traffic
    if g.ut_count < 2:
        raise ConfigError(f"{path}: [ground] ut_count must be at least 2")
    if not 2 <= g.active_uts <= g.ut_count:
        raise ConfigError(f"{path}: [ground] active_uts must lie in [2, ut_count]")
    if tr.sessions < 0:
        raise ConfigError(f"{path}: [traffic] sessions must be non-negative")
    if tr.mean_duration <= 0 or tr.session_rate <= 0:
        raise ConfigError(f"{path}: [traffic] mean_duration and session_rate must be positive")
    cl, co = cfg.clusters, cfg.constellation
    if cl.planes_per_cluster <= 0 or co.num_planes % cl.planes_per_cluster:
        raise ConfigError(f"{path}: [clusters] planes_per_cluster must divide num_planes ({co.num_planes})")
    if cl.slots_per_cluster <= 0 or co.sats_per_plane % cl.slots_per_cluster:
        raise ConfigError(f"{path}: [clusters] slots_per_cluster must divide sats_per_plane ({co.sats_per_plane})")


def build_scenario(cfg: ScenarioConfig, protocol: str | None = None) -> Scenario:
    """Materialise terminals and the session schedule for one run."""
    validate(cfg)
    g = cfg.ground
    grid = load_density_grid(g.density_file) if g.density_file else load_density_grid()
    uts = generate_terminals(grid, g.ut_count, g.seed)
    rng = np.random.default_rng(g.seed + 7919)
    chosen = np.sort(rng.choice(len(uts), size=g.active_uts, replace=False))
    active = [replace(uts[i], index=k) for k, i in enumerate(chosen)]
    gws = load_gateways(g.gateway_file or None, first_index=len(active))
    if cfg.traffic.sessions and not gws:
        raise ConfigError("[ground] gateway_file lists no gateways")
    terminals = active + gws
    sessions = generate_sessions(
        active, gws, cfg.traffic.sessions, cfg.simulation.duration, cfg.traffic.seed,
        cfg.traffic.mean_duration, cfg.traffic.session_rate,
    )
    return Scenario(
        constellation=cfg.constellation,
        terminals=terminals,
        sessions=sessions,
        protocol=protocol or cfg.protocol,
        routing=cfg.routing,
        sim=cfg.simulation,
        planes_per_cluster=cfg.clusters.planes_per_cluster,
        slots_per_cluster=cfg.clusters.slots_per_cluster,
        seed=cfg.traffic.seed,
        config_hash=cfg.hash(),
    )


__all__ = [
    "PRESETS", "ClusterConfig", "GroundConfig", "ScenarioConfig", "TrafficConfig", "bench_scale", "build_scenario",
    "desk_scale",
    "full_scale", "load_config", "loads_config", "synthetic_density_grid",
]
