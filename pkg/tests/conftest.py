from __future__ import annotations

import numpy as np
import pytest

from idlbsim.cluster import build_cluster_map
from idlbsim.engine import UT_GW, Scenario, Session, SimulationParams
from idlbsim.geoaddr import area_of
from idlbsim.ground import Terminal
from idlbsim.orbit import ConstellationConfig, ecef_to_geodetic, positions_ecef


@pytest.fixture(scope="session")
def constellation() -> ConstellationConfig:
    return ConstellationConfig()


@pytest.fixture(scope="session")
def cmap(constellation):
    return build_cluster_map(constellation)


def terminal_under(index: int, kind: str, sat: int, config: ConstellationConfig, t: float = 0.0) -> Terminal:
    """A terminal placed at the sub-satellite point of ``sat`` at time ``t``."""
    lat, lon, _ = ecef_to_geodetic(positions_ecef(config, t)[sat : sat + 1])
    la, lo = float(lat[0]), float(lon[0])
    return Terminal(index, index + 1, kind, la, lo, 20.0 if kind == "GW" else 30.0, area_of(la, lo))


# plane 14 crosses the equator near slot 17 at t = 0; all four satellites sit in one cluster
BOTTLENECK_SRC = 14 * 48 + 16
BOTTLENECK_DST = (14 * 48 + 18, 14 * 48 + 19)


def bottleneck_scenario(protocol: str, n_sessions: int = 11, duration: float = 10.0,
                        rate: float = 1e8) -> Scenario:
    """``n_sessions`` staggered flows from one gateway to terminals two and three hops up the same plane.

    Every min-hop path uses the same two intra-plane links, so with eleven
    100 Mbit/s flows the offered load (1.1 Gbit/s) exceeds the link capacity.
    Access links are sized so that only the ISLs can overflow.
    """
    config = ConstellationConfig()
    split = (n_sessions + 1) // 2
    dst_sat = [BOTTLENECK_DST[0] if i < split else BOTTLENECK_DST[1] for i in range(n_sessions)]
    terms = [terminal_under(0, "GW", BOTTLENECK_SRC, config)]
    terms += [terminal_under(i + 1, "UT", s, config) for i, s in enumerate(dst_sat)]
    pinned = {0: BOTTLENECK_SRC, **{i + 1: s for i, s in enumerate(dst_sat)}}
    packet = 1.2e6
    sessions = [
        Session(k, 0, k + 1, rate, k * packet / rate / n_sessions, 2 * duration, UT_GW) for k in range(n_sessions)
    ]
    return Scenario(config, terms, sessions, protocol, sim=SimulationParams(duration=duration), pinned=pinned)


def small_scenario(protocol: str, n_sessions: int = 30, duration: float = 20.0, seed: int = 3,
                   rate: float = 1e7, trace: bool = False) -> Scenario:
    """A handful of real terminals and gateways with light traffic."""
    from dataclasses import replace

    from idlbsim.config import build_scenario, desk_scale

    cfg = desk_scale().with_seed(seed)
    cfg = replace(
        cfg,
        ground=replace(cfg.ground, active_uts=40),
        traffic=replace(cfg.traffic, sessions=n_sessions, session_rate=rate, mean_duration=duration / 2),
        simulation=replace(cfg.simulation, duration=duration, trace=trace),
    )
    return build_scenario(cfg, protocol)


_ACCEPTANCE: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
