from __future__ import annotations

import pytest

from idlbsim.config import (
    PRESETS,
    ScenarioConfig,
    bench_scale,
    build_scenario,
    desk_scale,
    full_scale,
    load_config,
    loads_config,
)
from idlbsim.errors import ConfigError


def test_defaults_mirror_reference_tables():
    cfg = full_scale()
    assert cfg.constellation.num_planes == 30 and cfg.constellation.sats_per_plane == 48
    assert cfg.constellation.altitude == 600.0 and cfg.constellation.inclination == 86.4
    assert cfg.ground.ut_count == 10000 and cfg.ground.active_uts == 2000
    assert cfg.traffic.sessions == 20000 and cfg.traffic.mean_duration == 30.0
    assert cfg.simulation.duration == 7200.0 and cfg.simulation.step == 5.0 and cfg.simulation.max_hops == 60
    assert cfg.simulation.packet_size == 1.2e6 and cfg.simulation.buffer_size == 6e6


def test_empty_file_is_reference():
    assert loads_config("") == full_scale()


def test_overrides_and_preset():
    cfg = loads_config("[run]\npreset = desk\nprotocol = sspf\n[traffic]\nsessions = 42\n[routing]\ntheta_warn = 0.5\n")
    assert cfg.protocol == "sspf"
    assert cfg.traffic.sessions == 42
    assert cfg.routing.theta_warn == 0.5
    assert cfg.simulation.duration == desk_scale().simulation.duration


def test_ini_round_trip():
    cfg = bench_scale().with_seed(7)
    again = loads_config(cfg.to_ini())
    assert again == cfg
    assert again.hash() == cfg.hash()


def test_hash_ignores_protocol_but_not_parameters():
    cfg = desk_scale()
    assert cfg.hash() == cfg.with_protocol("sspf").hash()
    assert cfg.hash() != cfg.with_seed(2).hash()


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[traffic]\nsesions = 5\n", "sesions"),
        ("[nonsense]\na = 1\n", "nonsense"),
        ("[traffic]\nsessions = many\n", "sessions"),
        ("[run]\nprotocol = ospf\n", "protocol"),
        ("[run]\npreset = huge\n", "preset"),
        ("[ground]\nactive_uts = 1\n", "active_uts"),
        ("[clusters]\nplanes_per_cluster = 7\n", "planes_per_cluster"),
        ("[routing]\ntheta_warn = 0.95\n", "routing"),
        ("[simulation]\nstep = 0\n", "step"),
        ("[simulation]\nbuffer_size = 1\n", "buffer_size"),
        ("[traffic\n", "string"),
    ],
)
def test_errors_name_the_field(text, fragment):
    with pytest.raises(ConfigError) as err:
        loads_config(text)
    assert fragment in str(err.value)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/scenario.ini")


def test_load_from_file(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text("[run]\npreset = bench\n[ground]\nseed = 3\n")
    cfg = load_config(p)
    assert cfg.ground.seed == 3 and cfg.simulation.packet_size == 4.8e6


def test_presets_are_valid():
    for name, make in PRESETS.items():
        assert isinstance(make(), ScenarioConfig), name


def test_build_scenario_is_seeded():
    cfg = desk_scale()
    a = build_scenario(cfg, "idlb")
    b = build_scenario(cfg, "sspf")
    assert a.sessions == b.sessions and a.terminals == b.terminals
    assert len([t for t in a.terminals if t.kind == "UT"]) == 200
    assert len(a.sessions) == 1500
    c = build_scenario(cfg.with_seed(2), "idlb")
    assert c.sessions != a.sessions
