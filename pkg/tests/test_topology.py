from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idlbsim.orbit import SPEED_OF_LIGHT, ConstellationConfig, latitudes
from idlbsim.topology import (
    EAST,
    INTER_PLANE,
    INTRA_PLANE,
    NORTH,
    SOUTH,
    WEST,
    LinkId,
    build_topology,
    link_table,
    polar_mask,
    shutdown_warnings,
)


def test_link_inventory(constellation):
    table = link_table(constellation)
    # every plane is a ring of 48; 29 plane pairs are linked, none across the seam
    assert (~table.inter).sum() == 30 * 48
    assert table.inter.sum() == 29 * 48
    assert table.num_links == 2832


def test_neighbour_table_is_symmetric(constellation):
    table = link_table(constellation)
    opposite = {NORTH: SOUTH, SOUTH: NORTH, EAST: WEST, WEST: EAST}
    for n in range(constellation.num_sats):
        for d in range(4):
            v = table.neighbor[n, d]
            if v >= 0:
                assert table.neighbor[v, opposite[d]] == n
                assert table.neighbor_link[v, opposite[d]] == table.neighbor_link[n, d]


def test_seam_planes_have_no_outward_links(constellation):
    table = link_table(constellation)
    assert (table.neighbor[:48, WEST] == -1).all()
    assert (table.neighbor[-48:, EAST] == -1).all()


def test_link_id_kind(constellation):
    assert LinkId.between(5, 4, constellation) == LinkId(4, 5, INTRA_PLANE)
    assert LinkId.between(0, 48, constellation).kind == INTER_PLANE


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 6000.0))
def test_degree_rules(t):
    """Degree 4 in general, 3 on seam planes, 2 while poleward of the shutdown latitude."""
    cfg = ConstellationConfig()
    topo = build_topology(cfg, t)
    polar = polar_mask(cfg, t)
    plane = np.arange(cfg.num_sats) // cfg.sats_per_plane
    seam = (plane == 0) | (plane == cfg.num_planes - 1)
    table = topo.table
    for n in range(cfg.num_sats):
        deg = topo.degree(n)
        if polar[n]:
            assert deg == 2
            continue
        # an inter-plane link is down when the neighbour is polar
        expected = 2
        for d in (EAST, WEST):
            v = table.neighbor[n, d]
            if v >= 0 and not polar[v]:
                expected += 1
        assert deg == expected
        assert deg <= (3 if seam[n] else 4)


def test_polar_satellites_lose_inter_plane_links(constellation):
    t = 1000.0
    topo = build_topology(constellation, t)
    lat = latitudes(constellation, t)
    e = topo.table.endpoints
    poleward = (np.abs(lat[e[:, 0]]) > 80.0) | (np.abs(lat[e[:, 1]]) > 80.0)
    np.testing.assert_array_equal(topo.active, ~(topo.table.inter & poleward))


@pytest.mark.parametrize("t", [0.0, 777.0, 3000.0])
def test_shutdown_warning_matches_sampled_latitudes(constellation, t):
    horizon = 2.0
    warned = shutdown_warnings(constellation, t, horizon)
    now = np.abs(latitudes(constellation, t)) > 80.0
    soon = np.zeros_like(now)
    for dt in np.linspace(0.0, horizon, 201):
        soon |= np.abs(latitudes(constellation, t + dt)) > 80.0
    np.testing.assert_array_equal(warned, soon & ~now)


def test_shutdown_warning_rejects_zero_horizon(constellation):
    with pytest.raises(ValueError):
        shutdown_warnings(constellation, 0.0, 0.0)


def test_isl_delays_within_bounds(constellation):
    for t in np.linspace(0, constellation.period, 12, endpoint=False):
        topo = build_topology(constellation, float(t))
        d = topo.link_delays[topo.active]
        assert d.max() <= 5.8e-3
        intra = topo.link_delays[~topo.table.inter]
        np.testing.assert_allclose(intra, 2 * 6971.0 * math.sin(math.pi / 48) / SPEED_OF_LIGHT, rtol=1e-9)


def test_network_stays_connected(constellation):
    for t in np.linspace(0, constellation.period, 8, endpoint=False):
        assert build_topology(constellation, float(t)).is_connected()


def test_pending_links_are_warned_inter_plane_links(constellation):
    topo = build_topology(constellation, 500.0, warning_horizon=30.0)
    pend = topo.pending_links()
    assert pend.any()
    assert not (pend & ~topo.table.inter).any()
    assert not (pend & ~topo.active).any()


def test_negative_time_rejected(constellation):
    with pytest.raises(ValueError):
        build_topology(constellation, -1.0)
