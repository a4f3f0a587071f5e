from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idlbsim.orbit import (
    MU_EARTH,
    SPEED_OF_LIGHT,
    ConstellationConfig,
    GroundPoint,
    MovementGrid,
    SatId,
    coverage_half_angle,
    ecef_to_geodetic,
    elevation_angles,
    geodetic_to_ecef,
    latitudes,
    positions_ecef,
    positions_eci,
    propagation_delay,
    satellite_position,
    visibility_window,
)


def test_period_matches_kepler(constellation):
    a = 6371.0 + 600.0
    assert constellation.period == pytest.approx(2 * math.pi * math.sqrt(a**3 / MU_EARTH), rel=1e-12)
    assert constellation.period == pytest.approx(5792.3, abs=0.5)


def test_satellites_stay_on_their_shell(constellation):
    for t in (0.0, 123.4, 5000.0):
        r = np.linalg.norm(positions_ecef(constellation, t), axis=1)
        np.testing.assert_allclose(r, 6971.0, rtol=1e-12)


def test_intra_plane_neighbours_are_one_chord_apart(constellation):
    pos = positions_eci(constellation, 42.0).reshape(30, 48, 3)
    chord = 2 * 6971.0 * math.sin(math.pi / 48)
    d = np.linalg.norm(pos - np.roll(pos, -1, axis=1), axis=2)
    np.testing.assert_allclose(d, chord, rtol=1e-9)
    assert chord / SPEED_OF_LIGHT == pytest.approx(3.04e-3, abs=0.01e-3)


def test_latitude_never_exceeds_inclination(constellation):
    lat = np.concatenate([latitudes(constellation, t) for t in np.linspace(0, constellation.period, 37)])
    assert np.abs(lat).max() <= 86.4 + 1e-9
    assert np.abs(lat).max() > 86.0


def test_ground_track_moves_west_with_earth_rotation(constellation):
    sat = SatId(0, 0)
    p0 = satellite_position(constellation, sat, 0.0)
    p1 = satellite_position(constellation, sat, constellation.period)
    # one orbit later the satellite is back at the same latitude, shifted west by Earth rotation
    assert p1.latitude == pytest.approx(p0.latitude, abs=1e-9)
    shift = (p0.longitude - p1.longitude) % 360.0
    assert shift == pytest.approx(math.degrees(7.2921159e-5 * constellation.period), rel=1e-9)


@given(st.floats(-89.0, 89.0), st.floats(-180.0, 179.999))
def test_geodetic_round_trip(lat, lon):
    xyz = geodetic_to_ecef(lat, lon, 6371.0)
    la, lo, r = ecef_to_geodetic(np.atleast_2d(xyz))
    assert float(la[0]) == pytest.approx(lat, abs=1e-9)
    assert (float(lo[0]) - lon + 180.0) % 360.0 - 180.0 == pytest.approx(0.0, abs=1e-9)
    assert float(r[0]) == pytest.approx(6371.0)


def test_elevation_is_ninety_overhead_and_zero_on_horizon():
    ground = geodetic_to_ecef(10.0, 20.0, 6371.0)
    overhead = geodetic_to_ecef(10.0, 20.0, 6971.0)
    assert float(elevation_angles(ground, overhead[None, :])[0]) == pytest.approx(90.0)
    # horizon point: tangent direction from the ground point
    up = ground / np.linalg.norm(ground)
    east = np.cross([0.0, 0.0, 1.0], up)
    east /= np.linalg.norm(east)
    assert float(elevation_angles(ground, (ground + 500 * east)[None, :])[0]) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("elev", [20.0, 30.0, 45.0])
def test_coverage_half_angle_law_of_sines(constellation, elev):
    # triangle Earth centre - terminal - satellite: angle at terminal is 90 + elev
    re, rs = 6371.0, 6971.0
    nadir = math.asin(re * math.sin(math.radians(90 + elev)) / rs)
    expected = 180.0 - (90 + elev) - math.degrees(nadir)
    assert coverage_half_angle(constellation, elev) == pytest.approx(expected, abs=1e-9)


def test_propagation_delay_is_distance_over_c():
    a = GroundPoint(0.0, 0.0)
    b = GroundPoint(0.0, 90.0)
    assert propagation_delay(a, b) == pytest.approx(6371.0 * math.sqrt(2) / SPEED_OF_LIGHT)


def test_visibility_window_is_bounded_by_overhead_pass(constellation):
    w = visibility_window(constellation, (0.0, 0.0), 30.0, step=2.0)
    # an overhead pass in the inertial frame, slightly stretched by Earth rotation
    upper = 2 * math.radians(coverage_half_angle(constellation, 30.0)) / constellation.mean_motion
    assert 0.9 * upper < w < 1.1 * upper


def test_visibility_window_rejects_bad_elevation(constellation):
    with pytest.raises(ValueError):
        visibility_window(constellation, (0.0, 0.0), 0.0)


def test_movement_grid_interpolates_linearly(constellation):
    grid = MovementGrid(constellation, step=5.0)
    mid = grid.positions(2.5)
    np.testing.assert_allclose(mid, 0.5 * (grid.at_index(0) + grid.at_index(1)))
    np.testing.assert_array_equal(grid.positions(10.0), grid.at_index(2))
    # chords of a 5 s arc: interpolation error stays well under a kilometre
    err = np.linalg.norm(mid - positions_ecef(constellation, 2.5), axis=1).max()
    assert err < 1.0


@settings(max_examples=25)
@given(st.integers(1, 40), st.integers(1, 60))
def test_positions_shape_follows_layout(planes, slots):
    cfg = ConstellationConfig(num_planes=planes, sats_per_plane=slots)
    assert positions_ecef(cfg, 0.0).shape == (planes * slots, 3)


def test_invalid_constellation():
    with pytest.raises(ValueError):
        ConstellationConfig(inclination=0.0)
    with pytest.raises(ValueError):
        ConstellationConfig(altitude=-1.0)
