from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idlbsim.metrics import (
    DROP_CAUSES,
    MetricsReport,
    compare,
    fmt,
    histogram_intersection,
    latency_histogram,
)


def make_report(lat: dict[int, float], drops: int = 0, generated: int = 100, protocol: str = "idlb") -> MetricsReport:
    d = {c: 0 for c in DROP_CAUSES}
    d["isl_buffer_overflow"] = drops
    return MetricsReport(
        protocol=protocol, seed=1, config_hash="abc", duration=10.0, sessions=len(lat), generated=generated,
        delivered=generated - drops, in_flight=0, drops=d, session_latency=lat,
        session_hops={k: 3.0 for k in lat}, session_first_hops={k: 3 for k in lat}, hop_counts={3: generated - drops},
        packet_latency_sum=sum(lat.values()), signaling_packets=14352.0,
    )


def test_fmt_nine_significant_digits():
    assert fmt(1 / 3) == "0.333333333"
    assert fmt(np.float64(123456789.123)) == "123456789"
    assert fmt(7) == "7"


def test_dropping_rate_and_conservation():
    r = make_report({0: 0.1}, drops=5, generated=200)
    assert r.dropping_rate == pytest.approx(5 / 200)
    assert r.conserved()
    empty = make_report({}, generated=0)
    assert empty.dropping_rate == 0.0 and math.isnan(empty.mean_session_latency)


def test_histogram_mass_equals_session_count():
    lat = {i: 0.05 + 0.001 * i for i in range(57)}
    h = make_report(lat).histogram()
    assert h.mass == 57
    assert h.bin_width == pytest.approx(0.002)


@given(st.lists(st.floats(0.0, 0.5), min_size=1, max_size=50))
def test_histogram_counts_every_value(values):
    h = latency_histogram(values, 0.01)
    assert h.mass == len(values)
    assert h.edges[0] == 0.0


def test_intersection_identical_and_disjoint():
    a = latency_histogram([0.01, 0.02, 0.03], 0.005)
    assert histogram_intersection(a, a) == pytest.approx(1.0)
    b = latency_histogram([0.2, 0.21], 0.005)
    assert histogram_intersection(a, b) == 0.0


def test_intersection_by_hand():
    # normalized [0.5, 0.5] vs [1, 0] overlap in half the mass
    a = latency_histogram([0.001, 0.003], 0.002)
    b = latency_histogram([0.001, 0.001], 0.002)
    assert histogram_intersection(a, b) == pytest.approx(0.5)


def test_binning_mismatch_raises():
    with pytest.raises(ValueError):
        histogram_intersection(latency_histogram([0.1], 0.001), latency_histogram([0.1], 0.002))
    with pytest.raises(ValueError):
        latency_histogram([0.1], 0.0)


def test_compare_ratios():
    a = make_report({0: 0.10, 1: 0.12}, drops=1)
    b = make_report({0: 0.10, 1: 0.14}, drops=10, protocol="sspf")
    c = compare(a, b)
    assert c.drop_ratio == pytest.approx(0.1)
    assert c.latency_delta == pytest.approx(0.11 - 0.12)
    assert compare(a, a).intersection == pytest.approx(1.0)


def test_csv_rows_match_counters(tmp_path):
    lat = {i: 0.05 + 0.003 * i for i in range(10)}
    r = make_report(lat, drops=4)
    paths = r.write_csvs(tmp_path)
    names = {p.name for p in paths}
    assert {"metrics.csv", "latency_hist.csv", "drops_by_cause.csv", "signaling.csv"} <= names
    with open(tmp_path / "latency_hist.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sum(int(x["sessions"]) for x in rows) == len(lat)
    with open(tmp_path / "drops_by_cause.csv") as fh:
        drops = {x["cause"]: int(x["packets"]) for x in csv.DictReader(fh)}
    assert drops == r.drops
    with open(tmp_path / "metrics.csv") as fh:
        m = {x["metric"]: x["value"] for x in csv.DictReader(fh)}
    assert int(m["generated"]) == r.generated and int(m["dropped"]) == 4
    assert float(m["dropping_rate"]) == pytest.approx(0.04)
    with open(tmp_path / "session_latency.csv") as fh:
        assert len(list(csv.DictReader(fh))) == len(lat)
