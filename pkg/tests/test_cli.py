from __future__ import annotations

import csv

import pytest

from idlbsim.cli import main


def _metrics(path):
    with open(path, newline="") as fh:
        return {r["metric"]: r["value"] for r in csv.DictReader(fh)}


def _run(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["run", "--preset", "desk", "--duration", "5", "--sessions", "20", "-o", str(out), *extra])
    return code, out


def test_empty_run_writes_all_outputs(tmp_path):
    code, out = _run(tmp_path, "empty", "--sessions", "0")
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert {"metrics.csv", "session_latency.csv", "latency_hist.csv"} <= names
    m = _metrics(out / "metrics.csv")
    assert int(m["generated"]) == 0 and float(m["dropping_rate"]) == 0.0


def test_rerun_is_byte_identical_apart_from_wall_time(tmp_path):
    assert _run(tmp_path, "a", "--trace", str(tmp_path / "a.csv"))[0] == 0
    assert _run(tmp_path, "b", "--trace", str(tmp_path / "b.csv"))[0] == 0
    for name in ("session_latency.csv", "latency_hist.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ma, mb = _metrics(tmp_path / "a" / "metrics.csv"), _metrics(tmp_path / "b" / "metrics.csv")
    ma.pop("wall_time_s", None)
    mb.pop("wall_time_s", None)
    assert ma == mb
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_compare_and_binning_mismatch(tmp_path, capsys):
    _run(tmp_path, "idlb", "-p", "idlb")
    _run(tmp_path, "sspf", "-p", "sspf")
    _run(tmp_path, "coarse", "-p", "sspf", "--bin-width", "0.01")
    out = tmp_path / "cmp.csv"
    assert main(["compare", str(tmp_path / "idlb"), str(tmp_path / "sspf"), "-o", str(out)]) == 0
    assert "histogram_intersection" in out.read_text()
    assert main(["compare", str(tmp_path / "idlb"), str(tmp_path / "coarse"), "-o", str(out)]) == 1
    assert "binning" in capsys.readouterr().err
    assert main(["compare", str(tmp_path / "idlb"), str(tmp_path / "missing"), "-o", str(out)]) == 1


def test_bad_config_exits_with_config_error(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[constellation]\nnum_planes = -3\n")
    assert main(["run", "-c", str(ini), "-o", str(tmp_path / "o")]) == 1
    assert "config error" in capsys.readouterr().err
    assert main(["run", "--preset", "desk", "--sessions", "-1", "-o", str(tmp_path / "o")]) == 1


def test_analytics_reports_constellation_facts(tmp_path):
    out = tmp_path / "analytics.csv"
    assert main(["analytics", "-o", str(out)]) == 0
    m = _metrics(out)
    assert int(m["area_count"]) == 6962 and int(m["area_bits"]) == 13
    assert float(m["isl_intra_plane_max_s"]) == pytest.approx(3.04e-3, abs=0.01e-3)
    assert float(m["expected_concurrency"]) == pytest.approx(83.33, abs=0.01)


def test_signaling_and_areas_commands(tmp_path):
    assert main(["signaling", "estimate", "-o", str(tmp_path / "s.csv")]) == 0
    assert main(["areas", "check", "--samples", "2", "-o", str(tmp_path / "a.csv")]) == 0
    assert main(["topo", "report", "-t", "100", "-o", str(tmp_path / "t.csv")]) == 0
    assert main(["topo", "report", "-t", "-1", "-o", str(tmp_path / "t.csv")]) == 1


def test_sweep_writes_one_row_per_cell(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(["sweep", "--preset", "desk", "--duration", "3", "--counts", "0,5", "--seeds", "1,2",
                 "-o", str(out)])
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 2 * 2
    assert {r["protocol"] for r in rows} == {"idlb", "sspf"}
    assert main(["sweep", "--counts", "1", "--protocols", "ospf", "-o", str(out)]) == 1
