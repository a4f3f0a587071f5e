"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also gathered and repeated in the pytest terminal summary,
so they appear in a plain ``pytest -v`` run without ``-s``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from conftest import bottleneck_scenario, record_acceptance, small_scenario
from idlbsim.cli import area_count, isl_delay_envelope, run_experiment
from idlbsim.cluster import build_cluster_map, max_intra_cluster_delay, signaling_cost, signaling_model
from idlbsim.config import bench_scale, full_scale
from idlbsim.engine import generate_sessions, run, run_with_traces, time_average_concurrency
from idlbsim.geoaddr import AREA_BITS, NUM_AREAS, seam_violations
from idlbsim.ground import generate_terminals, load_density_grid, load_gateways
from idlbsim.metrics import compare
from idlbsim.orbit import ConstellationConfig, visibility_window
from idlbsim.topology import EAST, WEST, build_topology, link_table, polar_mask

BENCH_SEEDS = (1, 2, 3)
ISL_CAUSE = "isl_buffer_overflow"


def check(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    record_acceptance(line)
    assert ok, line


def test_c01_area_enumeration():
    n = area_count()
    check(1, n == NUM_AREAS == 6962 and NUM_AREAS <= 1 << AREA_BITS and AREA_BITS == 13,
          f"{n} distinct area ids, {AREA_BITS} bits")


def test_c02_cluster_partition(cmap):
    sizes = {len(m) for m in cmap.members}
    model = signaling_model(cmap)
    ok = cmap.num_clusters == 30 and sizes == {48} and model.n_int == 28 and model.n_int_seam == 20
    check(2, ok, f"{cmap.num_clusters} clusters of {sizes}, interface nodes {model.n_int}/{model.n_int_seam}")


def test_c03_controller_hop_distance(cmap):
    h_c = signaling_model(cmap).h_c
    check(3, abs(h_c - 3.57) <= 0.05, f"H_c = {h_c:.4f} (target 3.57 +- 0.05)")


def test_c04_signaling_cost(cmap):
    total = signaling_cost(signaling_model(cmap)).total
    check(4, abs(total - 14304) <= 0.05 * 14304, f"{total:.0f} packets per update (target 14304 +- 5%)")


def test_c05_intra_cluster_delay(cmap):
    d = max_intra_cluster_delay(cmap, step=10.0)
    ok = abs(d - 39.7e-3) <= 1.5e-3 and d < 50e-3
    check(5, ok, f"max intra-cluster delay {d * 1e3:.2f} ms (target 39.7 +- 1.5 ms, < 50 ms)")


def test_c06_visibility_window(constellation):
    w = visibility_window(constellation, (0.0, 0.0), 30.0)
    check(6, abs(w - 236.0) <= 0.05 * 236.0, f"max window {w:.1f} s at 30 deg (target 236 +- 5%)")


def test_c07_isl_delays():
    env = isl_delay_envelope(full_scale())
    intra = env["isl_intra_plane_max_s"]
    worst = max(env.values())
    ok = abs(intra - 3.04e-3) <= 0.01e-3 and abs(env["isl_intra_plane_min_s"] - intra) < 1e-9 and worst <= 5.8e-3
    check(7, ok, f"intra-plane {intra * 1e3:.3f} ms, inter-plane "
                 f"{env['isl_inter_plane_min_s'] * 1e3:.2f}-{env['isl_inter_plane_max_s'] * 1e3:.2f} ms, "
                 f"max {worst * 1e3:.2f} ms (bound 5.8 ms)")


def test_c08_littles_law():
    uts = generate_terminals(load_density_grid(), 200, seed=1)
    gws = load_gateways(first_index=len(uts))
    sessions = generate_sessions(uts, gws, 20000, 7200.0, mean_duration=30.0, seed=1)
    n = time_average_concurrency(sessions, 7200.0)
    target = 20000 * 30 / 7200
    check(8, abs(n - target) <= 0.02 * target, f"time-average concurrency {n:.2f} (target {target:.1f} +- 2%)")


def _bench_run(args):
    protocol, seed = args
    return run_experiment(bench_scale().with_seed(seed), protocol)


@pytest.fixture(scope="module")
def bench_reports():
    tasks = [(p, s) for s in BENCH_SEEDS for p in ("sspf", "idlb")]
    with ProcessPoolExecutor(max_workers=3) as pool:
        reports = list(pool.map(_bench_run, tasks))
    return {t: r for t, r in zip(tasks, reports)}


def test_c09_dropping_rate(bench_reports):
    parts, ok = [], True
    for s in BENCH_SEEDS:
        sspf, idlb = bench_reports["sspf", s], bench_reports["idlb", s]
        ratio = compare(idlb, sspf).drop_ratio
        slowest = max(sspf.wall_time, idlb.wall_time)
        ok &= sspf.dropping_rate > 0 and ratio <= 0.2 and slowest < 300.0
        parts.append(f"seed {s}: {idlb.dropping_rate:.5f}/{sspf.dropping_rate:.5f} = {ratio:.3f} "
                     f"({slowest:.0f} s)")
    check(9, ok, "IDLB/SSPF drop rate " + "; ".join(parts) + " (target <= 0.2, < 300 s)")


def test_c10_latency_parity(bench_reports):
    parts, ok = [], True
    for s in BENCH_SEEDS:
        cmp = compare(bench_reports["idlb", s], bench_reports["sspf", s])
        ratio = cmp.mean_latency_a / cmp.mean_latency_b
        ok &= cmp.intersection >= 0.5 and ratio <= 1.3
        parts.append(f"seed {s}: intersection {cmp.intersection:.2f}, latency ratio {ratio:.3f}")
    check(10, ok, "; ".join(parts) + " (targets >= 0.5, <= 1.3)")


def test_c11_zero_load_hop_equality():
    reports = {p: run(small_scenario(p, n_sessions=200, duration=20.0, rate=1e6)) for p in ("idlb", "sspf")}
    a, b = reports["idlb"].session_first_hops, reports["sspf"].session_first_hops
    common = sorted(set(a) & set(b))
    same = sum(a[s] == b[s] for s in common)
    frac = same / len(common) if common else 0.0
    ok = len(common) >= 100 and frac >= 0.95
    check(11, ok, f"{same}/{len(common)} sessions with identical hop counts ({frac:.1%}, target >= 95%)")


def test_c12_invariants(cmap):
    failures = []
    for protocol in ("idlb", "sspf"):
        sc = small_scenario(protocol, trace=True)
        report, traces = run_with_traces(sc)
        if not report.conserved():
            failures.append(f"{protocol} conservation")
        if run(replace(sc, sim=replace(sc.sim, trace=False))) != report:
            failures.append(f"{protocol} determinism")
        if report.drops["inter_plane_shutdown"]:
            failures.append(f"{protocol} inter-plane shutdown drops")
        for tr in traces:
            if len(set(tr.nodes)) != len(tr.nodes):
                failures.append(f"{protocol} loop in packet {tr.id}")
                break
        for tr in traces:
            if tr.outcome == "delivered" and not math.isclose(tr.end - tr.created, tr.component_sum(), abs_tol=1e-9):
                failures.append(f"{protocol} latency identity for packet {tr.id}")
                break

    cfg = ConstellationConfig()
    table = link_table(cfg)
    plane = np.arange(cfg.num_sats) // cfg.sats_per_plane
    seam = (plane == 0) | (plane == cfg.num_planes - 1)
    for t in np.linspace(0.0, cfg.period, 10, endpoint=False):
        topo = build_topology(cfg, float(t))
        polar = polar_mask(cfg, float(t))
        for n in range(cfg.num_sats):
            expected = 2 if polar[n] else 2 + sum(
                1 for d in (EAST, WEST) if table.neighbor[n, d] >= 0 and not polar[table.neighbor[n, d]])
            if topo.degree(n) != expected or expected > (3 if seam[n] else 4):
                failures.append(f"degree of {n} at t={t:.0f}")
                break

    times = np.linspace(0.0, cfg.period, 10, endpoint=False)
    violations = sum(seam_violations(cmap, float(t)) for t in times)
    if violations:
        failures.append(f"{violations} seam violations")
    check(12, not failures, "all invariants hold (conservation, determinism, loop freedom, no shutdown drops, "
                            "latency identity, degree 4/3/2, seam avoidance over 30 x 6962 x 10)"
          if not failures else "; ".join(failures))


def test_c13_forced_congestion():
    results = {}
    for protocol in ("sspf", "idlb"):
        sc = bottleneck_scenario(protocol)
        _, traces = run_with_traces(replace(sc, sim=replace(sc.sim, trace=True)))
        isl = [tr.end for tr in traces if tr.outcome == ISL_CAUSE]
        # the controller needs one update period to see the load and one more to install routes
        period = sc.routing.update_period
        results[protocol] = (len(isl), sum(t > 2 * period for t in isl), period)
    sspf_total, sspf_late, period = results["sspf"]
    idlb_total, idlb_late, _ = results["idlb"]
    ok = sspf_late > 0 and idlb_late == 0
    check(13, ok, f"ISL drops SSPF {sspf_total} ({sspf_late} after {2 * period:.0f} s), "
                  f"IDLB {idlb_total} ({idlb_late} after {2 * period:.0f} s)")
