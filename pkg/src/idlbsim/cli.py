"""Command line front end: runs, comparisons, sweeps and analytic reports.

Every subcommand writes plain CSV files (floats with 9 significant digits).
Exit codes: 0 success, 1 configuration or input error, 2 runtime anomaly.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import build_cluster_map, max_intra_cluster_delay, signaling_cost, signaling_model
from .config import PRESETS, ScenarioConfig, build_scenario, full_scale, load_config
from .engine import PROTOCOLS, Simulator
from .errors import ConfigError
from .geoaddr import AREA_BITS, NUM_AREAS, areas_of, seam_violations
from .metrics import (
    DEFAULT_BIN_WIDTH,
    Comparison,
    MetricsReport,
    histogram_intersection,
    latency_histogram,
    write_comparison,
    write_csv,
)
from .orbit import visibility_window
from .topology import build_topology

log = logging.getLogger("idlbsim")

EXIT_OK, EXIT_CONFIG, EXIT_ANOMALY = 0, 1, 2


class RuntimeAnomaly(RuntimeError):
    """A run finished but its outputs violate an internal invariant."""


# --- operations ---------------------------------------------------------------------


def run_experiment(
    cfg: ScenarioConfig,
    protocol: str | None = None,
    outdir: str | Path | None = None,
    trace_path: str | Path | None = None,
    bin_width: float = DEFAULT_BIN_WIDTH,
) -> MetricsReport:
    """Run one simulation and, if ``outdir`` is given, write its CSV files there."""
    protocol = protocol or cfg.protocol
    if protocol not in PROTOCOLS:
        raise ConfigError(f"[run] protocol must be one of {PROTOCOLS}, got {protocol!r}")
    scenario = build_scenario(cfg, protocol)
    if trace_path is not None:
        scenario = replace(scenario, sim=replace(scenario.sim, trace=True))
    sim = Simulator(scenario)
    report = sim.run()
    if not report.conserved():
        raise RuntimeAnomaly(
            f"packet conservation violated: generated {report.generated} != delivered {report.delivered}"
            f" + dropped {report.dropped} + in flight {report.in_flight}"
        )
    if outdir is not None:
        report.write_csvs(outdir, bin_width)
    if trace_path is not None:
        write_traces(trace_path, sorted(sim.traces, key=lambda p: p.id))
    return report


def write_traces(path: str | Path, traces) -> None:
    rows = []
    for tr in traces:
        for i, (node, t, t_r, t_s, w, d) in enumerate(tr.hops):
            rows.append((tr.id, tr.session, i, node, float(t), float(t_r), float(t_s), float(w), float(d), tr.outcome))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    header = ("packet", "session", "hop", "node", "time_s", "t_r_s", "t_s_s", "wait_s", "prop_s", "outcome")
    write_csv(Path(path), header, rows)


def load_run(outdir: str | Path) -> tuple[dict[str, str], list[float], float]:
    """Metrics, per-session latencies and histogram bin width of a finished run directory."""
    outdir = Path(outdir)
    try:
        with open(outdir / "metrics.csv", newline="") as fh:
            metrics = {r["metric"]: r["value"] for r in csv.DictReader(fh)}
        with open(outdir / "session_latency.csv", newline="") as fh:
            lat = [float(r["mean_latency_s"]) for r in csv.DictReader(fh)]
        with open(outdir / "latency_hist.csv", newline="") as fh:
            first = next(csv.DictReader(fh), None)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"{outdir}: not a run directory ({exc})") from None
    width = float(first["bin_hi_s"]) - float(first["bin_lo_s"]) if first else DEFAULT_BIN_WIDTH
    return metrics, lat, width


def compare_runs(dir_a: str | Path, dir_b: str | Path) -> Comparison:
    ma, la, wa = load_run(dir_a)
    mb, lb, wb = load_run(dir_b)
    if not math.isclose(wa, wb, rel_tol=1e-6):
        raise ConfigError(f"histogram binning differs: {wa:.9g} s vs {wb:.9g} s")
    upper = max([*la, *lb, wa])
    inter = histogram_intersection(latency_histogram(la, wa, upper), latency_histogram(lb, wa, upper))
    return Comparison(inter, float(ma["dropping_rate"]), float(mb["dropping_rate"]), _mean(la), _mean(lb))


def _mean(values) -> float:
    return float(np.mean(values)) if values else math.nan


def isl_delay_envelope(cfg: ScenarioConfig, samples: int = 60) -> dict[str, float]:
    """Min and max one-way delay of active intra- and inter-plane links over one orbit."""
    c = cfg.constellation
    lo = {"intra": math.inf, "inter": math.inf}
    hi = {"intra": 0.0, "inter": 0.0}
    for t in np.linspace(0.0, c.period, samples, endpoint=False):
        topo = build_topology(c, float(t))
        d = topo.link_delays
        for kind, mask in (("intra", ~topo.table.inter), ("inter", topo.table.inter)):
            m = mask & topo.active
            if m.any():
                lo[kind] = min(lo[kind], float(d[m].min()))
                hi[kind] = max(hi[kind], float(d[m].max()))
    return {
        "isl_intra_plane_min_s": lo["intra"],
        "isl_intra_plane_max_s": hi["intra"],
        "isl_inter_plane_min_s": lo["inter"],
        "isl_inter_plane_max_s": hi["inter"],
    }


def signaling_rows(cfg: ScenarioConfig, message_size: float = 1.0, r_update: float | None = None):
    cmap = build_cluster_map(cfg.constellation, cfg.clusters.planes_per_cluster, cfg.clusters.slots_per_cluster)
    r_update = 1.0 / cfg.routing.update_period if r_update is None else r_update
    model = signaling_model(cmap, message_size, r_update)
    cost = signaling_cost(model)
    return cmap, [
        ("clusters", cmap.num_clusters),
        ("cluster_size", model.n_c),
        ("h_c", model.h_c),
        ("n_int", model.n_int),
        ("h_int", model.h_int),
        ("n_int_seam", model.n_int_seam),
        ("h_int_seam", model.h_int_seam),
        ("seamless_clusters", model.n_seamless),
        ("seam_clusters", model.n_seam),
        ("cost_per_cluster_seamless", cost.per_cluster_seamless),
        ("cost_per_cluster_seam", cost.per_cluster_seam),
        ("total_signaling", cost.total),
    ]


def area_count() -> int:
    lat = np.arange(-90.0, 90.0001, 0.5)
    lon = np.arange(-180.0, 180.0, 0.5)
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    return int(np.unique(areas_of(la.ravel(), lo.ravel())).size)


def report_analytics(cfg: ScenarioConfig, delay_step: float = 10.0) -> list[tuple[str, object]]:
    """Derived constellation quantities, without any traffic simulation."""
    cmap, rows = signaling_rows(cfg)
    rows = [("area_count", area_count()), ("area_bits", AREA_BITS), *rows]
    rows.append(("max_intra_cluster_delay_s", max_intra_cluster_delay(cmap, step=delay_step)))
    rows.extend(isl_delay_envelope(cfg).items())
    rows.append(("max_visibility_window_s", visibility_window(cfg.constellation, (0.0, 0.0), 30.0)))
    tr = cfg.traffic
    rows.append(("expected_concurrency", tr.sessions * tr.mean_duration / cfg.simulation.duration
                 if cfg.simulation.duration else 0.0))
    return rows


def topo_rows(cfg: ScenarioConfig, t: float) -> list[tuple[str, object]]:
    topo = build_topology(cfg.constellation, t, cfg.routing.horizon)
    degrees = np.bincount([topo.degree(n) for n in topo.nodes], minlength=5)
    inter = topo.table.inter
    d = topo.link_delays[topo.active]
    return [
        ("time_s", float(t)),
        ("satellites", cfg.constellation.num_sats),
        ("links", topo.table.num_links),
        ("intra_plane_links", int((~inter).sum())),
        ("inter_plane_links", int(inter.sum())),
        ("active_links", int(topo.active.sum())),
        ("inter_plane_down", int((inter & ~topo.active).sum())),
        ("shutdown_pending", int(topo.pending_links().sum())),
        ("polar_satellites", int(topo.polar.sum())),
        *((f"degree_{k}", int(degrees[k])) for k in range(5)),
        ("min_active_delay_s", float(d.min()) if d.size else 0.0),
        ("max_active_delay_s", float(d.max()) if d.size else 0.0),
        ("connected", int(topo.is_connected())),
    ]


def areas_rows(cfg: ScenarioConfig, times) -> tuple[list[tuple[str, object]], bool]:
    cmap = build_cluster_map(cfg.constellation, cfg.clusters.planes_per_cluster, cfg.clusters.slots_per_cluster)
    count = area_count()
    violations = sum(seam_violations(cmap, float(t)) for t in times)
    rows = [
        ("area_count", count),
        ("expected_area_count", NUM_AREAS),
        ("area_bits", AREA_BITS),
        ("fits_in_bits", int(NUM_AREAS <= 1 << AREA_BITS)),
        ("sampled_times", len(times)),
        ("checked_pairs", len(times) * cmap.num_clusters * NUM_AREAS),
        ("seam_violations", violations),
    ]
    return rows, count == NUM_AREAS and violations == 0


def _sweep_job(args) -> tuple:
    cfg, protocol, sessions, seed = args
    cfg = replace(cfg.with_seed(seed), traffic=replace(cfg.traffic, sessions=sessions))
    r = run_experiment(cfg, protocol)
    return (protocol, sessions, seed, r.generated, r.delivered, r.dropped, float(r.dropping_rate),
            float(r.mean_session_latency), float(r.signaling_packets))


def sweep(cfg: ScenarioConfig, counts, protocols, seeds, jobs: int = 1) -> list[tuple]:
    """Runs for every (protocol, session count, seed); independent runs may go in parallel."""
    tasks = [(cfg, p, n, s) for n in counts for p in protocols for s in seeds]
    if jobs <= 1:
        return [_sweep_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sweep_job, tasks))


# --- argument handling ------------------------------------------------------------------


def _resolve_config(args) -> ScenarioConfig:
    base = PRESETS[args.preset]() if args.preset else full_scale()
    cfg = load_config(args.config, base) if args.config else base
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "sessions", None) is not None:
        if args.sessions < 0:
            raise ConfigError("--sessions must be non-negative")
        cfg = replace(cfg, traffic=replace(cfg.traffic, sessions=args.sessions))
    if getattr(args, "duration", None) is not None:
        if args.duration < 0:
            raise ConfigError("--duration must be non-negative")
        cfg = replace(cfg, simulation=replace(cfg.simulation, duration=args.duration))
    return cfg


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_config_args(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("-c", "--config", help="INI scenario file (defaults to the full-scale reference)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a preset before applying --config")
    if seed:
        p.add_argument("--seed", type=int, help="override ground and traffic seeds")
        p.add_argument("--sessions", type=int, help="override the session count")
        p.add_argument("--duration", type=float, help="override the simulated duration in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idlbsim", description="Packet-level LEO routing simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one simulation and write its CSV files")
    _add_config_args(p)
    p.add_argument("-p", "--protocol", choices=PROTOCOLS, help="override [run] protocol")
    p.add_argument("-o", "--out", default="out", help="output directory (default: out)")
    p.add_argument("--trace", help="also write a per-hop packet trace CSV to this path")
    p.add_argument("--bin-width", type=float, default=DEFAULT_BIN_WIDTH, help="latency histogram bin width, s")

    p = sub.add_parser("compare", help="compare two run directories")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("-o", "--out", default="comparison.csv")

    topo = sub.add_parser("topo", help="topology tools").add_subparsers(dest="action", required=True)
    p = topo.add_parser("report", help="link inventory and degree census at one instant")
    _add_config_args(p, seed=False)
    p.add_argument("-t", "--time", type=float, default=0.0)
    p.add_argument("-o", "--out", default="topology.csv")

    sig = sub.add_parser("signaling", help="signaling cost model").add_subparsers(dest="action", required=True)
    p = sig.add_parser("estimate", help="per-update signaling packets from the cluster cost model")
    _add_config_args(p, seed=False)
    p.add_argument("--message-size", type=float, default=1.0)
    p.add_argument("--rate", type=float, help="network updates per second (default: 1 / update_period)")
    p.add_argument("-o", "--out", default="signaling_estimate.csv")

    areas = sub.add_parser("areas", help="geographic area tools").add_subparsers(dest="action", required=True)
    p = areas.add_parser("check", help="area census and exhaustive seam-avoidance check")
    _add_config_args(p, seed=False)
    p.add_argument("--samples", type=int, default=10, help="sampled instants over one orbit")
    p.add_argument("-o", "--out", default="areas_check.csv")

    p = sub.add_parser("sweep", help="session-count sweep over protocols and seeds")
    _add_config_args(p, seed=False)
    p.add_argument("--counts", type=_int_list, required=True, help="comma-separated session counts")
    p.add_argument("--protocols", default="idlb,sspf")
    p.add_argument("--seeds", type=_int_list, default=[1])
    p.add_argument("-j", "--jobs", type=int, default=1)
    p.add_argument("--duration", type=float, help="override the simulated duration in seconds")
    p.add_argument("-o", "--out", default="sweep.csv")

    p = sub.add_parser("analytics", help="derived constellation quantities without simulation")
    _add_config_args(p, seed=False)
    p.add_argument("-o", "--out", default="analytics.csv")
    return parser


def _emit(path: str, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_csv(Path(path), ("metric", "value"), rows)
    for k, v in rows:
        print(f"{k},{v if isinstance(v, str) else format(v, '.9g') if isinstance(v, float) else v}")


def _dispatch(args) -> int:
    if args.command == "run":
        cfg = _resolve_config(args)
        report = run_experiment(cfg, args.protocol, args.out, args.trace, args.bin_width)
        for k, v in report.summary_rows():
            print(f"{k},{v:.9g}" if isinstance(v, float) else f"{k},{v}")
        return EXIT_OK
    if args.command == "compare":
        cmp = compare_runs(args.run_a, args.run_b)
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_comparison(args.out, cmp)
        for k, v in cmp.rows():
            print(f"{k},{v:.9g}")
        return EXIT_OK
    if args.command == "topo":
        cfg = _resolve_config(args)
        if args.time < 0:
            raise ConfigError("--time must be non-negative")
        _emit(args.out, topo_rows(cfg, args.time))
        return EXIT_OK
    if args.command == "signaling":
        cfg = _resolve_config(args)
        if args.message_size <= 0 or (args.rate is not None and args.rate <= 0):
            raise ConfigError("--message-size and --rate must be positive")
        _emit(args.out, signaling_rows(cfg, args.message_size, args.rate)[1])
        return EXIT_OK
    if args.command == "areas":
        cfg = _resolve_config(args)
        if args.samples < 1:
            raise ConfigError("--samples must be at least 1")
        times = np.linspace(0.0, cfg.constellation.period, args.samples, endpoint=False)
        rows, ok = areas_rows(cfg, times)
        _emit(args.out, rows)
        return EXIT_OK if ok else EXIT_ANOMALY
    if args.command == "sweep":
        cfg = _resolve_config(args)
        protocols = [p.strip() for p in args.protocols.split(",") if p.strip()]
        bad = [p for p in protocols if p not in PROTOCOLS]
        if bad or not protocols:
            raise ConfigError(f"--protocols must be drawn from {PROTOCOLS}")
        if any(n < 0 for n in args.counts):
            raise ConfigError("--counts must be non-negative")
        rows = sweep(cfg, args.counts, protocols, args.seeds, args.jobs)
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        header = ("protocol", "sessions", "seed", "generated", "delivered", "dropped", "dropping_rate",
                  "mean_session_latency_s", "signaling_packets")
        write_csv(Path(args.out), header, rows)
        print(f"wrote {len(rows)} rows to {args.out}")
        return EXIT_OK
    if args.command == "analytics":
        _emit(args.out, report_analytics(_resolve_config(args)))
        return EXIT_OK
    raise AssertionError(args.command)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeAnomaly as exc:
        print(f"runtime anomaly: {exc}", file=sys.stderr)
        return EXIT_ANOMALY


if __name__ == "__main__":
    sys.exit(main())
