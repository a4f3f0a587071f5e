"""Run metrics, latency histograms and protocol comparison."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

DROP_CAUSES = (
    "ttl",
    "no_route",
    "isl_buffer_overflow",
    "downlink_buffer_overflow",
    "uplink_capacity",
    "unserved",
    "inter_plane_shutdown",
)

DEFAULT_BIN_WIDTH = 0.002  # seconds


def fmt(x) -> str:
    """Nine significant digits for floats, plain text for everything else."""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


@dataclass
class MetricsReport:
    protocol: str
    seed: int
    config_hash: str
    duration: float
    sessions: int
    generated: int
    delivered: int
    in_flight: int
    drops: dict[str, int]
    session_latency: dict[int, float]  # mean end-to-end latency per session with deliveries
    session_hops: dict[int, float]
    session_first_hops: dict[int, int]
    hop_counts: dict[int, int]  # ISL hops -> delivered packets
    packet_latency_sum: float
    signaling_packets: float
    wall_time: float = field(default=0.0, compare=False)

    @property
    def dropped(self) -> int:
        return sum(self.drops.values())

    @property
    def dropping_rate(self) -> float:
        return self.dropped / self.generated if self.generated else 0.0

    @property
    def mean_session_latency(self) -> float:
        v = list(self.session_latency.values())
        return float(np.mean(v)) if v else math.nan

    @property
    def mean_packet_latency(self) -> float:
        return self.packet_latency_sum / self.delivered if self.delivered else math.nan

    def conserved(self) -> bool:
        return self.generated == self.delivered + self.dropped + self.in_flight

    def histogram(self, bin_width: float = DEFAULT_BIN_WIDTH, upper: float | None = None) -> "LatencyHistogram":
        return latency_histogram(list(self.session_latency.values()), bin_width, upper)

    def summary_rows(self) -> list[tuple[str, object]]:
        return [
            ("protocol", self.protocol),
            ("seed", self.seed),
            ("config_hash", self.config_hash),
            ("duration_s", float(self.duration)),
            ("sessions", self.sessions),
            ("sessions_with_deliveries", len(self.session_latency)),
            ("generated", self.generated),
            ("delivered", self.delivered),
            ("dropped", self.dropped),
            ("in_flight", self.in_flight),
            ("dropping_rate", float(self.dropping_rate)),
            ("mean_session_latency_s", float(self.mean_session_latency)),
            ("mean_packet_latency_s", float(self.mean_packet_latency)),
            ("signaling_packets", float(self.signaling_packets)),
            ("wall_time_s", float(self.wall_time)),
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_time")
        return d

    def write_csvs(self, outdir: str | Path, bin_width: float = DEFAULT_BIN_WIDTH) -> list[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = []
        p = outdir / "metrics.csv"
        write_csv(p, ("metric", "value"), self.summary_rows())
        paths.append(p)
        hist = self.histogram(bin_width)
        p = outdir / "latency_hist.csv"
        write_csv(p, ("bin_lo_s", "bin_hi_s", "sessions"),
               [(float(lo), float(hi), int(c)) for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts)])
        paths.append(p)
        p = outdir / "drops_by_cause.csv"
        write_csv(p, ("cause", "packets"), [(c, self.drops.get(c, 0)) for c in DROP_CAUSES])
        paths.append(p)
        p = outdir / "signaling.csv"
        per_update = self.signaling_packets / max(1, int(self.duration) + 1) if self.protocol == "idlb" else 0.0
        write_csv(p, ("protocol", "signaling_packets", "per_update"),
               [(self.protocol, float(self.signaling_packets), float(per_update))])
        paths.append(p)
        p = outdir / "session_latency.csv"
        write_csv(p, ("session", "mean_latency_s", "mean_hops"),
               [(s, float(v), float(self.session_hops[s])) for s, v in self.session_latency.items()])
        paths.append(p)
        return paths


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


@dataclass(frozen=True)
class LatencyHistogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0]) if len(self.edges) > 1 else 0.0

    @property
    def mass(self) -> int:
        return int(self.counts.sum())

    def normalized(self) -> np.ndarray:
        total = self.counts.sum()
        return self.counts / total if total else self.counts.astype(float)


def latency_histogram(values, bin_width: float = DEFAULT_BIN_WIDTH, upper: float | None = None) -> LatencyHistogram:
    """Histogram anchored at 0 with fixed bin width; every value lands in a bin."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    values = np.asarray(values, dtype=float)
    top = upper if upper is not None else (values.max() if values.size else bin_width)
    nbins = max(1, int(math.floor(top / bin_width)) + 1)
    edges = np.arange(nbins + 1) * bin_width
    idx = np.clip(np.floor(values / bin_width).astype(np.int64), 0, nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    return LatencyHistogram(edges, counts)


def histogram_intersection(a: LatencyHistogram, b: LatencyHistogram) -> float:
    """Sum of bin-wise minima of the two normalized histograms."""
    if not math.isclose(a.bin_width, b.bin_width, rel_tol=1e-12):
        raise ValueError("histograms use different binning")
    n = max(len(a.counts), len(b.counts))
    pa = np.zeros(n)
    pb = np.zeros(n)
    pa[: len(a.counts)] = a.normalized()
    pb[: len(b.counts)] = b.normalized()
    return float(np.minimum(pa, pb).sum())


@dataclass(frozen=True)
class Comparison:
    intersection: float
    drop_rate_a: float
    drop_rate_b: float
    mean_latency_a: float
    mean_latency_b: float

    @property
    def drop_ratio(self) -> float:
        return self.drop_rate_a / self.drop_rate_b if self.drop_rate_b else math.inf if self.drop_rate_a else 1.0

    @property
    def latency_delta(self) -> float:
        return self.mean_latency_a - self.mean_latency_b

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("histogram_intersection", self.intersection),
            ("drop_rate_a", self.drop_rate_a),
            ("drop_rate_b", self.drop_rate_b),
            ("drop_rate_ratio", self.drop_ratio),
            ("mean_latency_a_s", self.mean_latency_a),
            ("mean_latency_b_s", self.mean_latency_b),
            ("mean_latency_delta_s", self.latency_delta),
        ]


def compare(a: MetricsReport, b: MetricsReport, bin_width: float = DEFAULT_BIN_WIDTH) -> Comparison:
    upper = max([*a.session_latency.values(), *b.session_latency.values(), bin_width])
    inter = histogram_intersection(a.histogram(bin_width, upper), b.histogram(bin_width, upper))
    return Comparison(inter, a.dropping_rate, b.dropping_rate, a.mean_session_latency, b.mean_session_latency)


def write_comparison(path: str | Path, cmp: Comparison) -> None:
    write_csv(Path(path), ("metric", "value"), [(k, float(v)) for k, v in cmp.rows()])
