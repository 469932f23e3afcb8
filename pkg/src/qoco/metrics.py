"""Evaluation metrics: throughput, jitter, latency percentiles, full-cache time.

Jitter is the population standard deviation of the per-tick admitted
bandwidth divided by its mean.  Percentiles use the nearest-rank method
(value at 1-based index ceil(q/100 * n) of the ascending sort), which is
unambiguous and exactly checkable against a brute-force oracle.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

REPORT_HEADER = "#qoco-report v1"
TIMESERIES_HEADER = "#qoco-timeseries v1"


def jitter(series) -> float:
    """Population std over mean of a throughput series."""
    arr = np.asarray(series, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("jitter of an empty series")
    mean = arr.mean()
    if mean == 0:
        raise ValueError("jitter undefined for zero-mean series")
    return float(arr.std() / mean)


def _nearest_rank(n: int, q: float) -> int:
    if not 0 < q <= 100:
        raise ValueError("q must be in (0, 100]")
    # The 1e-9 backoff guards float roundoff at exact-integer ranks
    # (e.g. 99.9/100 * 1000 landing at 999.0000000000001).
    return max(1, math.ceil(q * n / 100.0 - 1e-9))


def percentile(values, q: float) -> float:
    """Nearest-rank percentile of a latency list."""
    data = sorted(values)
    if not data:
        raise ValueError("percentile of an empty list")
    return data[_nearest_rank(len(data), q) - 1]


def percentile_from_counts(counts: Counter, q: float) -> float:
    """Nearest-rank percentile over a value -> multiplicity map."""
    total = sum(counts.values())
    if total == 0:
        raise ValueError("percentile of an empty population")
    rank = _nearest_rank(total, q)
    seen = 0
    for value in sorted(counts):
        seen += counts[value]
        if seen >= rank:
            return value
    raise AssertionError("rank exceeded population")  # unreachable


def cache_full_windows(
    watermarks,
    threshold: float,
    window: float = 150.0,
    tick: float = 1.0,
) -> list[tuple[int, float]]:
    """Seconds at or above the overload threshold, per non-overlapping window."""
    if window <= 0:
        raise ValueError("window must be positive")
    per_window = max(1, int(round(window / tick)))
    out = []
    arr = np.asarray(watermarks, dtype=np.float64)
    for w_idx, start in enumerate(range(0, len(arr), per_window)):
        chunk = arr[start : start + per_window]
        out.append((w_idx, float((chunk >= threshold).sum() * tick)))
    return out


@dataclass
class MetricsReport:
    mean_throughput: float                      # bytes/second
    jitter: float
    mean_latency: float                         # seconds
    p999_latency: float                         # seconds
    cache_full_seconds_per_window: list[tuple[int, float]]
    window: float = 150.0
    meta: dict = field(default_factory=dict)    # method / workload / seed labels

    @property
    def cache_full_total(self) -> float:
        return sum(sec for _, sec in self.cache_full_seconds_per_window)


class LatencyAccumulator:
    """Latency population as value multiplicities (latencies are quantized
    to queue-delay ticks plus a per-path service constant, so the number
    of distinct values stays small)."""

    def __init__(self):
        self.counts: Counter = Counter()
        self.total = 0
        self._sum = 0.0

    def add(self, latency: float, count: int = 1) -> None:
        self.counts[latency] += count
        self.total += count
        self._sum += latency * count

    def add_sample(self, sample) -> None:
        for b in sample.completed_batches:
            self.add(b.latency, b.count)

    @property
    def mean(self) -> float:
        if self.total == 0:
            raise ValueError("no completed requests")
        return self._sum / self.total

    def percentile(self, q: float) -> float:
        return percentile_from_counts(self.counts, q)


def build_report(
    samples,
    latencies: LatencyAccumulator,
    overload_threshold: float,
    window: float = 150.0,
    tick: float = 1.0,
    meta: dict | None = None,
) -> MetricsReport:
    throughput_series = [s.admitted_bw for s in samples]
    watermark_series = [s.watermark for s in samples]
    return MetricsReport(
        mean_throughput=float(np.mean(throughput_series)),
        jitter=jitter(throughput_series),
        mean_latency=latencies.mean,
        p999_latency=latencies.percentile(99.9),
        cache_full_seconds_per_window=cache_full_windows(
            watermark_series, overload_threshold, window, tick
        ),
        window=window,
        meta=dict(meta or {}),
    )


# -- report files ------------------------------------------------------------

_SCALAR_FIELDS = ("mean_throughput", "jitter", "mean_latency", "p999_latency", "window")


def emit_report(reports, path) -> None:
    """Write one or more named report sections to a key/value text file.

    ``reports`` is a mapping name -> MetricsReport, or a single report
    (its section name then comes from ``meta['method']``).
    """
    if isinstance(reports, MetricsReport):
        name = reports.meta.get("method", "report")
        reports = {name: reports}
    with open(path, "w", encoding="utf-8") as f:
        f.write(REPORT_HEADER + "\n")
        for name, rep in reports.items():
            f.write(f"\n[{name}]\n")
            for key in sorted(rep.meta):
                f.write(f"{key}={rep.meta[key]}\n")
            for fld in _SCALAR_FIELDS:
                f.write(f"{fld}={getattr(rep, fld)!r}\n")
            windows = ";".join(f"{i}:{sec!r}" for i, sec in rep.cache_full_seconds_per_window)
            f.write(f"cache_full_seconds_per_window={windows}\n")


def load_reports(path) -> dict[str, MetricsReport]:
    sections: dict[str, dict] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if first.strip() != REPORT_HEADER:
            raise ValueError(f"{path}: expected header {REPORT_HEADER!r}")
        current = None
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = {}
                order.append(current)
                continue
            if current is None or "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected [section] or key=value")
            key, value = line.split("=", 1)
            sections[current][key] = value

    out = {}
    for name in order:
        kv = sections[name]
        windows = []
        raw = kv.pop("cache_full_seconds_per_window", "")
        if raw:
            for pair in raw.split(";"):
                i, sec = pair.split(":")
                windows.append((int(i), float(sec)))
        scalars = {fld: float(kv.pop(fld)) for fld in _SCALAR_FIELDS if fld in kv}
        out[name] = MetricsReport(
            mean_throughput=scalars.get("mean_throughput", math.nan),
            jitter=scalars.get("jitter", math.nan),
            mean_latency=scalars.get("mean_latency", math.nan),
            p999_latency=scalars.get("p999_latency", math.nan),
            cache_full_seconds_per_window=windows,
            window=scalars.get("window", 150.0),
            meta=kv,
        )
    return out


def export_timeseries(samples, path, latencies_by_tick=None) -> None:
    """Per-tick CSV for plotting: ``t,I,O,W,p999_running``.

    ``latencies_by_tick`` maps tick -> iterable of (latency, count) pairs
    completed that tick; the running percentile covers everything
    completed so far (``nan`` until the first completion).
    """
    running: Counter = Counter()
    total = 0
    with open(path, "w", encoding="utf-8") as f:
        f.write(TIMESERIES_HEADER + "\n")
        f.write("t,I,O,W,p999_running\n")
        for s in samples:
            if latencies_by_tick is not None:
                for latency, count in latencies_by_tick.get(s.t, ()):
                    running[latency] += count
                    total += count
            else:
                for b in s.completed_batches:
                    running[b.latency] += b.count
                    total += b.count
            p999 = percentile_from_counts(running, 99.9) if total else math.nan
            f.write(f"{s.t},{s.admitted_bw!r},{s.flushed_bw!r},{s.watermark!r},{p999!r}\n")
