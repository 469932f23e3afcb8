from __future__ import annotations

import math

import numpy as np
import pytest

from qoco.metrics import (
    LatencyAccumulator,
    MetricsReport,
    cache_full_windows,
    emit_report,
    export_timeseries,
    jitter,
    load_reports,
    percentile,
    percentile_from_counts,
)
from qoco.simenv import CompletedBatch, SystemSample


# -- jitter ---------------------------------------------------------------------


def test_jitter_constant_series_zero():
    assert jitter([5.0] * 100) == 0.0


def test_jitter_two_point_series():
    # mean 150, population std 50.
    assert jitter([100.0, 200.0]) == pytest.approx(1.0 / 3.0)


def test_jitter_scale_invariant():
    series = [3.0, 7.0, 5.0, 9.0]
    assert jitter([c * x for x in series for c in (1,)]) == pytest.approx(jitter(series))
    assert jitter([17.5 * x for x in series]) == pytest.approx(jitter(series))


def test_jitter_zero_mean_rejected():
    with pytest.raises(ValueError):
        jitter([1.0, -1.0])
    with pytest.raises(ValueError):
        jitter([])


def _jitter_oracle(series):
    arr = np.asarray(series)
    mean = arr.mean()
    return math.sqrt(((arr - mean) ** 2).sum() / len(arr)) / mean


def test_jitter_matches_definition_oracle():
    rng = np.random.default_rng(8)
    for _ in range(100):
        series = rng.uniform(0.5, 10.0, size=int(rng.integers(1, 400)))
        assert jitter(series) == pytest.approx(_jitter_oracle(series), rel=1e-12)


# -- percentile ------------------------------------------------------------------


def test_percentile_nearest_rank_999():
    values = list(range(1, 1001))
    assert percentile(values, 99.9) == 999


def test_percentile_single_element():
    for q in (0.1, 50.0, 99.9, 100.0):
        assert percentile([7.5], q) == 7.5


def test_percentile_q100_is_max():
    assert percentile([5, 1, 3], 100.0) == 5


def test_percentile_empty_rejected():
    with pytest.raises(ValueError):
        percentile([], 50.0)
    with pytest.raises(ValueError):
        percentile([1.0], 0.0)
    with pytest.raises(ValueError):
        percentile([1.0], 100.1)


def _percentile_oracle(values, q):
    data = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(data) - 1e-9))
    return data[rank - 1]


def test_percentile_matches_sort_oracle():
    rng = np.random.default_rng(9)
    for _ in range(200):
        n = int(rng.integers(1, 500))
        values = rng.normal(size=n).tolist()
        q = float(rng.uniform(0.01, 100.0))
        assert percentile(values, q) == _percentile_oracle(values, q)


def test_percentile_from_counts_matches_list():
    rng = np.random.default_rng(10)
    values = rng.integers(0, 20, size=1000).astype(float).tolist()
    acc = LatencyAccumulator()
    for v in values:
        acc.add(v)
    for q in (1.0, 25.0, 50.0, 99.0, 99.9, 100.0):
        assert acc.percentile(q) == percentile(values, q)


# -- cache-full windows -------------------------------------------------------------


def test_cache_full_all_below_threshold():
    w = [50.0] * 300
    windows = cache_full_windows(w, threshold=95.0, window=150.0, tick=1.0)
    assert windows == [(0, 0.0), (1, 0.0)]


def test_cache_full_ten_windows_for_1500s():
    w = [0.0] * 1500
    windows = cache_full_windows(w, threshold=95.0, window=150.0, tick=1.0)
    assert len(windows) == 10


def test_cache_full_saturated_window():
    w = [99.0] * 150 + [0.0] * 150
    windows = cache_full_windows(w, threshold=95.0)
    assert windows[0] == (0, 150.0)
    assert windows[1] == (1, 0.0)


def test_cache_full_window_totals_invariant():
    rng = np.random.default_rng(11)
    w = rng.uniform(0, 100, size=1234)
    windows = cache_full_windows(w, threshold=80.0, window=100.0, tick=1.0)
    assert sum(sec for _, sec in windows) == pytest.approx(float((w >= 80.0).sum()))


def test_cache_full_window_validation():
    with pytest.raises(ValueError):
        cache_full_windows([1.0], threshold=50.0, window=0.0)


# -- latency accumulator ---------------------------------------------------------------


def test_accumulator_mean_and_batches():
    acc = LatencyAccumulator()
    s = SystemSample(0, 0.0, 0.0, 0.0, 0)
    s.completed_batches.append(CompletedBatch(0, 3, 1.0))
    s.completed_batches.append(CompletedBatch(3, 1, 5.0))
    acc.add_sample(s)
    assert acc.total == 4
    assert acc.mean == pytest.approx(2.0)


def test_accumulator_empty_rejects():
    with pytest.raises(ValueError):
        LatencyAccumulator().mean
    with pytest.raises(ValueError):
        LatencyAccumulator().percentile(99.9)


# -- report files ------------------------------------------------------------------------


def sample_report(**meta):
    return MetricsReport(
        mean_throughput=1048576.123456789,
        jitter=0.0351234567890123,
        mean_latency=0.5120000000001,
        p999_latency=2.25,
        cache_full_seconds_per_window=[(0, 0.0), (1, 13.0)],
        window=150.0,
        meta={"workload": "S-3", "seed": "1", **meta},
    )


def test_report_round_trip_exact(tmp_path):
    rep = sample_report(method="lqoco")
    path = tmp_path / "report.txt"
    emit_report(rep, path)
    loaded = load_reports(path)["lqoco"]
    for field in ("mean_throughput", "jitter", "mean_latency", "p999_latency", "window"):
        assert abs(getattr(loaded, field) - getattr(rep, field)) <= 1e-12
    assert loaded.cache_full_seconds_per_window == rep.cache_full_seconds_per_window
    assert loaded.meta["workload"] == "S-3"


def test_report_serializes_values(tmp_path):
    rep = sample_report(method="m")
    rep.jitter = 0.035
    path = tmp_path / "report.txt"
    emit_report(rep, path)
    assert "jitter=0.035\n" in path.read_text()


def test_report_two_sections(tmp_path):
    path = tmp_path / "report.txt"
    emit_report({"none": sample_report(method="none"), "lqoco": sample_report(method="lqoco")}, path)
    loaded = load_reports(path)
    assert set(loaded) == {"none", "lqoco"}


def test_report_bad_header(tmp_path):
    path = tmp_path / "report.txt"
    path.write_text("#something else\n")
    with pytest.raises(ValueError, match="header"):
        load_reports(path)


# -- timeseries export ----------------------------------------------------------------


def test_timeseries_export(tmp_path):
    samples = []
    for t in range(3):
        s = SystemSample(t, 10.0 * t, 5.0, 1.0 * t, 0)
        s.completed_batches.append(CompletedBatch(t, 2, 0.5 * (t + 1)))
        samples.append(s)
    path = tmp_path / "ts.csv"
    export_timeseries(samples, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "#qoco-timeseries v1"
    assert lines[1] == "t,I,O,W,p999_running"
    assert len(lines) == 5
    # Running p99.9 over {0.5 x2, 1.0 x2, 1.5 x2} at the last tick is 1.5.
    assert lines[4].split(",")[4] == "1.5"
