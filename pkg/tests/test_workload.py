from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qoco.workload import (
    CHANGING_SEQUENCE_IDS,
    STANDARD_WORKLOADS,
    Trace,
    WorkloadSequence,
    WorkloadSpec,
    build_changing_sequence,
    build_standard_spec,
    generate_trace,
    load_trace,
    save_trace,
)

KB = 1024


def test_standard_spec_s3():
    spec = build_standard_spec("S-3", 1500.0, 1000.0)
    assert (spec.block_size, spec.io_size, spec.read_ratio) == (512, 4 * KB, 50.0)


def test_standard_spec_s14():
    spec = build_standard_spec("S-14", 1500.0, 1000.0)
    assert (spec.block_size, spec.io_size, spec.read_ratio) == (32 * KB, 256 * KB, 0.0)


def test_standard_spec_s1():
    spec = build_standard_spec("S-1", 100.0, 10.0)
    assert (spec.block_size, spec.io_size, spec.read_ratio) == (512, 4 * KB, 0.0)


def test_unknown_id_lists_valid_ids():
    with pytest.raises(ValueError, match="S-1.*S-19"):
        build_standard_spec("S-99", 100.0, 10.0)


def test_all_standard_io_sizes_are_block_multiples():
    for wid, (block, io, _) in STANDARD_WORKLOADS.items():
        assert io % block == 0, wid
        assert io >= block, wid


def test_changing_sequence_structure():
    seq = build_changing_sequence(100.0)
    assert len(seq.phases) == 9
    assert seq.duration == pytest.approx(900.0)
    assert seq.phases[0].id == "S-17"
    assert seq.phases[8].id == "S-19"
    assert [seq.phases[i].id for i in (2, 4, 6)] == ["S-18", "S-18", "S-18"]


def test_changing_sequence_neighbors_differ():
    seq = build_changing_sequence(50.0)
    for a, b in zip(seq.phases, seq.phases[1:]):
        assert (a.block_size, a.io_size, a.read_ratio) != (b.block_size, b.io_size, b.read_ratio)


def test_changing_sequence_zero_duration_rejected():
    with pytest.raises(ValueError):
        build_changing_sequence(0.0)


def test_sequence_requires_differing_phases():
    a = build_standard_spec("S-18", 10.0, 5.0)
    with pytest.raises(ValueError, match="S-18 -> S-18"):
        WorkloadSequence((a, a))


def test_spec_validation():
    with pytest.raises(ValueError):
        WorkloadSpec("x", 0, 4096, 50, 10, 5)
    with pytest.raises(ValueError):
        WorkloadSpec("x", 512, 1000, 50, 10, 5)  # not a block multiple
    with pytest.raises(ValueError):
        WorkloadSpec("x", 512, 4096, 150, 10, 5)
    with pytest.raises(ValueError):
        WorkloadSpec("x", 512, 4096, 50, 10, 5, arrival="uniform")


def test_constant_arrivals_exact():
    spec = WorkloadSpec("c", 512, 4096, 0, 2.0, 10.0, arrival="constant")
    trace = generate_trace(spec, seed=1)
    assert len(trace) == 20
    np.testing.assert_allclose(trace.times, np.arange(20) / 10.0)


def test_generation_deterministic(tmp_path):
    spec = build_standard_spec("S-6", 50.0, 200.0)
    t1 = generate_trace(spec, seed=42)
    t2 = generate_trace(spec, seed=42)
    assert t1 == t2
    p1, p2 = tmp_path / "a.trace", tmp_path / "b.trace"
    save_trace(t1, p1)
    save_trace(t2, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_different_seeds_differ():
    spec = build_standard_spec("S-6", 50.0, 200.0)
    assert generate_trace(spec, seed=1) != generate_trace(spec, seed=2)


def test_poisson_count_within_statistical_bound():
    # Poisson(rate * duration) = Poisson(100k); [95k, 105k] is a ~16 sigma band,
    # cross-checked by direct sampling of the same process.
    spec = WorkloadSpec("p", 512, 4096, 0, 100.0, 1000.0, arrival="poisson")
    trace = generate_trace(spec, seed=7)
    assert 95_000 <= len(trace) <= 105_000
    direct = np.random.default_rng(123).poisson(100.0 * 1000.0, size=200)
    assert direct.min() > 95_000 and direct.max() < 105_000


def test_read_fraction_near_ratio():
    spec = WorkloadSpec("r", 512, 4096, 30, 100.0, 1000.0, arrival="poisson")
    trace = generate_trace(spec, seed=11)
    assert len(trace) >= 10_000
    frac = 100.0 * trace.reads.mean()
    assert abs(frac - 30.0) <= 2.0


def test_arrival_times_monotone_across_phases():
    seq = build_changing_sequence(20.0, offered_rate=50.0)
    trace = generate_trace(seq, seed=3)
    assert np.all(np.diff(trace.times) >= 0)
    assert np.all(np.diff(trace.ids) == 1)
    assert trace.times[-1] < seq.duration


def test_sequence_phase_sizes():
    seq = build_changing_sequence(20.0, offered_rate=50.0)
    trace = generate_trace(seq, seed=3)
    # First phase is S-17 (8K I/O), second S-6 (32K I/O).
    first = trace.sizes[trace.times < 20.0]
    second = trace.sizes[(trace.times >= 20.0) & (trace.times < 40.0)]
    assert set(first.tolist()) == {8 * KB}
    assert set(second.tolist()) == {32 * KB}


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), rate=st.floats(1.0, 500.0))
def test_generation_monotone_property(seed, rate):
    spec = WorkloadSpec("h", 512, 4096, 50, 5.0, rate, arrival="poisson")
    trace = generate_trace(spec, seed)
    assert np.all(np.diff(trace.times) >= 0)


def test_trace_round_trip(tmp_path):
    spec = build_standard_spec("S-3", 5.0, 200.0)
    trace = generate_trace(spec, seed=5)
    assert len(trace) > 500
    path = tmp_path / "t.trace"
    save_trace(trace, path)
    assert load_trace(path) == trace


def test_trace_iterates_as_requests():
    spec = WorkloadSpec("c", 512, 4096, 0, 1.0, 5.0, arrival="constant")
    reqs = list(generate_trace(spec, seed=0))
    assert [r.id for r in reqs] == [0, 1, 2, 3, 4]
    assert all(r.size == 4096 for r in reqs)
    assert all(r.kind == "W" for r in reqs)


def test_load_negative_size_reports_line(tmp_path):
    path = tmp_path / "bad.trace"
    path.write_text("#qoco-trace v1\n0,0.0,4096,W\n1,0.1,-5,W\n")
    with pytest.raises(ValueError, match="line 3"):
        load_trace(path)


def test_load_malformed_row_reports_line(tmp_path):
    path = tmp_path / "bad.trace"
    path.write_text("#qoco-trace v1\n0,zero,4096,W\n")
    with pytest.raises(ValueError, match="line 2"):
        load_trace(path)


def test_load_empty_file_is_empty_stream(tmp_path):
    path = tmp_path / "empty.trace"
    path.write_text("")
    trace = load_trace(path)
    assert len(trace) == 0
    assert trace == Trace.empty()


def test_load_missing_header_rejected(tmp_path):
    path = tmp_path / "nohdr.trace"
    path.write_text("0,0.0,4096,W\n")
    with pytest.raises(ValueError, match="header"):
        load_trace(path)


def test_changing_sequence_ids_constant():
    assert CHANGING_SEQUENCE_IDS == (
        "S-17", "S-6", "S-18", "S-9", "S-18", "S-7", "S-18", "S-8", "S-19",
    )
