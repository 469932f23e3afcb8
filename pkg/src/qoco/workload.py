"""Synthetic I/O workload generation and trace files.

A workload is a request stream with a fixed block size, I/O size and
read share.  Nineteen standard benchmark classes (S-1 .. S-19) are built
in; arbitrary streams can be loaded from trace files.  Arrival processes
are either constant-rate (exact, for deterministic tests) or Poisson
(seeded, for burstiness).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KB = 1024

TRACE_HEADER = "#qoco-trace v1"

# Standard benchmark classes: id -> (block size, I/O size, read share %).
STANDARD_WORKLOADS = {
    "S-1": (512, 4 * KB, 0),
    "S-2": (512, 4 * KB, 30),
    "S-3": (512, 4 * KB, 50),
    "S-4": (512, 4 * KB, 70),
    "S-5": (8 * KB, 32 * KB, 0),
    "S-6": (8 * KB, 32 * KB, 30),
    "S-7": (8 * KB, 32 * KB, 70),
    "S-8": (8 * KB, 256 * KB, 0),
    "S-9": (8 * KB, 256 * KB, 30),
    "S-10": (8 * KB, 256 * KB, 70),
    "S-11": (32 * KB, 32 * KB, 0),
    "S-12": (32 * KB, 32 * KB, 30),
    "S-13": (32 * KB, 32 * KB, 70),
    "S-14": (32 * KB, 256 * KB, 0),
    "S-15": (32 * KB, 256 * KB, 30),
    "S-16": (32 * KB, 256 * KB, 70),
    "S-17": (8 * KB, 8 * KB, 0),
    "S-18": (8 * KB, 8 * KB, 30),
    "S-19": (8 * KB, 8 * KB, 70),
}

# Replay order for the changing-workload experiment.  Consecutive phases
# always differ in at least one of block size, I/O size, read share.
CHANGING_SEQUENCE_IDS = (
    "S-17", "S-6", "S-18", "S-9", "S-18", "S-7", "S-18", "S-8", "S-19",
)


@dataclass(frozen=True, slots=True)
class IoRequest:
    """One host-side I/O request."""

    id: int
    arrival_time: float  # seconds
    size: int            # bytes
    kind: str            # "R" or "W"


@dataclass(frozen=True)
class WorkloadSpec:
    id: str
    block_size: int
    io_size: int
    read_ratio: float        # percent of requests that are reads
    duration: float          # seconds
    offered_rate: float      # mean requests/second
    arrival: str = "poisson"  # "poisson" | "constant"

    def __post_init__(self):
        if self.block_size <= 0:
            raise ValueError("block_size must be positive")
        if self.io_size < self.block_size or self.io_size % self.block_size != 0:
            raise ValueError("io_size must be a positive multiple of block_size")
        if not 0 <= self.read_ratio <= 100:
            raise ValueError("read_ratio must be in [0, 100]")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.offered_rate <= 0:
            raise ValueError("offered_rate must be positive")
        if self.arrival not in ("poisson", "constant"):
            raise ValueError(f"unknown arrival process {self.arrival!r}")

    @property
    def offered_bytes_per_second(self) -> float:
        return self.offered_rate * self.io_size


@dataclass(frozen=True)
class WorkloadSequence:
    """Ordered workload phases replayed back to back."""

    phases: tuple[WorkloadSpec, ...]

    def __post_init__(self):
        if not self.phases:
            raise ValueError("a sequence needs at least one phase")
        for a, b in zip(self.phases, self.phases[1:]):
            if (a.block_size, a.io_size, a.read_ratio) == (b.block_size, b.io_size, b.read_ratio):
                raise ValueError(
                    f"consecutive phases {a.id} -> {b.id} do not differ in any workload property"
                )

    @property
    def duration(self) -> float:
        return sum(p.duration for p in self.phases)


def build_standard_spec(
    workload_id: str,
    duration: float,
    offered_rate: float,
    arrival: str = "poisson",
) -> WorkloadSpec:
    """Build one of the S-1 .. S-19 benchmark specs."""
    try:
        block, io, read = STANDARD_WORKLOADS[workload_id]
    except KeyError:
        valid = ", ".join(STANDARD_WORKLOADS)
        raise ValueError(f"unknown workload id {workload_id!r}; valid ids: {valid}") from None
    return WorkloadSpec(
        id=workload_id,
        block_size=block,
        io_size=io,
        read_ratio=float(read),
        duration=duration,
        offered_rate=offered_rate,
        arrival=arrival,
    )


def build_changing_sequence(
    phase_duration: float,
    offered_rate: float | list[float] = 1000.0,
    arrival: str = "poisson",
) -> WorkloadSequence:
    """The 9-phase changing-workload replay with equal phase durations.

    ``offered_rate`` may be a scalar (same mean rate for all phases) or a
    per-phase list of nine rates.
    """
    if phase_duration <= 0:
        raise ValueError("phase_duration must be positive")
    if isinstance(offered_rate, (int, float)):
        rates = [float(offered_rate)] * len(CHANGING_SEQUENCE_IDS)
    else:
        rates = [float(r) for r in offered_rate]
        if len(rates) != len(CHANGING_SEQUENCE_IDS):
            raise ValueError(f"need {len(CHANGING_SEQUENCE_IDS)} per-phase rates, got {len(rates)}")
    phases = tuple(
        build_standard_spec(wid, phase_duration, rate, arrival)
        for wid, rate in zip(CHANGING_SEQUENCE_IDS, rates)
    )
    return WorkloadSequence(phases)


@dataclass(eq=False)
class Trace:
    """Column-oriented request stream.

    Iterating yields :class:`IoRequest` in arrival order; the raw numpy
    columns are what the simulator consumes.
    """

    ids: np.ndarray          # int64
    times: np.ndarray        # float64 seconds, nondecreasing
    sizes: np.ndarray        # int64 bytes
    reads: np.ndarray        # bool, True = read
    phase_starts: tuple[float, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        for i in range(len(self.ids)):
            yield self[i]

    def __getitem__(self, i: int) -> IoRequest:
        return IoRequest(
            id=int(self.ids[i]),
            arrival_time=float(self.times[i]),
            size=int(self.sizes[i]),
            kind="R" if self.reads[i] else "W",
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.sizes, other.sizes)
            and np.array_equal(self.reads, other.reads)
        )

    @property
    def total_bytes(self) -> int:
        return int(self.sizes.sum())

    @staticmethod
    def empty() -> "Trace":
        return Trace(
            ids=np.empty(0, dtype=np.int64),
            times=np.empty(0, dtype=np.float64),
            sizes=np.empty(0, dtype=np.int64),
            reads=np.empty(0, dtype=bool),
        )


def _arrival_times(spec: WorkloadSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.arrival == "constant":
        n = int(round(spec.offered_rate * spec.duration))
        return np.arange(n, dtype=np.float64) / spec.offered_rate
    # Poisson: draw exponential gaps in chunks until the horizon is covered.
    mean_gap = 1.0 / spec.offered_rate
    chunk = max(64, int(spec.offered_rate * spec.duration * 1.1) + 1)
    times = rng.exponential(mean_gap, size=chunk).cumsum()
    while times[-1] < spec.duration:
        more = rng.exponential(mean_gap, size=chunk).cumsum() + times[-1]
        times = np.concatenate([times, more])
    return times[times < spec.duration]


def _generate_phase(spec: WorkloadSpec, seed, id_start: int, t_offset: float) -> Trace:
    rng = np.random.default_rng(seed)
    times = _arrival_times(spec, rng) + t_offset
    n = len(times)
    reads = rng.random(n) < spec.read_ratio / 100.0
    return Trace(
        ids=np.arange(id_start, id_start + n, dtype=np.int64),
        times=times,
        sizes=np.full(n, spec.io_size, dtype=np.int64),
        reads=reads,
    )


def generate_trace(spec: WorkloadSpec | WorkloadSequence, seed: int) -> Trace:
    """Deterministic request stream for ``(spec, seed)``."""
    if isinstance(spec, WorkloadSpec):
        spec = WorkloadSequence((spec,))
    parts = []
    id_start = 0
    t_offset = 0.0
    starts = []
    for k, phase in enumerate(spec.phases):
        starts.append(t_offset)
        part = _generate_phase(phase, np.random.SeedSequence([int(seed), k]), id_start, t_offset)
        parts.append(part)
        id_start += len(part)
        t_offset += phase.duration
    return Trace(
        ids=np.concatenate([p.ids for p in parts]),
        times=np.concatenate([p.times for p in parts]),
        sizes=np.concatenate([p.sizes for p in parts]),
        reads=np.concatenate([p.reads for p in parts]),
        phase_starts=tuple(starts),
    )


def save_trace(stream, path) -> None:
    """Write a trace file: one ``id,arrival_time_s,size_bytes,kind`` row per request."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(TRACE_HEADER + "\n")
        for req in stream:
            f.write(f"{req.id},{req.arrival_time!r},{req.size},{req.kind}\n")


def load_trace(path) -> Trace:
    """Read a trace file back into a :class:`Trace`.

    An empty file is an empty stream.  Malformed rows raise ``ValueError``
    with the offending line number.
    """
    ids, times, sizes, reads = [], [], [], []
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if first == "":
            return Trace.empty()
        if first.strip() != TRACE_HEADER:
            raise ValueError(f"{path}: line 1: expected header {TRACE_HEADER!r}")
        prev_t = -np.inf
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}: line {lineno}: expected 4 columns, got {len(parts)}")
            try:
                rid = int(parts[0])
                t = float(parts[1])
                size = int(parts[2])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: malformed numeric field") from None
            kind = parts[3]
            if size < 0:
                raise ValueError(f"{path}: line {lineno}: negative size {size}")
            if kind not in ("R", "W"):
                raise ValueError(f"{path}: line {lineno}: kind must be R or W, got {kind!r}")
            if t < prev_t:
                raise ValueError(f"{path}: line {lineno}: arrival times must be nondecreasing")
            prev_t = t
            ids.append(rid)
            times.append(t)
            sizes.append(size)
            reads.append(kind == "R")
    return Trace(
        ids=np.asarray(ids, dtype=np.int64),
        times=np.asarray(times, dtype=np.float64),
        sizes=np.asarray(sizes, dtype=np.int64),
        reads=np.asarray(reads, dtype=bool),
    )
