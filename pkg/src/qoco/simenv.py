"""Discrete-event model of a write-back caching tier over a storage tier.

Admitted requests land in the cache and are drained by a stochastic
flush process; occupancy is tracked as a watermark percentage.  When the
watermark reaches the overload threshold at the start of a tick, the
cache is overloaded: destage contention degrades the flush capability by
the collapse-efficiency factor, and admission is drain-limited to the
bytes flushable in that same tick, so throughput collapses abruptly but
the simulation can never deadlock.  The overload state persists until
occupancy falls to the recovery mark (high/low watermark hysteresis; by
default the two marks coincide).

Requests deferred in the host queue accrue queueing delay in whole
ticks.  Completed requests record an end-to-end latency of queueing
delay plus a constant per-path service time (cache path vs. direct to
storage).

The queue is batch-oriented: requests arriving in the same tick with
the same size form one FIFO segment, so a tick costs O(segments
touched) rather than O(requests).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .executor import TokenBucket
from .workload import Trace

SAMPLES_HEADER = "#qoco-samples v1"

# Stream tags keep the noise and dip processes independent per seed.
_NOISE_TAG = 101
_DIP_TAG = 202


@dataclass
class CacheModel:
    capacity: float                     # bytes
    occupied: float = 0.0               # bytes
    overload_threshold: float = 100.0   # percent of capacity
    # Fraction of same-tick flushed bytes still admittable while overloaded.
    # 1.0 is pure drain-limited admission; below 1.0 models the thrash of a
    # full write-back cache (blocked writers, destage contention).
    collapse_efficiency: float = 1.0
    # Once overloaded, the collapse persists until the watermark falls below
    # this mark (high/low watermark hysteresis).  None means no hysteresis:
    # recovery at the overload threshold itself.
    recovery_threshold: float | None = None

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if not 0 < self.overload_threshold <= 100:
            raise ValueError("overload_threshold must be in (0, 100]")
        if not 0 <= self.occupied <= self.capacity:
            raise ValueError("occupied must be within [0, capacity]")
        if not 0 < self.collapse_efficiency <= 1:
            raise ValueError("collapse_efficiency must be in (0, 1]")
        if self.recovery_threshold is None:
            self.recovery_threshold = self.overload_threshold
        if self.recovery_threshold > self.overload_threshold:
            raise ValueError("recovery_threshold must not exceed overload_threshold")

    @property
    def watermark(self) -> float:
        return 100.0 * self.occupied / self.capacity


@dataclass
class FlushProcess:
    """Flush bandwidth as a seeded random process.

    Per-tick draws are ``base * (1 + N(0, cv))`` clamped at zero, scaled
    by ``1 - dip_depth`` while a dip event (background task) is active.
    Draws are a pure function of ``(seed, tick)`` regardless of call
    order.
    """

    base_bandwidth: float        # bytes/second
    noise_cv: float = 0.0        # coefficient of variation
    dip_rate: float = 0.0        # dip events per second
    dip_depth: float = 0.0       # fraction of bandwidth lost during a dip
    dip_duration: float = 0.0    # seconds
    seed: int = 0
    _dip_starts: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.base_bandwidth <= 0:
            raise ValueError("base_bandwidth must be positive")
        if self.noise_cv < 0:
            raise ValueError("noise_cv must be nonnegative")
        if not 0 <= self.dip_depth < 1:
            raise ValueError("dip_depth must be in [0, 1)")

    def _dip_started_at(self, m: int, tick: float) -> bool:
        if m < 0:
            return False
        hit = self._dip_starts.get(m)
        if hit is None:
            u = np.random.default_rng([self.seed, _DIP_TAG, m]).random()
            hit = u < self.dip_rate * tick
            self._dip_starts[m] = hit
        return hit

    def dip_active(self, t: int, tick: float = 1.0) -> bool:
        if self.dip_rate <= 0 or self.dip_depth <= 0:
            return False
        span = max(1, math.ceil(self.dip_duration / tick))
        return any(self._dip_started_at(m, tick) for m in range(t - span + 1, t + 1))


def flush_draw(fp: FlushProcess, t: int, tick: float = 1.0) -> float:
    """Flush bandwidth (bytes/second) available during tick ``t``."""
    value = fp.base_bandwidth
    if fp.noise_cv > 0:
        g = np.random.default_rng([fp.seed, _NOISE_TAG, t]).standard_normal()
        value *= 1.0 + fp.noise_cv * g
    value = max(0.0, value)
    if fp.dip_active(t, tick):
        value *= 1.0 - fp.dip_depth
    return value


@dataclass(frozen=True)
class SimConfig:
    tick: float = 1.0                 # seconds
    cache_service: float = 0.0001     # seconds per request on the cache path
    storage_service: float = 0.002    # seconds per request direct to storage
    total_duration: float = 1500.0    # seconds
    seed: int = 0

    def __post_init__(self):
        if self.tick <= 0:
            raise ValueError("tick must be positive")
        if self.total_duration < self.tick:
            raise ValueError("total_duration must cover at least one tick")

    @property
    def ticks(self) -> int:
        return int(round(self.total_duration / self.tick))


@dataclass(slots=True)
class RequestBatch:
    """Contiguous run of same-sized requests that arrived in one tick."""

    arrival_tick: int
    id_start: int
    count: int
    size: int

    @property
    def bytes(self) -> int:
        return self.count * self.size


@dataclass(slots=True)
class CompletedBatch:
    id_start: int
    count: int
    latency: float


@dataclass
class SystemSample:
    """Ground truth for one tick."""

    t: int
    admitted_bw: float        # I_t, bytes/second admitted into the cache
    flushed_bw: float         # O_t, bytes/second actually destaged
    watermark: float          # W_t, percent
    host_queue_depth: int     # requests still queued at tick end
    completed_batches: list[CompletedBatch] = field(default_factory=list)

    @property
    def completed(self) -> list[tuple[int, float]]:
        """Per-request ``(id, latency)`` pairs completed this tick."""
        out = []
        for b in self.completed_batches:
            out.extend((b.id_start + i, b.latency) for i in range(b.count))
        return out


class _ByteBudget:
    """Adapter so a plain byte grant walks the same admission path as a bucket."""

    def __init__(self, budget: float):
        self.budget = budget

    def admissible_count(self, size: int) -> int:
        if size == 0 or math.isinf(self.budget):
            return int(1e18)
        return int(self.budget // size)

    def consume(self, size: int, count: int) -> None:
        self.budget -= size * count


class CacheSim:
    def __init__(self, cache: CacheModel, flush: FlushProcess, cfg: SimConfig):
        self.cache = cache
        self.flush = flush
        self.cfg = cfg
        self.t = 0
        self.queue: deque[RequestBatch] = deque()
        self._queued_requests = 0
        self._tick_ready = False
        self._draw_bw = 0.0
        self._flush_capability = 0.0      # bytes this tick, after overload thrash
        self._collapsed = False
        self._overloaded = False          # sticky between threshold and recovery mark
        self._admit_cap = math.inf        # remaining budget, consumed by drain
        self._admit_cap_start = math.inf  # the tick's full cap, for step's check

    # -- per-tick state ------------------------------------------------

    def _ensure_tick_state(self) -> None:
        """Fix this tick's flush capability and admission caps from start-of-tick state."""
        if self._tick_ready:
            return
        self._draw_bw = flush_draw(self.flush, self.t, self.cfg.tick)
        watermark = self.cache.watermark
        if watermark >= self.cache.overload_threshold:
            self._overloaded = True
        elif watermark < self.cache.recovery_threshold:
            self._overloaded = False
        self._collapsed = self._overloaded
        capability = self._draw_bw * self.cfg.tick
        if self._collapsed:
            # Overload thrash: destage contention degrades the flush side
            # itself, and the degradation persists until occupancy falls to
            # the recovery mark.
            capability *= self.cache.collapse_efficiency
        self._flush_capability = capability
        occupied = self.cache.occupied
        guaranteed_drain = min(capability, occupied)
        # Physical bound: never admit past free space plus guaranteed drainage.
        cap = self.cache.capacity - occupied + guaranteed_drain
        if self._collapsed:
            # Admission collapses below the degraded drain, so an overloaded
            # cache loses ground each tick and eventually recovers.
            cap = min(cap, self.cache.collapse_efficiency * guaranteed_drain)
        self._admit_cap = cap
        self._admit_cap_start = cap
        self._tick_ready = True

    @property
    def collapsed(self) -> bool:
        self._ensure_tick_state()
        return self._collapsed

    # -- queueing and admission -----------------------------------------

    def enqueue(self, batch: RequestBatch) -> None:
        if batch.count > 0:
            self.queue.append(batch)
            self._queued_requests += batch.count

    def enqueue_requests(self, requests) -> None:
        """Enqueue loose IoRequests (test convenience; coalesces per size run)."""
        for req in requests:
            tick = int(req.arrival_time // self.cfg.tick)
            self.enqueue(RequestBatch(tick, req.id, 1, req.size))

    def drain_host_queue(self, grant) -> list[RequestBatch]:
        """Admit queued requests FIFO until the grant or tick caps run out.

        ``grant`` is a byte budget (float, ``math.inf`` for no control) or
        a :class:`TokenBucket`.  Leftover budget is not carried over.
        """
        self._ensure_tick_state()
        source = grant if isinstance(grant, TokenBucket) else _ByteBudget(float(grant))
        cap = self._admit_cap
        admitted: list[RequestBatch] = []
        while self.queue:
            head = self.queue[0]
            n = min(head.count, source.admissible_count(head.size))
            if head.size > 0:
                n = min(n, int(cap // head.size))
            if n <= 0:
                break
            source.consume(head.size, n)
            cap -= n * head.size
            self._queued_requests -= n
            if n == head.count:
                self.queue.popleft()
                admitted.append(head)
            else:
                admitted.append(RequestBatch(head.arrival_tick, head.id_start, n, head.size))
                head.id_start += n
                head.count -= n
                break
        self._admit_cap = cap
        return admitted

    # -- tick completion --------------------------------------------------

    def step(self, admitted: list[RequestBatch], bypassed: list[RequestBatch] = ()) -> SystemSample:
        """Close out the current tick and emit its sample.

        ``admitted`` enters the cache (normally the output of
        :meth:`drain_host_queue`); ``bypassed`` goes straight to the
        storage tier.  If a caller hands in more admitted bytes than this
        tick's caps allow, the excess is pushed back to the queue head.
        """
        self._ensure_tick_state()
        admitted = self._truncate_to_cap(admitted)
        admitted_bytes = sum(b.bytes for b in admitted)
        flushed_bytes = min(self._flush_capability, self.cache.occupied + admitted_bytes)
        self.cache.occupied += admitted_bytes - flushed_bytes

        completed = []
        for b in admitted:
            delay = (self.t - b.arrival_tick) * self.cfg.tick
            completed.append(CompletedBatch(b.id_start, b.count, delay + self.cfg.cache_service))
        for b in bypassed:
            completed.append(CompletedBatch(b.id_start, b.count, self.cfg.storage_service))

        sample = SystemSample(
            t=self.t,
            admitted_bw=admitted_bytes / self.cfg.tick,
            flushed_bw=flushed_bytes / self.cfg.tick,
            watermark=self.cache.watermark,
            host_queue_depth=self._queued_requests,
            completed_batches=completed,
        )
        self.t += 1
        self._tick_ready = False
        return sample

    def _truncate_to_cap(self, admitted: list[RequestBatch]) -> list[RequestBatch]:
        total = sum(b.bytes for b in admitted)
        if total <= self._admit_cap_start:
            return list(admitted)
        kept: list[RequestBatch] = []
        cap = self._admit_cap_start
        overflow: list[RequestBatch] = []
        for b in admitted:
            n = min(b.count, int(cap // b.size)) if b.size > 0 else b.count
            if n > 0:
                kept.append(RequestBatch(b.arrival_tick, b.id_start, n, b.size))
                cap -= n * b.size
            if n < b.count:
                overflow.append(RequestBatch(b.arrival_tick, b.id_start + n, b.count - n, b.size))
        for b in reversed(overflow):
            self.queue.appendleft(b)
            self._queued_requests += b.count
        self._admit_cap = 0.0
        return kept


# -- trace feeding ---------------------------------------------------------


class TraceFeeder:
    """Slices a trace into per-tick arrival batches."""

    def __init__(self, trace: Trace, tick: float, ticks: int):
        edges = np.arange(ticks + 1, dtype=np.float64) * tick
        self._bounds = np.searchsorted(trace.times, edges, side="left")
        self.trace = trace

    def arrivals(self, t: int) -> list[RequestBatch]:
        lo, hi = int(self._bounds[t]), int(self._bounds[t + 1])
        if lo == hi:
            return []
        sizes = self.trace.sizes[lo:hi]
        if (sizes == sizes[0]).all():
            return [RequestBatch(t, int(self.trace.ids[lo]), hi - lo, int(sizes[0]))]
        cuts = (np.flatnonzero(sizes[1:] != sizes[:-1]) + 1).tolist()
        starts = [0, *cuts]
        ends = [*cuts, hi - lo]
        return [
            RequestBatch(t, int(self.trace.ids[lo + s]), e - s, int(sizes[s]))
            for s, e in zip(starts, ends)
        ]


# -- sample logs -----------------------------------------------------------


def save_samples(samples, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(SAMPLES_HEADER + "\n")
        for s in samples:
            f.write(f"{s.t},{s.admitted_bw!r},{s.flushed_bw!r},{s.watermark!r},{s.host_queue_depth}\n")


def load_samples(path) -> list[SystemSample]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if first == "":
            return out
        if first.strip() != SAMPLES_HEADER:
            raise ValueError(f"{path}: line 1: expected header {SAMPLES_HEADER!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ValueError(f"{path}: line {lineno}: expected 5 columns")
            out.append(
                SystemSample(
                    t=int(parts[0]),
                    admitted_bw=float(parts[1]),
                    flushed_bw=float(parts[2]),
                    watermark=float(parts[3]),
                    host_queue_depth=int(parts[4]),
                )
            )
    return out
