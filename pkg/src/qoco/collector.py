"""State collection: raw tick samples -> (W, P, B) -> discrete bands -> class.

W is the cache watermark in percent.  P is the processing-ability ratio
(I_t - O_t) / O_t.  B is the utilization (percent) of the estimated
maximum flush bandwidth by the bandwidth demand the admitted stream puts
on the flush stage; the estimator is a decayed running maximum of
observed flush rates, so B > 100 means demand beyond anything the flush
stage has delivered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import NamedTuple, Optional

from .simenv import SystemSample


class WatermarkBand(IntEnum):
    EXTREMELY_LOW = 0
    LOW = 1
    MID = 2
    HIGH = 3


class ProcessingBand(IntEnum):
    LOW = 0
    MID = 1
    HIGH = 2


class BdpBand(IntEnum):
    UNDERUSE = 0
    FULLUSE = 1
    OVERUSE = 2


class DiscreteState(NamedTuple):
    w: WatermarkBand
    p: ProcessingBand
    b: BdpBand


ALL_STATES: tuple[DiscreteState, ...] = tuple(
    DiscreteState(w, p, b)
    for w in WatermarkBand
    for p in ProcessingBand
    for b in BdpBand
)


@dataclass(frozen=True)
class StateSample:
    """Continuous control state for one tick."""

    watermark: float          # W, percent in [0, 100]
    processing: float         # P = (I - O) / O; +inf when O == 0
    bdp: float                # B, percent of estimated max flush bandwidth
    flush_idle: bool = False  # O_t was zero, P is degenerate


@dataclass(frozen=True)
class DiscretizationConfig:
    """Band edges per dimension.

    Watermark bands are left-closed: [0, w0), [w0, w1), [w1, w2), [w2, 100].
    Processing bands keep the (-inf, p0], (p0, p1), [p1, +inf) shape.
    BDP bands are [0, b0), [b0, b1), [b1, +inf).
    """

    watermark_edges: tuple[float, float, float] = (10.0, 30.0, 80.0)
    processing_edges: tuple[float, float] = (-0.1, 0.1)
    bdp_edges: tuple[float, float] = (15.0, 100.0)
    bdp_max_decay: float = 0.999   # per-tick decay of the running-max estimator

    def __post_init__(self):
        if not (0 < self.watermark_edges[0] < self.watermark_edges[1] < self.watermark_edges[2] <= 100):
            raise ValueError("watermark edges must be strictly increasing within (0, 100]")
        if not self.processing_edges[0] < self.processing_edges[1]:
            raise ValueError("processing edges must be strictly increasing")
        if not 0 < self.bdp_edges[0] < self.bdp_edges[1]:
            raise ValueError("bdp edges must be strictly increasing and positive")
        if not 0 < self.bdp_max_decay <= 1:
            raise ValueError("bdp_max_decay must be in (0, 1]")


class StateCollector:
    """Owns the flush-bandwidth running-max estimator for one control loop."""

    def __init__(self, cfg: DiscretizationConfig | None = None):
        self.cfg = cfg or DiscretizationConfig()
        self.flush_max_estimate = 0.0

    def compute_state(self, sample: SystemSample) -> StateSample:
        est = max(self.flush_max_estimate * self.cfg.bdp_max_decay, sample.flushed_bw)
        self.flush_max_estimate = est
        if sample.flushed_bw > 0:
            processing = (sample.admitted_bw - sample.flushed_bw) / sample.flushed_bw
            idle = False
        else:
            processing = math.inf
            idle = True
        demand = sample.admitted_bw
        bdp = 100.0 * demand / est if est > 0 else 0.0
        return StateSample(
            watermark=sample.watermark,
            processing=processing,
            bdp=bdp,
            flush_idle=idle,
        )


def discretize(s: StateSample, cfg: DiscretizationConfig | None = None) -> DiscreteState:
    cfg = cfg or DiscretizationConfig()
    w0, w1, w2 = cfg.watermark_edges
    if s.watermark < w0:
        w = WatermarkBand.EXTREMELY_LOW
    elif s.watermark < w1:
        w = WatermarkBand.LOW
    elif s.watermark < w2:
        w = WatermarkBand.MID
    else:
        w = WatermarkBand.HIGH
    p0, p1 = cfg.processing_edges
    if s.processing <= p0:
        p = ProcessingBand.LOW
    elif s.processing < p1:
        p = ProcessingBand.MID
    else:
        p = ProcessingBand.HIGH
    b0, b1 = cfg.bdp_edges
    if s.bdp < b0:
        b = BdpBand.UNDERUSE
    elif s.bdp < b1:
        b = BdpBand.FULLUSE
    else:
        b = BdpBand.OVERUSE
    return DiscreteState(w, p, b)


class Category(Enum):
    BETTER = "better"
    WORSE = "worse"
    GENERAL = "general"


class Extreme(Enum):
    HIGH = "extreme_high"
    LOW = "extreme_low"


@dataclass(frozen=True)
class StateClass:
    category: Category
    extreme: Optional[Extreme] = None

    @property
    def is_better(self) -> bool:
        return self.category is Category.BETTER

    @property
    def is_worse(self) -> bool:
        return self.category is Category.WORSE

    @property
    def is_extreme_high(self) -> bool:
        return self.extreme is Extreme.HIGH

    @property
    def is_extreme_low(self) -> bool:
        return self.extreme is Extreme.LOW


def classify(d: DiscreteState) -> StateClass:
    """Better/Worse/General category plus the extreme flag.

    A state can satisfy both extreme predicates (e.g. High watermark with
    Underuse); the high side wins because overload is the hazard the
    controller exists to prevent.
    """
    if d.w is WatermarkBand.MID and d.p is ProcessingBand.MID and d.b is BdpBand.FULLUSE:
        category = Category.BETTER
    elif (
        d.w is WatermarkBand.HIGH
        and d.p in (ProcessingBand.LOW, ProcessingBand.HIGH)
        and d.b is BdpBand.OVERUSE
    ):
        category = Category.WORSE
    else:
        category = Category.GENERAL

    extreme = None
    if d.w is WatermarkBand.HIGH or d.p is ProcessingBand.HIGH or d.b is BdpBand.OVERUSE:
        extreme = Extreme.HIGH
    elif (
        d.w is WatermarkBand.EXTREMELY_LOW
        or d.p is ProcessingBand.LOW
        or d.b is BdpBand.UNDERUSE
    ):
        extreme = Extreme.LOW
    return StateClass(category, extreme)
