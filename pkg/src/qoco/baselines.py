"""Rule-based comparators behind the same per-tick decision contract.

CoTo is a three-band watermark state machine: persistent High decreases
bandwidth by a fixed rate, persistent Low increases it, a band change
applies a product of the band delta and the relative inflow/outflow gap,
anything else holds.  Bypass routes requests straight to the storage
tier whenever the recent cache-path latency exceeds a threshold.  The
no-control passthrough admits the whole offered load.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass


@dataclass(frozen=True)
class CoToConfig:
    # Watermark bands: Low [0, 20), Mid [20, 80), High [80, 100].
    band_edges: tuple[float, float] = (20.0, 80.0)
    base_rate: float = 0.05      # r
    floor: float = 1024.0        # bytes/second
    band_index_delta: bool = True  # watermark delta in band-index units

    def __post_init__(self):
        if not 0 < self.band_edges[0] < self.band_edges[1] <= 100:
            raise ValueError("band edges must be increasing within (0, 100]")
        if self.base_rate <= 0:
            raise ValueError("base_rate must be positive")


class CoToController:
    """Finite state machine over the discretized watermark."""

    N_BANDS = 3

    def __init__(self, cfg: CoToConfig | None = None):
        self.cfg = cfg or CoToConfig()
        self.prev_band: int | None = None
        self.prev_watermark: float | None = None

    def band(self, watermark: float) -> int:
        lo, hi = self.cfg.band_edges
        if watermark < lo:
            return 0
        if watermark < hi:
            return 1
        return 2

    def decide(
        self,
        watermark: float,
        I_t: float,
        O_t: float,
        measured_I: float | None = None,
    ) -> float:
        """Next bandwidth from (W_t, I_t, O_t); updates the FSM state.

        ``measured_I`` (observed admitted bandwidth) feeds the band-change
        term when the control variable ``I_t`` is a grant rather than a
        measurement; it defaults to ``I_t``.
        """
        if I_t <= 0:
            raise ValueError("I_t must be positive")
        band = self.band(watermark)
        prev_band = self.prev_band if self.prev_band is not None else band
        prev_w = self.prev_watermark if self.prev_watermark is not None else watermark
        flow = I_t if measured_I is None else measured_I

        if band != prev_band:
            if self.cfg.band_index_delta:
                delta_w = float(band - prev_band)
            else:
                delta_w = watermark - prev_w
            change_rate = abs(flow - O_t) / O_t if O_t > 0 else 0.0
            alpha = delta_w / self.N_BANDS * change_rate
        elif band == 2:
            alpha = -self.cfg.base_rate
        elif band == 0:
            alpha = self.cfg.base_rate
        else:
            alpha = 0.0

        self.prev_band = band
        self.prev_watermark = watermark
        return max((1.0 + alpha) * I_t, self.cfg.floor)


@dataclass(frozen=True)
class BypassConfig:
    latency_threshold: float = 0.001   # seconds
    window: int = 100                  # completions in the moving average

    def __post_init__(self):
        if self.latency_threshold <= 0:
            raise ValueError("latency_threshold must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")


class BypassRouter:
    """Threshold router on a moving average of recent completion latency.

    Both paths feed the estimate; if only cache completions did, the
    estimate would freeze above the threshold the moment all traffic
    bypasses and the route could never return to the cache.
    """

    def __init__(self, cfg: BypassConfig | None = None):
        self.cfg = cfg or BypassConfig()
        self._recent: deque[float] = deque(maxlen=self.cfg.window)
        self._sum = 0.0

    @property
    def latency_estimate(self) -> float:
        if not self._recent:
            return 0.0
        return self._sum / len(self._recent)

    def observe_latency(self, latency: float, count: int = 1) -> None:
        for _ in range(min(count, self.cfg.window)):
            if len(self._recent) == self._recent.maxlen:
                self._sum -= self._recent[0]
            self._recent.append(latency)
            self._sum += latency

    def route(self) -> str:
        """Destination for an arriving request: ``cache`` or ``storage_direct``."""
        return "storage_direct" if self.latency_estimate > self.cfg.latency_threshold else "cache"


def no_control(offered_bandwidth: float) -> float:
    """Passthrough: the whole offered load is admitted (the environment's
    overload collapse still applies)."""
    return offered_bandwidth
