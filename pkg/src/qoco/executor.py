"""Token-bucket enforcement of a bandwidth grant at the cache entrance.

The bucket is refilled once per tick from the currently granted
bandwidth.  Capacity equals one tick's fill, so unspent grant never
accumulates across ticks beyond a single-tick burst.
"""

from __future__ import annotations

import math


class TokenBucket:
    def __init__(self, bytes_per_token: float = 1024.0):
        if bytes_per_token <= 0:
            raise ValueError("bytes_per_token must be positive")
        self.bytes_per_token = float(bytes_per_token)
        self.fill_rate = 0.0   # tokens added per tick
        self.capacity = 0.0    # == fill_rate: one-tick burst cap
        self.tokens = 0.0

    def set_bandwidth(self, bandwidth: float, tick: float) -> None:
        """Translate a bytes/second grant into tokens/tick."""
        if bandwidth < 0:
            raise ValueError("bandwidth must be nonnegative")
        self.fill_rate = bandwidth * tick / self.bytes_per_token
        self.capacity = self.fill_rate
        self.tokens = min(self.tokens, self.capacity)

    def replenish(self) -> None:
        self.tokens = min(self.capacity, self.tokens + self.fill_rate)

    def cost(self, size: int) -> int:
        return math.ceil(size / self.bytes_per_token)

    def try_admit(self, size: int) -> bool:
        """Admit one request of ``size`` bytes if the balance allows."""
        need = self.cost(size)
        if self.tokens >= need:
            self.tokens -= need
            return True
        return False

    def admissible_count(self, size: int) -> int:
        """How many same-sized requests the current balance covers."""
        need = self.cost(size)
        if need == 0:
            return int(1e18)
        return int(self.tokens // need)

    def consume(self, size: int, count: int) -> None:
        self.tokens -= self.cost(size) * count
        assert self.tokens >= 0, "token balance went negative"
