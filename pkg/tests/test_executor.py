from __future__ import annotations

import pytest

from qoco.executor import TokenBucket

KB = 1024


def test_set_bandwidth_conversion():
    tb = TokenBucket(bytes_per_token=1024)
    tb.set_bandwidth(100 * 1024 * 1024, tick=1.0)
    assert tb.fill_rate == 102400
    assert tb.capacity == 102400


def test_zero_bandwidth_admits_nothing():
    tb = TokenBucket()
    tb.set_bandwidth(0.0, tick=1.0)
    tb.replenish()
    assert tb.tokens == 0
    assert not tb.try_admit(1)


def test_fill_rate_linearity():
    tb = TokenBucket()
    tb.set_bandwidth(1000.0, tick=1.0)
    once = tb.fill_rate
    tb.set_bandwidth(2000.0, tick=1.0)
    assert tb.fill_rate == 2 * once


def test_replenish_from_empty():
    tb = TokenBucket(bytes_per_token=1.0)
    tb.set_bandwidth(10.0, tick=1.0)
    tb.tokens = 0
    tb.replenish()
    assert tb.tokens == 10


def test_replenish_clamps_at_capacity():
    tb = TokenBucket(bytes_per_token=1.0)
    tb.set_bandwidth(10.0, tick=1.0)
    tb.tokens = 7
    tb.replenish()
    assert tb.tokens == 10


def test_replenish_zero_fill_unchanged():
    tb = TokenBucket(bytes_per_token=1.0)
    tb.set_bandwidth(0.0, tick=1.0)
    before = tb.tokens
    tb.replenish()
    assert tb.tokens == before


def test_try_admit_decrements():
    tb = TokenBucket(bytes_per_token=1.0)
    tb.set_bandwidth(5.0, tick=1.0)
    tb.replenish()
    assert tb.try_admit(4)
    assert tb.tokens == 1


def test_try_admit_insufficient_defers():
    tb = TokenBucket(bytes_per_token=1.0)
    tb.set_bandwidth(3.0, tick=1.0)
    tb.replenish()
    assert not tb.try_admit(4)
    assert tb.tokens == 3


def test_zero_size_request_free():
    tb = TokenBucket(bytes_per_token=1.0)
    tb.set_bandwidth(3.0, tick=1.0)
    tb.replenish()
    assert tb.try_admit(0)
    assert tb.tokens == 3


def test_cost_rounds_up():
    tb = TokenBucket(bytes_per_token=1024)
    assert tb.cost(1) == 1
    assert tb.cost(1024) == 1
    assert tb.cost(1025) == 2


def test_no_negative_balance():
    tb = TokenBucket(bytes_per_token=1.0)
    tb.set_bandwidth(2.0, tick=1.0)
    tb.replenish()
    for size in (1, 1, 1, 1):
        tb.try_admit(size)
        assert tb.tokens >= 0


def test_window_rate_bound():
    # Over M ticks with full demand, admitted bytes stay below the grant
    # plus one request of slack.
    tb = TokenBucket(bytes_per_token=KB)
    grant = 10_000.0  # bytes/second
    size = 3 * KB
    admitted = 0
    for _ in range(50):
        tb.set_bandwidth(grant, tick=1.0)
        tb.replenish()
        while tb.try_admit(size):
            admitted += size
    assert admitted <= 50 * grant + size


def test_validation():
    with pytest.raises(ValueError):
        TokenBucket(bytes_per_token=0)
    tb = TokenBucket()
    with pytest.raises(ValueError):
        tb.set_bandwidth(-1.0, tick=1.0)
