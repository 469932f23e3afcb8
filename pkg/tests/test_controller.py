from __future__ import annotations

import math

import numpy as np
import pytest

from qoco.collector import (
    BdpBand,
    Category,
    DiscreteState,
    ProcessingBand,
    StateClass,
    StateSample,
    WatermarkBand,
    classify,
    discretize,
)
from qoco.controller import (
    AdaptiveBound,
    LQoCoConfig,
    LQoCoController,
    Source,
    bound_gate,
    load_decisions,
    save_decisions,
    update_bounds,
)
from qoco.rl import Action, Learner, LearnerConfig, make_cache_qtable

BETTER_CLS = StateClass(Category.BETTER)
GENERAL_CLS = StateClass(Category.GENERAL)


def make_controller(epsilon=0.0, lb=0.0, ub=math.inf, **cfg_kw) -> LQoCoController:
    learner = Learner(make_cache_qtable(), LearnerConfig(), np.random.default_rng(0))
    bound = AdaptiveBound(lb=lb, ub=ub)
    cfg_kw.setdefault("min_bandwidth", 1.0)
    return LQoCoController(learner, bound, LQoCoConfig(epsilon=epsilon, **cfg_kw),
                           np.random.default_rng(1))


def state_for(w, p, b):
    return StateSample(watermark=w, processing=p, bdp=b)


# -- bound gate -----------------------------------------------------------------


def test_gate_inside_band():
    b = AdaptiveBound(lb=50.0, ub=150.0)
    assert bound_gate(b, 100.0, 999.0) == (100.0, False)


def test_gate_above_band_holds_previous():
    b = AdaptiveBound(lb=50.0, ub=150.0)
    assert bound_gate(b, 200.0, 120.0) == (120.0, True)


def test_gate_degenerate_band_boundary_inclusive():
    b = AdaptiveBound(lb=100.0, ub=100.0)
    assert bound_gate(b, 100.0, 0.0) == (100.0, False)


# -- adaptive bound maintenance ----------------------------------------------------


def test_refresh_after_better_window():
    b = AdaptiveBound(lb=0.0, ub=1000.0, window=3, sigma=0.2)
    for rec in (90.0, 100.0, 110.0):
        update_bounds(b, rec, BETTER_CLS)
    assert b.lb == pytest.approx(80.0)
    assert b.ub == pytest.approx(120.0)
    assert b.C_b == 0


def test_refresh_band_geometry():
    b = AdaptiveBound(lb=0.0, ub=1000.0, window=3, sigma=0.15)
    for rec in (95.0, 100.0, 105.0):
        update_bounds(b, rec, BETTER_CLS)
    mean = 100.0
    assert b.lb < mean < b.ub
    assert (b.ub - b.lb) / mean == pytest.approx(2 * 0.15, rel=1e-9)


def test_cb_only_counts_better():
    b = AdaptiveBound(lb=0.0, ub=1000.0, window=3)
    update_bounds(b, 100.0, BETTER_CLS)
    update_bounds(b, 100.0, GENERAL_CLS)
    update_bounds(b, 100.0, BETTER_CLS)
    assert b.C_b == 2


def test_violation_recurrence_values():
    b = AdaptiveBound(lb=0.0, ub=100.0, delta=0.5, violation_threshold=0.99)
    update_bounds(b, 200.0, GENERAL_CLS)
    assert b.V_ub == pytest.approx(0.5)
    update_bounds(b, 200.0, GENERAL_CLS)
    assert b.V_ub == pytest.approx(0.75)
    update_bounds(b, 200.0, GENERAL_CLS)
    assert b.V_ub == pytest.approx(0.875)
    update_bounds(b, 200.0, GENERAL_CLS)
    assert b.V_ub == pytest.approx(0.9375)


def test_snap_on_fourth_violation():
    # 0.5 -> 0.75 -> 0.875 -> 0.9375 crosses v=0.9 at the 4th violation;
    # ub snaps to the previous recommendation and the accumulator resets.
    b = AdaptiveBound(lb=0.0, ub=100.0, delta=0.5, violation_threshold=0.9)
    recs = [200.0, 210.0, 220.0, 230.0]
    for rec in recs:
        update_bounds(b, rec, GENERAL_CLS)
    assert b.ub == pytest.approx(220.0)   # previous recommendation
    assert b.V_ub == 0.0


def test_lower_violation_snaps_lb():
    b = AdaptiveBound(lb=100.0, ub=1000.0, delta=0.5, violation_threshold=0.9)
    for rec in (10.0, 11.0, 12.0, 13.0):
        update_bounds(b, rec, GENERAL_CLS)
    assert b.lb == pytest.approx(12.0)
    assert b.V_lb == 0.0


def test_accumulator_increasing_and_capped_at_one():
    # The recurrence V <- (V - 1) * delta + 1 has fixed point 1: it rises
    # strictly until float rounding saturates it at exactly 1.0, so a snap
    # threshold v >= 1 can never fire.
    b = AdaptiveBound(lb=0.0, ub=1.0, delta=0.5, violation_threshold=1.0)
    prev = 0.0
    for _ in range(1000):
        update_bounds(b, 5.0, GENERAL_CLS)
        assert prev <= b.V_ub <= 1.0
        if prev < 1.0:
            assert b.V_ub > prev
        prev = b.V_ub
    assert b.ub == 1.0   # the snap branch never fired with v = 1


def test_in_band_recommendation_leaves_accumulators():
    b = AdaptiveBound(lb=0.0, ub=100.0)
    update_bounds(b, 50.0, GENERAL_CLS)
    assert b.V_ub == 0.0 and b.V_lb == 0.0


def test_bound_invariant_survives_snaps():
    b = AdaptiveBound(lb=50.0, ub=60.0, delta=0.5, violation_threshold=0.6)
    rng = np.random.default_rng(4)
    for _ in range(500):
        update_bounds(b, float(rng.uniform(0, 120)), GENERAL_CLS)
        assert b.lb <= b.ub


def test_bound_validation():
    with pytest.raises(ValueError):
        AdaptiveBound(lb=10.0, ub=5.0)
    with pytest.raises(ValueError):
        AdaptiveBound(lb=0.0, ub=1.0, delta=1.0)


# -- decide ----------------------------------------------------------------------


def test_extreme_high_severe_takes_fast_decrease():
    ctrl = make_controller()
    s = state_for(95.0, 0.0, 50.0)
    d = discretize(s)
    dec = ctrl.decide(d, classify(d), s, I_prev=1000.0)
    assert dec.action is Action.FAST_DECREASE
    assert dec.source is Source.SAFE_ACTION
    assert dec.recommended_I == pytest.approx(970.0)
    assert not dec.learn


def test_extreme_high_mild_takes_slow_decrease():
    ctrl = make_controller()
    s = state_for(85.0, 0.0, 50.0)
    d = discretize(s)
    dec = ctrl.decide(d, classify(d), s, I_prev=1000.0)
    assert dec.action is Action.SLOW_DECREASE
    assert dec.recommended_I == pytest.approx(990.0)


def test_extreme_low_severe_takes_fast_increase():
    ctrl = make_controller()
    s = state_for(2.0, 0.0, 50.0)
    d = discretize(s)
    dec = ctrl.decide(d, classify(d), s, I_prev=1000.0)
    assert dec.action is Action.FAST_INCREASE
    assert dec.recommended_I == pytest.approx(1030.0)
    assert not dec.learn


def test_extreme_low_mild_takes_slow_increase():
    ctrl = make_controller()
    s = state_for(8.0, 0.0, 50.0)
    d = discretize(s)
    dec = ctrl.decide(d, classify(d), s, I_prev=1000.0)
    assert dec.action is Action.SLOW_INCREASE


def test_overuse_severity_threshold():
    ctrl = make_controller()
    s = state_for(50.0, 0.0, 160.0)   # B >= 150 forces the fast decrease
    d = discretize(s)
    assert ctrl.decide(d, classify(d), s, 1000.0).action is Action.FAST_DECREASE
    ctrl2 = make_controller()
    s2 = state_for(50.0, 0.0, 120.0)
    d2 = discretize(s2)
    assert ctrl2.decide(d2, classify(d2), s2, 1000.0).action is Action.SLOW_DECREASE


def test_fine_tune_against_watermark_trend():
    ctrl = make_controller()
    s1 = state_for(55.0, 0.0, 50.0)
    d1 = discretize(s1)
    dec1 = ctrl.decide(d1, classify(d1), s1, 1000.0)
    assert dec1.source is Source.FINE_TUNE
    assert dec1.rate == 0.0   # no trend yet

    s2 = state_for(54.0, 0.0, 50.0)   # watermark fell: nudge bandwidth up
    d2 = discretize(s2)
    dec2 = ctrl.decide(d2, classify(d2), s2, 1000.0)
    assert dec2.recommended_I == pytest.approx(1001.0)
    assert not dec2.learn

    s3 = state_for(55.0, 0.0, 50.0)   # watermark rose: nudge down
    d3 = discretize(s3)
    dec3 = ctrl.decide(d3, classify(d3), s3, 1000.0)
    assert dec3.recommended_I == pytest.approx(999.0)


def test_fine_tune_dead_band():
    ctrl = make_controller()
    s1 = state_for(55.0, 0.0, 50.0)
    ctrl.decide(discretize(s1), classify(discretize(s1)), s1, 1000.0)
    s2 = state_for(55.05, 0.0, 50.0)  # within +-0.1 points
    dec = ctrl.decide(discretize(s2), classify(discretize(s2)), s2, 1000.0)
    assert dec.rate == 0.0


def test_fine_tune_magnitude_bounded():
    ctrl = make_controller()
    for w in (55.0, 52.0, 58.0, 51.0):
        s = state_for(w, 0.0, 50.0)
        d = discretize(s)
        dec = ctrl.decide(d, classify(d), s, 1000.0)
        assert abs(dec.executed_I / 1000.0 - 1.0) <= 0.001 + 1e-12


def test_policy_action_keep_learns():
    ctrl = make_controller(epsilon=0.0)
    s = state_for(20.0, 0.0, 50.0)   # (Low, Mid, Fulluse): the policy state
    d = discretize(s)
    cls = classify(d)
    assert cls.extreme is None and not cls.is_better
    dec = ctrl.decide(d, cls, s, 1000.0)
    assert dec.source is Source.POLICY
    assert dec.action is Action.KEEP   # all-zero table: tie-break picks Keep
    assert dec.recommended_I == pytest.approx(1000.0)
    assert dec.learn


def test_bound_rejection_disables_learning_and_holds():
    ctrl = make_controller(epsilon=0.0, lb=0.0, ub=900.0)
    s = state_for(20.0, 0.0, 50.0)
    d = discretize(s)
    dec = ctrl.decide(d, classify(d), s, 1000.0)   # Keep recommends 1000 > ub
    assert dec.bound_rejected
    assert dec.executed_I == 1000.0
    assert not dec.learn


def test_decide_rejects_nonpositive_bandwidth():
    ctrl = make_controller()
    s = state_for(50.0, 0.0, 50.0)
    d = discretize(s)
    with pytest.raises(ValueError):
        ctrl.decide(d, classify(d), s, 0.0)


def test_transition_stored_only_after_executed_policy_action():
    ctrl = make_controller(epsilon=0.0)
    s = state_for(20.0, 0.0, 50.0)
    d = discretize(s)
    dec = ctrl.decide(d, classify(d), s, 1000.0)
    assert dec.learn
    ctrl.observe_state(d)
    assert len(ctrl.learner.buffer) == 1
    tr = ctrl.learner.buffer.transitions[0]
    assert tr.s_prev == d and tr.a_prev is Action.KEEP

    # A safe action must not add experience.
    s2 = state_for(95.0, 0.0, 50.0)
    d2 = discretize(s2)
    ctrl.decide(d2, classify(d2), s2, 1000.0)
    ctrl.observe_state(d2)
    assert len(ctrl.learner.buffer) == 1


def test_reward_of_arrived_state_is_recorded():
    ctrl = make_controller(epsilon=0.0)
    s = state_for(20.0, 0.0, 50.0)
    d = discretize(s)
    ctrl.decide(d, classify(d), s, 1000.0)
    better = DiscreteState(WatermarkBand.MID, ProcessingBand.MID, BdpBand.FULLUSE)
    ctrl.observe_state(better)
    assert ctrl.learner.buffer.transitions[0].reward == pytest.approx(0.75)


def test_min_bandwidth_floor():
    ctrl = make_controller(min_bandwidth=500.0)
    s = state_for(95.0, 0.0, 50.0)
    d = discretize(s)
    dec = ctrl.decide(d, classify(d), s, I_prev=500.0)
    assert dec.recommended_I == 500.0   # 0.97 x 500 floored back up


# -- decision log round trip ---------------------------------------------------


def test_decision_log_round_trip(tmp_path):
    from qoco.controller import DecisionRow

    rows = [
        DecisionRow(0, "policy", "Keep", 100.0, 100.0, False, True, 20.0, 500.0),
        DecisionRow(1, "safe_action", "FastDecrease", 97.0, 97.0, False, False, 20.0, 500.0),
        DecisionRow(2, "none", "Keep", math.inf, math.inf, False, False, 0.0, math.inf),
    ]
    path = tmp_path / "dec.csv"
    save_decisions(rows, path)
    assert load_decisions(path) == rows
