"""Learned bandwidth controller: safe actions, fine tuning, policy, bound.

Per tick the decision source is, in precedence order:

* extreme-high states force a decrease, extreme-low states force an
  increase (magnitude scales with severity); the policy is not consulted
  and not updated,
* better states get a +-0.1% fine tune against the watermark trend,
* everything else is an epsilon-greedy policy action.

The resulting recommendation is gated by an adaptive [lb, ub] band: an
out-of-band recommendation is not executed (the previous bandwidth
holds) and contributes no learning.  The band follows the recommendation
stream: a long stretch of better states re-centers it around the recent
mean, while repeated violations on one side push that side toward the
violating level.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .collector import BdpBand, DiscreteState, StateClass, StateSample, WatermarkBand
from .rl import (
    Action,
    DEFAULT_ACTION_RATES,
    Learner,
    RewardWeights,
    compute_reward,
    select_action,
    validate_action_rates,
)

DECISIONS_HEADER = "#qoco-decisions v1"


@dataclass
class AdaptiveBound:
    """State of the adaptive recommendation band.

    ``V_ub``/``V_lb`` follow the recurrence V <- (V - 1) * delta + 1 on a
    violation; starting from 0 the sequence increases toward 1, so the
    snap threshold ``v`` must be < 1 to ever fire.
    """

    lb: float
    ub: float
    window: int = 30                  # N: better-ticks needed for a refresh
    violation_threshold: float = 0.9  # v
    sigma: float = 0.15               # half-width fraction on refresh
    delta: float = 0.5                # violation accumulator decay
    C_b: int = 0
    V_ub: float = 0.0
    V_lb: float = 0.0
    history: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if self.lb > self.ub:
            raise ValueError("need lb <= ub")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        maxlen = max(self.window, 2)
        self.history = deque(self.history, maxlen=maxlen)


def bound_gate(bound: AdaptiveBound, recommended: float, I_prev: float) -> tuple[float, bool]:
    """Execute the recommendation only inside [lb, ub]; otherwise hold."""
    if bound.lb <= recommended <= bound.ub:
        return recommended, False
    return I_prev, True


def update_bounds(bound: AdaptiveBound, recommended: float, cls: Optional[StateClass]) -> None:
    """Per-tick band maintenance; runs unconditionally, every tick."""
    bound.history.append(recommended)
    if cls is not None and cls.is_better:
        bound.C_b += 1
    if recommended > bound.ub:
        bound.V_ub = (bound.V_ub - 1.0) * bound.delta + 1.0
    if recommended < bound.lb:
        bound.V_lb = (bound.V_lb - 1.0) * bound.delta + 1.0

    if bound.C_b >= bound.window:
        recent = list(bound.history)[-bound.window:]
        mean = sum(recent) / len(recent)
        bound.lb = mean * (1.0 - bound.sigma)
        bound.ub = mean * (1.0 + bound.sigma)
        bound.C_b = 0

    prev = bound.history[-2] if len(bound.history) >= 2 else bound.history[-1]
    if bound.V_lb > bound.violation_threshold:
        # Clamp keeps lb <= ub even if the two violation streams interleave.
        bound.lb = min(prev, bound.ub)
        bound.V_lb = 0.0
    if bound.V_ub > bound.violation_threshold:
        bound.ub = max(prev, bound.lb)
        bound.V_ub = 0.0


class Source(Enum):
    POLICY = "policy"
    SAFE_ACTION = "safe_action"
    FINE_TUNE = "fine_tune"


@dataclass(frozen=True)
class ControllerDecision:
    recommended_I: float
    executed_I: float
    rate: float                      # applied adjustment fraction
    action: Optional[Action]         # None for fine-tune ticks
    source: Source
    bound_rejected: bool
    learn: bool


@dataclass(frozen=True)
class LQoCoConfig:
    action_rates: dict = field(default_factory=lambda: dict(DEFAULT_ACTION_RATES))
    epsilon: float = 0.14
    reward_weights: RewardWeights = field(default_factory=RewardWeights)
    reward_mode: str = "table2"
    fine_tune_rate: float = 0.001
    fine_tune_deadband: float = 0.1     # watermark percentage points
    # Severity thresholds choosing the fast safe action over the slow one.
    fast_decrease_watermark: float = 90.0
    fast_overuse_bdp: float = 150.0
    fast_increase_watermark: float = 5.0
    fast_underuse_bdp: float = 5.0
    min_bandwidth: float = 1024.0       # bytes/second floor on recommendations

    def __post_init__(self):
        validate_action_rates(self.action_rates)
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must be in [0, 1]")
        if self.fine_tune_rate <= 0:
            raise ValueError("fine_tune_rate must be positive")


class LQoCoController:
    """One decision loop instance: owns its learner, band and RNG."""

    def __init__(
        self,
        learner: Learner,
        bound: AdaptiveBound,
        cfg: LQoCoConfig | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.learner = learner
        self.bound = bound
        self.cfg = cfg or LQoCoConfig()
        self.rng = rng or np.random.default_rng()
        self.prev_watermark: Optional[float] = None
        self._pending: Optional[tuple[DiscreteState, Action]] = None

    def observe_state(self, d_now: DiscreteState) -> None:
        """Close out the previous tick's policy action as experience."""
        if self._pending is None:
            return
        d_prev, a_prev = self._pending
        self._pending = None
        reward = compute_reward(d_now, self.cfg.reward_weights, self.cfg.reward_mode)
        self.learner.observe(d_prev, a_prev, reward, d_now)

    def _safe_action(self, d: DiscreteState, s: StateSample, cls: StateClass) -> Action:
        c = self.cfg
        if cls.is_extreme_high:
            fast = (
                d.w is WatermarkBand.HIGH and s.watermark >= c.fast_decrease_watermark
            ) or (d.b is BdpBand.OVERUSE and s.bdp >= c.fast_overuse_bdp)
            return Action.FAST_DECREASE if fast else Action.SLOW_DECREASE
        fast = (
            d.w is WatermarkBand.EXTREMELY_LOW and s.watermark <= c.fast_increase_watermark
        ) or (d.b is BdpBand.UNDERUSE and s.bdp <= c.fast_underuse_bdp)
        return Action.FAST_INCREASE if fast else Action.SLOW_INCREASE

    def decide(
        self,
        d: DiscreteState,
        cls: StateClass,
        s: StateSample,
        I_prev: float,
    ) -> ControllerDecision:
        if I_prev <= 0:
            raise ValueError("I_prev must be positive (executor maintains the floor)")
        c = self.cfg
        action: Optional[Action] = None
        if cls.extreme is not None:
            action = self._safe_action(d, s, cls)
            rate = c.action_rates[action]
            source = Source.SAFE_ACTION
        elif cls.is_better:
            source = Source.FINE_TUNE
            if self.prev_watermark is None:
                rate = 0.0
            else:
                dw = s.watermark - self.prev_watermark
                if dw < -c.fine_tune_deadband:
                    rate = c.fine_tune_rate
                elif dw > c.fine_tune_deadband:
                    rate = -c.fine_tune_rate
                else:
                    rate = 0.0
        else:
            action = select_action(self.learner.q_real, d, c.epsilon, self.rng)
            rate = c.action_rates[action]
            source = Source.POLICY

        recommended = max((1.0 + rate) * I_prev, c.min_bandwidth)
        executed, rejected = bound_gate(self.bound, recommended, I_prev)
        learn = source is Source.POLICY and not rejected
        self._pending = (d, action) if learn else None
        self.prev_watermark = s.watermark
        return ControllerDecision(
            recommended_I=recommended,
            executed_I=executed,
            rate=rate,
            action=action,
            source=source,
            bound_rejected=rejected,
            learn=learn,
        )


# -- decision logs -----------------------------------------------------------


@dataclass(frozen=True)
class DecisionRow:
    t: int
    source: str
    action: str
    recommended_I: float
    executed_I: float
    bound_rejected: bool
    learn: bool
    lb: float
    ub: float


def save_decisions(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(DECISIONS_HEADER + "\n")
        for r in rows:
            f.write(
                f"{r.t},{r.source},{r.action},{r.recommended_I!r},{r.executed_I!r},"
                f"{int(r.bound_rejected)},{int(r.learn)},{r.lb!r},{r.ub!r}\n"
            )


def load_decisions(path) -> list[DecisionRow]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if first.strip() != DECISIONS_HEADER:
            raise ValueError(f"{path}: expected header {DECISIONS_HEADER!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 9:
                raise ValueError(f"{path}: line {lineno}: expected 9 columns")
            out.append(
                DecisionRow(
                    t=int(parts[0]),
                    source=parts[1],
                    action=parts[2],
                    recommended_I=float(parts[3]),
                    executed_I=float(parts[4]),
                    bound_rejected=bool(int(parts[5])),
                    learn=bool(int(parts[6])),
                    lb=float(parts[7]),
                    ub=float(parts[8]),
                )
            )
    return out
