"""Tabular Q-learning with prioritized replay and a target table.

The learner is online: each tick contributes one transition, stored at
the current maximum priority.  Every ``prune_period`` ticks the buffer
keeps only its top-``capacity`` priorities; every ``update_period``
ticks a prioritized mini-batch updates the real table (double-Q target
through the target table) and the target table is refreshed.

Invalid (state, action) pairs encode domain knowledge: near-overload
states never offer an increase, starved states never offer a decrease.
Masked actions are never selected and never enter the bootstrap argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .collector import (
    ALL_STATES,
    BdpBand,
    DiscreteState,
    DiscretizationConfig,
    Extreme,
    ProcessingBand,
    WatermarkBand,
    classify,
)

QTABLE_HEADER = "#qoco-qtable v1"


class Action(Enum):
    FAST_DECREASE = "FastDecrease"
    SLOW_DECREASE = "SlowDecrease"
    KEEP = "Keep"
    SLOW_INCREASE = "SlowIncrease"
    FAST_INCREASE = "FastIncrease"


DEFAULT_ACTION_RATES: dict[Action, float] = {
    Action.FAST_DECREASE: -0.03,
    Action.SLOW_DECREASE: -0.01,
    Action.KEEP: 0.0,
    Action.SLOW_INCREASE: 0.01,
    Action.FAST_INCREASE: 0.03,
}

INCREASE_ACTIONS = (Action.SLOW_INCREASE, Action.FAST_INCREASE)
DECREASE_ACTIONS = (Action.SLOW_DECREASE, Action.FAST_DECREASE)


def validate_action_rates(rates: dict[Action, float]) -> None:
    if rates[Action.KEEP] != 0.0:
        raise ValueError("Keep must adjust by exactly 0")
    ordered = [
        rates[Action.FAST_DECREASE],
        rates[Action.SLOW_DECREASE],
        rates[Action.KEEP],
        rates[Action.SLOW_INCREASE],
        rates[Action.FAST_INCREASE],
    ]
    if not all(a < b for a, b in zip(ordered, ordered[1:])):
        raise ValueError("action magnitudes must be strictly ordered")


def action_preference(rates: dict[Action, float] | None = None) -> tuple[Action, ...]:
    """Tie-break order: smallest adjustment first, decrease before increase."""
    rates = rates or DEFAULT_ACTION_RATES
    return tuple(sorted(rates, key=lambda a: (abs(rates[a]), rates[a] > 0)))


@dataclass(frozen=True)
class RewardWeights:
    f_w: float = 0.5
    f_p: float = 0.25
    f_b: float = 0.25

    def __post_init__(self):
        if min(self.f_w, self.f_p, self.f_b) < 0:
            raise ValueError("weights must be nonnegative")
        if abs(self.f_w + self.f_p + self.f_b - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")


# Per-band reward contributions: Mid watermark and Fulluse are the target
# operating point; High watermark, Overuse and any non-Mid processing
# imbalance are penalized.
_W_VALUE = {
    WatermarkBand.EXTREMELY_LOW: 0.0,
    WatermarkBand.LOW: 0.0,
    WatermarkBand.MID: 1.0,
    WatermarkBand.HIGH: -1.0,
}
_P_VALUE = {
    ProcessingBand.LOW: -1.0,
    ProcessingBand.MID: 0.0,
    ProcessingBand.HIGH: -1.0,
}
_B_VALUE = {
    BdpBand.UNDERUSE: 0.0,
    BdpBand.FULLUSE: 1.0,
    BdpBand.OVERUSE: -1.0,
}


def compute_reward(
    s_next: DiscreteState,
    weights: RewardWeights | None = None,
    mode: str = "table2",
) -> float:
    """Reward of the arrived-at state.

    ``table2`` scores each band by the per-dimension value table.  ``eq8``
    is the quadratic index form, which peaks (at 0) when every index is
    maximal; the two disagree about which watermark band is best, so the
    mode is explicit.
    """
    w = weights or RewardWeights()
    if mode == "table2":
        return (
            w.f_w * _W_VALUE[s_next.w]
            + w.f_p * _P_VALUE[s_next.p]
            + w.f_b * _B_VALUE[s_next.b]
        )
    if mode == "eq8":
        n_w = len(WatermarkBand) - 1
        n_p = len(ProcessingBand) - 1
        n_b = len(BdpBand) - 1
        return (
            w.f_w * (int(s_next.w) ** 2 / n_w**2 - 1.0)
            + w.f_p * (int(s_next.p) ** 2 / n_p**2 - 1.0)
            + w.f_b * (int(s_next.b) ** 2 / n_b**2 - 1.0)
        )
    raise ValueError(f"unknown reward mode {mode!r}")


class QTable:
    """Dense state x action value table with an invalid-action mask.

    States and actions are arbitrary hashables; ``preference`` fixes the
    deterministic tie-break order for argmax (defaults to listed action
    order).
    """

    def __init__(self, states, actions, preference=None, invalid=()):
        self.states = tuple(states)
        self.actions = tuple(actions)
        self.values: dict = {(s, a): 0.0 for s in self.states for a in self.actions}
        self.invalid = set(invalid)
        pref = tuple(preference) if preference is not None else self.actions
        self._pref_rank = {a: i for i, a in enumerate(pref)}

    def __getitem__(self, key) -> float:
        return self.values[key]

    def __setitem__(self, key, value: float) -> None:
        if key not in self.values:
            raise KeyError(key)
        self.values[key] = float(value)

    def valid_actions(self, s) -> list:
        return [a for a in self.actions if (s, a) not in self.invalid]

    def argmax(self, s):
        """Best unmasked action; ties resolve by the preference order."""
        best = None
        best_key = None
        for a in self.actions:
            if (s, a) in self.invalid:
                continue
            key = (-self.values[(s, a)], self._pref_rank[a])
            if best_key is None or key < best_key:
                best_key = key
                best = a
        if best is None:
            raise ValueError(f"all actions masked for state {s!r}")
        return best

    def best_value(self, s) -> float:
        return self.values[(s, self.argmax(s))]

    def copy_values_from(self, other: "QTable") -> None:
        self.values = dict(other.values)

    def clone(self) -> "QTable":
        out = QTable(self.states, self.actions, invalid=set(self.invalid))
        out._pref_rank = dict(self._pref_rank)
        out.values = dict(self.values)
        return out


def select_action(q: QTable, s, epsilon: float, rng: np.random.Generator):
    """Epsilon-greedy over unmasked actions."""
    valid = q.valid_actions(s)
    if not valid:
        raise ValueError(f"all actions masked for state {s!r}")
    if epsilon > 0 and rng.random() < epsilon:
        return valid[int(rng.integers(len(valid)))]
    return q.argmax(s)


def default_invalid_mask() -> set[tuple[DiscreteState, Action]]:
    """Domain-knowledge mask over the 36 cache states."""
    mask = set()
    for s in ALL_STATES:
        cls = classify(s)
        if cls.extreme is Extreme.HIGH:
            mask.update((s, a) for a in INCREASE_ACTIONS)
        elif cls.extreme is Extreme.LOW:
            mask.update((s, a) for a in DECREASE_ACTIONS)
    return mask


def make_cache_qtable(
    rates: dict[Action, float] | None = None,
    invalid=None,
) -> QTable:
    """Fresh all-zero table over the 36 discrete cache states."""
    mask = default_invalid_mask() if invalid is None else set(invalid)
    return QTable(ALL_STATES, tuple(Action), preference=action_preference(rates), invalid=mask)


# -- experience -------------------------------------------------------------


@dataclass(slots=True)
class Transition:
    s_prev: object
    a_prev: object
    reward: float
    s_next: object
    priority: float = 1.0


class ExperienceBuffer:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.transitions: list[Transition] = []
        self._max_priority = 0.0

    def __len__(self) -> int:
        return len(self.transitions)

    def store(self, s_prev, a_prev, reward, s_next) -> Transition:
        """New experience enters at the current max priority (1 when empty)."""
        priority = self._max_priority if self.transitions else 1.0
        tr = Transition(s_prev, a_prev, float(reward), s_next, priority)
        self.transitions.append(tr)
        self._max_priority = max(self._max_priority, priority)
        return tr

    def prune(self) -> None:
        """Keep the ``capacity`` highest-priority transitions, oldest first."""
        if len(self.transitions) <= self.capacity:
            return
        ranked = sorted(
            range(len(self.transitions)),
            key=lambda i: (-self.transitions[i].priority, i),
        )[: self.capacity]
        ranked.sort()
        self.transitions = [self.transitions[i] for i in ranked]
        self.refresh_max()

    def refresh_max(self) -> None:
        self._max_priority = max((t.priority for t in self.transitions), default=0.0)


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.9          # discount
    eta: float = 0.1            # learning rate
    alpha: float = 0.6          # prioritization exponent
    beta: float = 0.4           # importance-sampling anneal
    batch_size: int = 32        # k
    prune_period: int = 100     # K, ticks between buffer prunes
    update_period: int = 50     # T, ticks between table updates
    capacity: int = 10_000      # N, buffer capacity
    epsilon: float = 0.14       # exploration probability

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.batch_size < 1 or self.batch_size > self.capacity:
            raise ValueError("need 1 <= batch_size <= capacity")
        if self.prune_period < 1 or self.update_period < 1:
            raise ValueError("periods must be >= 1")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must be in [0, 1]")


def update_step(
    q_real: QTable,
    q_target: QTable,
    buf: ExperienceBuffer,
    cfg: LearnerConfig,
    rng: np.random.Generator,
) -> list[float]:
    """One prioritized mini-batch of double-Q updates.

    Sampling is proportional to priority**alpha; importance weights are
    normalized by the batch maximum.  Each sampled transition's priority
    becomes |TD error|.  Returns the TD errors (diagnostics).
    """
    trs = buf.transitions
    if not trs:
        return []
    pri = np.array([t.priority for t in trs], dtype=np.float64) ** cfg.alpha
    total = pri.sum()
    if total > 0:
        probs = pri / total
    else:
        # Every stored |TD error| is exactly zero: sample uniformly.
        probs = np.full(len(trs), 1.0 / len(trs))
    idx = rng.choice(len(trs), size=cfg.batch_size, replace=True, p=probs)
    raw_w = (cfg.capacity * probs[idx]) ** (-cfg.beta)
    weights = raw_w / raw_w.max()

    deltas = []
    for j, w_j in zip(idx, weights):
        tr = trs[j]
        a_star = q_real.argmax(tr.s_next)
        delta = (
            tr.reward
            + cfg.gamma * q_target[(tr.s_next, a_star)]
            - q_real[(tr.s_prev, tr.a_prev)]
        )
        tr.priority = abs(delta)
        q_real[(tr.s_prev, tr.a_prev)] += cfg.eta * w_j * delta
        deltas.append(delta)
    buf.refresh_max()
    return deltas


class Learner:
    """Drives the online store/prune/update/copy schedule."""

    def __init__(self, q_real: QTable, cfg: LearnerConfig, rng: np.random.Generator):
        self.q_real = q_real
        self.q_target = q_real.clone()
        self.cfg = cfg
        self.rng = rng
        self.buffer = ExperienceBuffer(cfg.capacity)
        self.updates_applied = 0

    def select(self, s):
        return select_action(self.q_real, s, self.cfg.epsilon, self.rng)

    def observe(self, s_prev, a_prev, reward, s_next) -> None:
        self.buffer.store(s_prev, a_prev, reward, s_next)

    def on_tick(self, t: int) -> None:
        """Run the periodic buffer and table maintenance for tick ``t``."""
        if t % self.cfg.prune_period == 0:
            self.buffer.prune()
        if t % self.cfg.update_period == 0 and self.buffer.transitions:
            deltas = update_step(self.q_real, self.q_target, self.buffer, self.cfg, self.rng)
            self.updates_applied += len(deltas)
            self.q_target.copy_values_from(self.q_real)


# -- persistence ------------------------------------------------------------


_W_LABEL = {
    WatermarkBand.EXTREMELY_LOW: "ExtremelyLow",
    WatermarkBand.LOW: "Low",
    WatermarkBand.MID: "Mid",
    WatermarkBand.HIGH: "High",
}
_P_LABEL = {
    ProcessingBand.LOW: "Low",
    ProcessingBand.MID: "Mid",
    ProcessingBand.HIGH: "High",
}
_B_LABEL = {
    BdpBand.UNDERUSE: "Underuse",
    BdpBand.FULLUSE: "Fulluse",
    BdpBand.OVERUSE: "Overuse",
}
_W_FROM_LABEL = {v: k for k, v in _W_LABEL.items()}
_P_FROM_LABEL = {v: k for k, v in _P_LABEL.items()}
_B_FROM_LABEL = {v: k for k, v in _B_LABEL.items()}
_ACTION_FROM_LABEL = {a.value: a for a in Action}


def _bands_line(cfg: DiscretizationConfig) -> str:
    w = ",".join(repr(x) for x in cfg.watermark_edges)
    p = ",".join(repr(x) for x in cfg.processing_edges)
    b = ",".join(repr(x) for x in cfg.bdp_edges)
    return f"# bands: w={w};p={p};b={b}"


def save_qtable(q: QTable, path, bands: DiscretizationConfig | None = None) -> None:
    """Write the 36x5 table; masked pairs serialize as INVALID."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(QTABLE_HEADER + "\n")
        if bands is not None:
            f.write(_bands_line(bands) + "\n")
        for s in q.states:
            for a in q.actions:
                cell = "INVALID" if (s, a) in q.invalid else repr(q.values[(s, a)])
                f.write(f"{_W_LABEL[s.w]},{_P_LABEL[s.p]},{_B_LABEL[s.b]},{a.value},{cell}\n")


def load_qtable(path, bands: DiscretizationConfig | None = None) -> QTable:
    """Read a table written by :func:`save_qtable`.

    If ``bands`` is given and the file carries a bands line, the two must
    match exactly (a table learned under one discretization is
    meaningless under another).
    """
    values: dict = {}
    invalid = set()
    file_bands_line = None
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
        if first != QTABLE_HEADER:
            raise ValueError(f"{path}: expected header {QTABLE_HEADER!r}, got {first!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# bands:"):
                    file_bands_line = line
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ValueError(f"{path}: line {lineno}: expected 5 columns")
            w_l, p_l, b_l, a_l, cell = parts
            try:
                state = DiscreteState(_W_FROM_LABEL[w_l], _P_FROM_LABEL[p_l], _B_FROM_LABEL[b_l])
            except KeyError as e:
                raise ValueError(f"{path}: line {lineno}: unknown state label {e.args[0]!r}") from None
            action = _ACTION_FROM_LABEL.get(a_l)
            if action is None:
                raise ValueError(f"{path}: line {lineno}: unknown action label {a_l!r}")
            if cell == "INVALID":
                invalid.add((state, action))
            else:
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(f"{path}: line {lineno}: bad value {cell!r}") from None
                if not math.isfinite(value):
                    raise ValueError(f"{path}: line {lineno}: non-finite value")
                values[(state, action)] = value
    if bands is not None and file_bands_line is not None and file_bands_line != _bands_line(bands):
        raise ValueError(
            f"{path}: discretization mismatch: table was saved with {file_bands_line!r}"
        )
    q = make_cache_qtable(invalid=invalid)
    for key, value in values.items():
        q[key] = value
    return q
