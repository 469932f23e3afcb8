"""qoco: write-back cache bandwidth control at desk scale.

A deterministic discrete-event simulator of a write-back storage cache,
a learned bandwidth controller with safe actions and an adaptive
recommendation band, rule-based comparators (watermark state machine,
latency bypass, no control), tail-latency metrics, and an experiment
harness that runs method x seed comparisons.
"""

from .baselines import BypassConfig, BypassRouter, CoToConfig, CoToController, no_control
from .collector import (
    ALL_STATES,
    BdpBand,
    Category,
    DiscreteState,
    DiscretizationConfig,
    Extreme,
    ProcessingBand,
    StateClass,
    StateCollector,
    StateSample,
    WatermarkBand,
    classify,
    discretize,
)
from .controller import (
    AdaptiveBound,
    ControllerDecision,
    DecisionRow,
    LQoCoConfig,
    LQoCoController,
    Source,
    bound_gate,
    load_decisions,
    save_decisions,
    update_bounds,
)
from .executor import TokenBucket
from .harness import ConfigError, ExperimentConfig, RunResult, compare, run, run_single
from .metrics import (
    LatencyAccumulator,
    MetricsReport,
    build_report,
    cache_full_windows,
    emit_report,
    export_timeseries,
    jitter,
    load_reports,
    percentile,
)
from .rl import (
    Action,
    DEFAULT_ACTION_RATES,
    ExperienceBuffer,
    Learner,
    LearnerConfig,
    QTable,
    RewardWeights,
    Transition,
    compute_reward,
    default_invalid_mask,
    load_qtable,
    make_cache_qtable,
    save_qtable,
    select_action,
    update_step,
)
from .simenv import (
    CacheModel,
    CacheSim,
    CompletedBatch,
    FlushProcess,
    RequestBatch,
    SimConfig,
    SystemSample,
    TraceFeeder,
    flush_draw,
    load_samples,
    save_samples,
)
from .workload import (
    CHANGING_SEQUENCE_IDS,
    STANDARD_WORKLOADS,
    IoRequest,
    Trace,
    WorkloadSequence,
    WorkloadSpec,
    build_changing_sequence,
    build_standard_spec,
    generate_trace,
    load_trace,
    save_trace,
)

__version__ = "0.1.0"
