"""Experiment runner: config files, the per-tick driver, and comparisons.

A config is a sectioned key/value text file (INI syntax).  Unknown
sections or keys are errors: silent typos in control experiments are
costly.  Every module default can be overridden; the experiment section
picks the workload, methods and seeds.

Each (method, seed) run is fully determined by the config: the trace and
the flush realization derive from the seed alone (so methods face
identical conditions), the policy RNG additionally from the method.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .baselines import BypassConfig, BypassRouter, CoToConfig, CoToController
from .collector import DiscretizationConfig, StateCollector, classify, discretize
from .controller import (
    AdaptiveBound,
    DecisionRow,
    LQoCoConfig,
    LQoCoController,
    save_decisions,
    update_bounds,
)
from .executor import TokenBucket
from .metrics import (
    LatencyAccumulator,
    MetricsReport,
    build_report,
    emit_report,
    export_timeseries,
)
from .rl import (
    Action,
    Learner,
    LearnerConfig,
    RewardWeights,
    load_qtable,
    make_cache_qtable,
    save_qtable,
)
from .simenv import (
    CacheModel,
    CacheSim,
    FlushProcess,
    SimConfig,
    TraceFeeder,
    save_samples,
)
from .workload import (
    CHANGING_SEQUENCE_IDS,
    Trace,
    WorkloadSequence,
    WorkloadSpec,
    build_changing_sequence,
    build_standard_spec,
    generate_trace,
    load_trace,
)

METHODS = ("none", "bypass", "coto", "lqoco")

# Seed-stream tags: the trace namespace is the bare seed (shared by all
# methods), flush gets its own stream, each method its own policy stream.
_FLUSH_STREAM = 9001
_POLICY_STREAM = 9002


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip() != "")


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip() != "")


def _parse_strs(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip() != "")


_SCHEMA: dict[str, dict[str, object]] = {
    "experiment": {
        "workload": str,
        "methods": _parse_strs,
        "seeds": _parse_ints,
        "duration": float,
        "phase_duration": float,
        "arrival": str,
        "offered_rate": float,
        "offered_load_factor": _parse_floats,
        "initial_bandwidth": float,
        "write_logs": _parse_bool,
        "write_timeseries": _parse_bool,
        "qtable_path": str,
    },
    "sim": {
        "tick": float,
        "cache_service": float,
        "storage_service": float,
        "cache_capacity": float,
        "overload_threshold": float,
        "collapse_efficiency": float,
        "recovery_threshold": float,
    },
    "flush": {
        "base_bandwidth": float,
        "noise_cv": float,
        "dip_rate": float,
        "dip_depth": float,
        "dip_duration": float,
    },
    "collector": {
        "watermark_edges": _parse_floats,
        "processing_edges": _parse_floats,
        "bdp_edges": _parse_floats,
        "bdp_max_decay": float,
    },
    "learner": {
        "gamma": float,
        "eta": float,
        "alpha": float,
        "beta": float,
        "batch_size": int,
        "prune_period": int,
        "update_period": int,
        "capacity": int,
    },
    "controller": {
        "epsilon": float,
        "reward_mode": str,
        "f_w": float,
        "f_p": float,
        "f_b": float,
        "fine_tune_rate": float,
        "fine_tune_deadband": float,
        "fast_decrease_watermark": float,
        "fast_overuse_bdp": float,
        "fast_increase_watermark": float,
        "fast_underuse_bdp": float,
        "min_bandwidth": float,
        "action_fast_decrease": float,
        "action_slow_decrease": float,
        "action_slow_increase": float,
        "action_fast_increase": float,
        "bound_lb_factor": float,
        "bound_ub_factor": float,
        "bound_window": int,
        "bound_violation_threshold": float,
        "bound_sigma": float,
        "bound_delta": float,
    },
    "coto": {
        "band_low": float,
        "band_high": float,
        "base_rate": float,
        "floor": float,
    },
    "bypass": {
        "latency_threshold": float,
        "window": int,
    },
    "executor": {
        "bytes_per_token": float,
    },
    "metrics": {
        "window": float,
    },
}

_DEFAULTS: dict[str, dict[str, object]] = {
    "experiment": {
        "workload": "S-3",
        "methods": ("none", "lqoco"),
        "seeds": (1,),
        "duration": 1500.0,
        "phase_duration": 150.0,
        "arrival": "poisson",
        "offered_rate": None,
        "offered_load_factor": (1.5,),
        "initial_bandwidth": None,
        "write_logs": True,
        "write_timeseries": False,
        "qtable_path": None,
    },
    "sim": {
        "tick": 1.0,
        "cache_service": 0.0001,
        "storage_service": 0.002,
        "cache_capacity": 32.0 * 1024 * 1024,
        # Admission is request-granular, so occupancy approaches but never
        # lands exactly on 100%; the overload line sits below that.
        "overload_threshold": 95.0,
        # Overload episodes waste capacity (blocked writers, destage
        # contention), so experiments default below the pure drain limit,
        # and the degradation persists until occupancy falls to a recovery
        # mark (high/low watermark hysteresis).
        "collapse_efficiency": 0.5,
        "recovery_threshold": 85.0,
    },
    "flush": {
        "base_bandwidth": 1024.0 * 1024,
        "noise_cv": 0.1,
        "dip_rate": 0.02,
        "dip_depth": 0.8,
        "dip_duration": 8.0,
    },
    "collector": {
        "watermark_edges": (10.0, 30.0, 80.0),
        "processing_edges": (-0.1, 0.1),
        "bdp_edges": (15.0, 100.0),
        "bdp_max_decay": 0.999,
    },
    "learner": {
        "gamma": 0.9,
        "eta": 0.1,
        "alpha": 0.6,
        "beta": 0.4,
        "batch_size": 32,
        "prune_period": 100,
        "update_period": 50,
        "capacity": 10_000,
    },
    "controller": {
        "epsilon": 0.14,
        "reward_mode": "table2",
        "f_w": 0.5,
        "f_p": 0.25,
        "f_b": 0.25,
        "fine_tune_rate": 0.001,
        "fine_tune_deadband": 0.1,
        "fast_decrease_watermark": 90.0,
        "fast_overuse_bdp": 150.0,
        "fast_increase_watermark": 5.0,
        "fast_underuse_bdp": 5.0,
        "min_bandwidth": 1024.0,
        "action_fast_decrease": -0.03,
        "action_slow_decrease": -0.01,
        "action_slow_increase": 0.01,
        "action_fast_increase": 0.03,
        "bound_lb_factor": 0.2,
        "bound_ub_factor": 5.0,
        "bound_window": 30,
        "bound_violation_threshold": 0.9,
        "bound_sigma": 0.15,
        "bound_delta": 0.5,
    },
    "coto": {
        "band_low": 20.0,
        "band_high": 80.0,
        "base_rate": 0.05,
        "floor": 1024.0,
    },
    "bypass": {
        "latency_threshold": 0.001,
        "window": 100,
    },
    "executor": {
        "bytes_per_token": 1024.0,
    },
    "metrics": {
        "window": 150.0,
    },
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {sec: dict(kv) for sec, kv in _DEFAULTS.items()}
        for sec, kv in self.values.items():
            if sec not in merged:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, val in kv.items():
                if key not in _SCHEMA[sec]:
                    raise ConfigError(f"unknown config key [{sec}] {key}")
                merged[sec][key] = val
        self.values = merged
        self.validate()

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def validate(self) -> None:
        exp = self["experiment"]
        if not exp["methods"]:
            raise ConfigError("[experiment] methods must name at least one method")
        for m in exp["methods"]:
            if m not in METHODS:
                raise ConfigError(f"[experiment] unknown method {m!r}; valid: {METHODS}")
        if not exp["seeds"]:
            raise ConfigError("[experiment] seeds must name at least one seed")
        wl = exp["workload"]
        if wl.startswith("trace:"):
            path = wl[len("trace:"):]
            if not os.path.exists(path):
                raise ConfigError(f"[experiment] workload trace file not found: {path}")
        if exp["qtable_path"] is not None and not os.path.exists(exp["qtable_path"]):
            raise ConfigError(f"[experiment] qtable_path not found: {exp['qtable_path']}")

    # -- typed builders ------------------------------------------------

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        values: dict = {}
        for sec in parser.sections():
            if sec not in _SCHEMA:
                raise ConfigError(f"{path}: unknown config section [{sec}]")
            values[sec] = {}
            for key, raw in parser.items(sec):
                conv = _SCHEMA[sec].get(key)
                if conv is None:
                    raise ConfigError(f"{path}: unknown config key [{sec}] {key}")
                try:
                    values[sec][key] = conv(raw)
                except ValueError as e:
                    raise ConfigError(f"{path}: bad value for [{sec}] {key}: {e}") from None
        return ExperimentConfig(values)

    def offered_rate_for(self, spec_io_size: int, phase_index: int = 0) -> float:
        exp = self["experiment"]
        if exp["offered_rate"] is not None:
            return exp["offered_rate"]
        factors = exp["offered_load_factor"]
        factor = factors[phase_index % len(factors)]
        return factor * self["flush"]["base_bandwidth"] / spec_io_size

    def build_workload(self) -> WorkloadSpec | WorkloadSequence | Trace:
        exp = self["experiment"]
        name = exp["workload"]
        if name.startswith("trace:"):
            return load_trace(name[len("trace:"):])
        if name == "changing":
            rates = [
                self.offered_rate_for(build_standard_spec(wid, 1.0, 1.0).io_size, k)
                for k, wid in enumerate(CHANGING_SEQUENCE_IDS)
            ]
            return build_changing_sequence(exp["phase_duration"], rates, exp["arrival"])
        probe = build_standard_spec(name, exp["duration"], 1.0, exp["arrival"])
        return build_standard_spec(
            name, exp["duration"], self.offered_rate_for(probe.io_size), exp["arrival"]
        )

    def workload_label(self) -> str:
        name = self["experiment"]["workload"]
        return os.path.basename(name[len("trace:"):]) if name.startswith("trace:") else name

    def total_duration(self) -> float:
        exp = self["experiment"]
        if exp["workload"] == "changing":
            return exp["phase_duration"] * 9
        if exp["workload"].startswith("trace:"):
            trace = load_trace(exp["workload"][len("trace:"):])
            if len(trace) == 0:
                return exp["duration"]
            return float(np.ceil(trace.times[-1] + self["sim"]["tick"]))
        return exp["duration"]

    def build_sim_config(self, seed: int) -> SimConfig:
        sim = self["sim"]
        return SimConfig(
            tick=sim["tick"],
            cache_service=sim["cache_service"],
            storage_service=sim["storage_service"],
            total_duration=self.total_duration(),
            seed=seed,
        )

    def build_flush(self, seed: int) -> FlushProcess:
        fl = self["flush"]
        derived = int(np.random.SeedSequence([seed, _FLUSH_STREAM]).generate_state(1)[0])
        return FlushProcess(
            base_bandwidth=fl["base_bandwidth"],
            noise_cv=fl["noise_cv"],
            dip_rate=fl["dip_rate"],
            dip_depth=fl["dip_depth"],
            dip_duration=fl["dip_duration"],
            seed=derived,
        )

    def build_bands(self) -> DiscretizationConfig:
        col = self["collector"]
        return DiscretizationConfig(
            watermark_edges=tuple(col["watermark_edges"]),
            processing_edges=tuple(col["processing_edges"]),
            bdp_edges=tuple(col["bdp_edges"]),
            bdp_max_decay=col["bdp_max_decay"],
        )

    def build_learner_config(self) -> LearnerConfig:
        lr = self["learner"]
        return LearnerConfig(
            gamma=lr["gamma"],
            eta=lr["eta"],
            alpha=lr["alpha"],
            beta=lr["beta"],
            batch_size=lr["batch_size"],
            prune_period=lr["prune_period"],
            update_period=lr["update_period"],
            capacity=lr["capacity"],
            epsilon=self["controller"]["epsilon"],
        )

    def build_lqoco_config(self) -> LQoCoConfig:
        c = self["controller"]
        rates = {
            Action.FAST_DECREASE: c["action_fast_decrease"],
            Action.SLOW_DECREASE: c["action_slow_decrease"],
            Action.KEEP: 0.0,
            Action.SLOW_INCREASE: c["action_slow_increase"],
            Action.FAST_INCREASE: c["action_fast_increase"],
        }
        return LQoCoConfig(
            action_rates=rates,
            epsilon=c["epsilon"],
            reward_weights=RewardWeights(c["f_w"], c["f_p"], c["f_b"]),
            reward_mode=c["reward_mode"],
            fine_tune_rate=c["fine_tune_rate"],
            fine_tune_deadband=c["fine_tune_deadband"],
            fast_decrease_watermark=c["fast_decrease_watermark"],
            fast_overuse_bdp=c["fast_overuse_bdp"],
            fast_increase_watermark=c["fast_increase_watermark"],
            fast_underuse_bdp=c["fast_underuse_bdp"],
            min_bandwidth=c["min_bandwidth"],
        )

    def build_bound(self) -> AdaptiveBound:
        c = self["controller"]
        base = self["flush"]["base_bandwidth"]
        return AdaptiveBound(
            lb=c["bound_lb_factor"] * base,
            ub=c["bound_ub_factor"] * base,
            window=c["bound_window"],
            violation_threshold=c["bound_violation_threshold"],
            sigma=c["bound_sigma"],
            delta=c["bound_delta"],
        )

    def build_coto(self) -> CoToController:
        c = self["coto"]
        return CoToController(
            CoToConfig(
                band_edges=(c["band_low"], c["band_high"]),
                base_rate=c["base_rate"],
                floor=c["floor"],
            )
        )

    def build_bypass(self) -> BypassRouter:
        b = self["bypass"]
        return BypassRouter(BypassConfig(b["latency_threshold"], b["window"]))

    def initial_bandwidth(self) -> float:
        exp = self["experiment"]
        if exp["initial_bandwidth"] is not None:
            return exp["initial_bandwidth"]
        return self["flush"]["base_bandwidth"]


@dataclass
class RunResult:
    method: str
    seed: int
    workload_label: str
    samples: list
    decisions: list[DecisionRow]
    report: MetricsReport
    qtable: object = None
    latencies: LatencyAccumulator = None
    latencies_by_tick: dict | None = None


def _method_rng(seed: int, method: str) -> np.random.Generator:
    return np.random.default_rng([seed, _POLICY_STREAM, METHODS.index(method)])


def run_single(cfg: ExperimentConfig, method: str, seed: int, trace: Trace) -> RunResult:
    """Simulate one (method, seed) pair over a pre-generated trace."""
    sim_cfg = cfg.build_sim_config(seed)
    sim = cfg["sim"]
    cache = CacheModel(
        capacity=sim["cache_capacity"],
        overload_threshold=sim["overload_threshold"],
        collapse_efficiency=sim["collapse_efficiency"],
        recovery_threshold=sim["recovery_threshold"],
    )
    env = CacheSim(cache, cfg.build_flush(seed), sim_cfg)
    feeder = TraceFeeder(trace, sim_cfg.tick, sim_cfg.ticks)

    bucket = TokenBucket(cfg["executor"]["bytes_per_token"])
    bands = cfg.build_bands()
    collector = StateCollector(bands)
    controller = None
    coto = None
    router = None
    if method == "lqoco":
        qtable = make_cache_qtable(cfg.build_lqoco_config().action_rates)
        if cfg["experiment"]["qtable_path"] is not None:
            qtable = load_qtable(cfg["experiment"]["qtable_path"], bands=bands)
        learner = Learner(qtable, cfg.build_learner_config(), _method_rng(seed, method))
        controller = LQoCoController(
            learner, cfg.build_bound(), cfg.build_lqoco_config(), _method_rng(seed, method)
        )
    elif method == "coto":
        coto = cfg.build_coto()
    elif method == "bypass":
        router = cfg.build_bypass()
    elif method != "none":
        raise ConfigError(f"unknown method {method!r}")

    I_exec = cfg.initial_bandwidth()
    tick = sim_cfg.tick
    keep_tick_latencies = cfg["experiment"]["write_timeseries"]
    samples = []
    decisions: list[DecisionRow] = []
    lat = LatencyAccumulator()
    lat_by_tick: dict | None = {} if keep_tick_latencies else None

    for t in range(sim_cfg.ticks):
        arrivals = feeder.arrivals(t)
        bypassed = []
        if router is not None and arrivals and router.route() == "storage_direct":
            bypassed = arrivals
        else:
            for b in arrivals:
                env.enqueue(b)

        if method in ("lqoco", "coto"):
            bucket.set_bandwidth(I_exec, tick)
            bucket.replenish()
            grant = bucket
        else:
            grant = math.inf
        admitted = env.drain_host_queue(grant)
        sample = env.step(admitted, bypassed)
        samples.append(sample)
        lat.add_sample(sample)
        if lat_by_tick is not None:
            lat_by_tick[t] = [(b.latency, b.count) for b in sample.completed_batches]

        if router is not None:
            for b in sample.completed_batches:
                router.observe_latency(b.latency, b.count)

        if method == "lqoco":
            st = collector.compute_state(sample)
            d = discretize(st, bands)
            cls = classify(d)
            controller.observe_state(d)
            controller.learner.on_tick(t)
            dec = controller.decide(d, cls, st, I_exec)
            update_bounds(controller.bound, dec.recommended_I, cls)
            I_exec = dec.executed_I
            action_label = dec.action.value if dec.action is not None else "FineTune"
            decisions.append(
                DecisionRow(
                    t, dec.source.value, action_label, dec.recommended_I, dec.executed_I,
                    dec.bound_rejected, dec.learn, controller.bound.lb, controller.bound.ub,
                )
            )
        elif method == "coto":
            new_I = coto.decide(
                sample.watermark, I_exec, sample.flushed_bw, measured_I=sample.admitted_bw
            )
            decisions.append(
                DecisionRow(t, "coto", "Adjust", new_I, new_I, False, False, 0.0, math.inf)
            )
            I_exec = new_I
        elif method == "bypass":
            routed = "storage_direct" if bypassed else "cache"
            decisions.append(
                DecisionRow(t, "bypass", routed, math.inf, math.inf, False, False, 0.0, math.inf)
            )
        else:
            decisions.append(
                DecisionRow(t, "none", "Keep", math.inf, math.inf, False, False, 0.0, math.inf)
            )

    report = build_report(
        samples,
        lat,
        overload_threshold=sim["overload_threshold"],
        window=cfg["metrics"]["window"],
        tick=tick,
        meta={"method": method, "workload": cfg.workload_label(), "seed": str(seed)},
    )
    return RunResult(
        method=method,
        seed=seed,
        workload_label=cfg.workload_label(),
        samples=samples,
        decisions=decisions,
        report=report,
        qtable=controller.learner.q_real if controller is not None else None,
        latencies=lat,
        latencies_by_tick=lat_by_tick,
    )


def run(cfg: ExperimentConfig, out_dir=None) -> dict[tuple[str, int], RunResult]:
    """Run every (method, seed) pair; write reports and logs under ``out_dir``."""
    exp = cfg["experiment"]
    workload = cfg.build_workload()
    results: dict[tuple[str, int], RunResult] = {}
    bands = cfg.build_bands()
    for seed in exp["seeds"]:
        trace = workload if isinstance(workload, Trace) else generate_trace(workload, seed)
        seed_reports = {}
        for method in exp["methods"]:
            res = run_single(cfg, method, seed, trace)
            results[(method, seed)] = res
            seed_reports[method] = res.report
            if out_dir is not None:
                run_dir = os.path.join(out_dir, f"{method}-seed{seed}")
                os.makedirs(run_dir, exist_ok=True)
                if exp["write_logs"]:
                    save_samples(res.samples, os.path.join(run_dir, "samples.csv"))
                    save_decisions(res.decisions, os.path.join(run_dir, "decisions.csv"))
                if exp["write_timeseries"]:
                    export_timeseries(
                        res.samples,
                        os.path.join(run_dir, "timeseries.csv"),
                        res.latencies_by_tick,
                    )
                if res.qtable is not None:
                    save_qtable(res.qtable, os.path.join(run_dir, "qtable.txt"), bands=bands)
        if out_dir is not None:
            emit_report(seed_reports, os.path.join(out_dir, f"report-seed{seed}.txt"))
    if out_dir is not None and len(exp["methods"]) >= 2:
        table = compare(_mean_reports(results, exp["methods"]))
        with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as f:
            f.write(table + "\n")
    return results


def _mean_reports(results, methods) -> dict[str, MetricsReport]:
    """Per-method reports averaged over seeds (for the summary table)."""
    out = {}
    for method in methods:
        reps = [r.report for (m, _), r in results.items() if m == method]
        n = len(reps)
        windows = [
            (i, sum(r.cache_full_seconds_per_window[k][1] for r in reps) / n)
            for k, (i, _) in enumerate(reps[0].cache_full_seconds_per_window)
        ]
        out[method] = MetricsReport(
            mean_throughput=sum(r.mean_throughput for r in reps) / n,
            jitter=sum(r.jitter for r in reps) / n,
            mean_latency=sum(r.mean_latency for r in reps) / n,
            p999_latency=sum(r.p999_latency for r in reps) / n,
            cache_full_seconds_per_window=windows,
            window=reps[0].window,
            meta=dict(reps[0].meta, seed="mean"),
        )
    return out


def compare(reports: dict[str, MetricsReport]) -> str:
    """Fixed-width comparison table with ratios against the no-control row."""
    if len(reports) < 2:
        raise ValueError("compare needs at least 2 reports")
    workloads = {r.meta.get("workload", "?") for r in reports.values()}
    if len(workloads) > 1:
        raise ValueError(f"reports cover different workloads: {sorted(workloads)}")
    baseline_name = "none" if "none" in reports else next(iter(reports))
    base = reports[baseline_name]
    header = (
        f"{'method':<8} {'thrpt(MB/s)':>12} {'jitter':>8} {'meanlat(s)':>11} "
        f"{'p99.9(s)':>10} {'full(s)':>8} {'thr/base':>9} {'jit/base':>9} {'p999/base':>10}"
    )
    lines = [f"workload: {workloads.pop()}", header, "-" * len(header)]
    for name, r in reports.items():
        lines.append(
            f"{name:<8} {r.mean_throughput / 1e6:>12.3f} {r.jitter:>8.4f} "
            f"{r.mean_latency:>11.4f} {r.p999_latency:>10.4f} {r.cache_full_total:>8.1f} "
            f"{_ratio(r.mean_throughput, base.mean_throughput):>9} "
            f"{_ratio(r.jitter, base.jitter):>9} "
            f"{_ratio(r.p999_latency, base.p999_latency):>10}"
        )
    return "\n".join(lines)


def _ratio(x: float, base: float) -> str:
    if base == 0:
        return "n/a"
    return f"{x / base:.3f}"
