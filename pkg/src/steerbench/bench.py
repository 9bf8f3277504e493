"""Experiment runner, metrics, and result emission.

A benchmark config describes a cross product of suites, tasks, steering
variants, candidate counts, and trials. Episode seeds are derived from
(seed0, suite, task, trial) only, so every strategy and every K sees the
same scenes and the same per-candidate generation streams: comparisons
are seed-paired by construction, and the whole run is a pure function of
the config.

Outputs: a trial CSV (one row per episode), a JSONL trace (one line per
reasoning step), and a summary CSV with per-cell success rates and
Wilson intervals. Two embedded self-checks cross-validate the CSV
against the trace: the virtual-time accounting identity and an
independent recount of misaligned segments.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .policy import CorruptionFactors, PlanRecord, PolicyConfig, generate_plan, next_token, open_segment
from .steer import (
    STRATEGIES,
    SegmentEvent,
    SteerConfig,
    TrialRecord,
    run_episode_traced,
)
from .taskworld import SUITES, SUITE_CODES, ActionToken, eval_predicate, sample_scene, step, suite_size
from .verify import LatencyModel, ServiceTimeSpec, VerifierConfig, calibrated_latency_model


class ConfigError(Exception):
    """Invalid or unknown benchmark configuration key/value."""


class SelfCheckError(Exception):
    """An embedded acceptance invariant failed on emitted results."""


# benchmark protocol default: episodes get a few retries beyond the
# expert-optimal step count, so misalignment costs success, not just time
BENCH_STEP_BUDGET = 40


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1 or not 0 <= successes <= trials:
        raise ValueError(f"invalid counts {successes}/{trials}")
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    n = trials
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # at the boundaries center - half is exactly 0 (or center + half
    # exactly 1); resolve them without float residue
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return (lo, hi)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class BenchConfig:
    suites: tuple[str, ...]
    tasks: str | tuple[int, ...] = "all"
    trials_per_task: int = 50
    k_sweep: tuple[int, ...] = (1, 2, 5, 10)
    seed0: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    steer: tuple[SteerConfig, ...] = ()
    latency: LatencyModel = field(default_factory=calibrated_latency_model)
    output_dir: str = "bench_out"

    def __post_init__(self):
        if self.trials_per_task < 1:
            raise ConfigError("trials_per_task must be >= 1")
        if not self.k_sweep:
            raise ConfigError("k_sweep must be nonempty")
        for s in self.suites:
            if s not in SUITE_CODES:
                raise ConfigError(f"unknown suite {s!r}")
        if not self.steer:
            raise ConfigError("at least one steer variant is required")

    def task_indices(self, suite: str) -> tuple[int, ...]:
        if self.tasks == "all":
            return tuple(range(suite_size(suite)))
        return tuple(self.tasks)


def default_bench_config(output_dir: str = "bench_out") -> BenchConfig:
    return BenchConfig(
        suites=tuple(SUITES),
        steer=(
            SteerConfig(strategy="seal", step_budget=BENCH_STEP_BUDGET),
            SteerConfig(strategy="value", step_budget=BENCH_STEP_BUDGET),
            SteerConfig(strategy="none", step_budget=BENCH_STEP_BUDGET),
        ),
        output_dir=output_dir,
    )


def _take(d: dict, allowed: dict, where: str) -> dict:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")
    return {k: d[k] for k in d}


def _parse_corruption(d: dict) -> dict[str, CorruptionFactors]:
    out = {}
    for suite, factors in d.items():
        if suite not in SUITE_CODES:
            raise ConfigError(f"unknown suite {suite!r} in policy.corruption")
        raw = _take(factors, {"plan": 1.0, "act": 1.0, "ground": 1.0}, f"corruption[{suite}]")
        out[suite] = CorruptionFactors(**raw)
    return out


def _parse_policy(d: dict) -> PolicyConfig:
    allowed = {
        "p_plan_err": None,
        "p_wrong": None,
        "p_noise": None,
        "h_max": None,
        "t_act": None,
        "dynamics_noise": None,
        "corruption": None,
    }
    raw = _take(d, allowed, "policy")
    if "corruption" in raw:
        raw["corruption"] = _parse_corruption(raw["corruption"])
    try:
        return PolicyConfig(**raw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _parse_steer(d: dict) -> SteerConfig:
    allowed = {
        "strategy": None,
        "k": None,
        "fallback": None,
        "value_miscalibration": None,
        "chunk_len": None,
        "step_budget": None,
    }
    raw = _take(d, allowed, "steer")
    if "value_miscalibration" in raw:
        for suite in raw["value_miscalibration"]:
            if suite not in SUITE_CODES:
                raise ConfigError(f"unknown suite {suite!r} in value_miscalibration")
    try:
        return SteerConfig(**raw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _parse_service(d: dict) -> ServiceTimeSpec:
    kind = d.get("kind")
    if kind == "constant":
        raw = _take(d, {"kind": None, "c": None}, "service_time")
        return ServiceTimeSpec.constant(raw["c"])
    if kind == "uniform":
        raw = _take(d, {"kind": None, "lo": None, "hi": None}, "service_time")
        return ServiceTimeSpec.uniform(raw["lo"], raw["hi"])
    raise ConfigError(f"service_time.kind must be constant|uniform, got {kind!r}")


def _parse_verifier(d: dict) -> VerifierConfig:
    allowed = {"alpha": None, "beta": None, "service_time": None, "pool_limit": None}
    raw = _take(d, allowed, "latency.verifier")
    if "service_time" in raw:
        raw["service_time"] = _parse_service(raw["service_time"])
    try:
        return VerifierConfig(**raw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _parse_latency(d: dict) -> LatencyModel:
    allowed = {"sample_c0": None, "sample_c1": None, "verifier": None}
    raw = _take(d, allowed, "latency")
    if "verifier" in raw:
        raw["verifier"] = _parse_verifier(raw["verifier"])
    try:
        return LatencyModel(**raw)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config(source: str | Path | dict) -> BenchConfig:
    """Parse a benchmark config from a JSON document. Unknown keys are
    errors at every level, so sweep typos fail fast."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = source
    allowed = {
        "suites": None,
        "tasks": None,
        "trials_per_task": None,
        "k_sweep": None,
        "seed0": None,
        "policy": None,
        "steer": None,
        "latency": None,
        "output_dir": None,
    }
    raw = _take(doc, allowed, "config")
    if "suites" not in raw or "steer" not in raw:
        raise ConfigError("config requires 'suites' and 'steer'")
    kwargs: dict = {"suites": tuple(raw["suites"])}
    if "tasks" in raw:
        kwargs["tasks"] = raw["tasks"] if raw["tasks"] == "all" else tuple(raw["tasks"])
    if "trials_per_task" in raw:
        kwargs["trials_per_task"] = int(raw["trials_per_task"])
    if "k_sweep" in raw:
        kwargs["k_sweep"] = tuple(int(k) for k in raw["k_sweep"])
    if "seed0" in raw:
        kwargs["seed0"] = int(raw["seed0"])
    if "policy" in raw:
        kwargs["policy"] = _parse_policy(raw["policy"])
    kwargs["steer"] = tuple(_parse_steer(s) for s in raw["steer"])
    if "latency" in raw:
        kwargs["latency"] = _parse_latency(raw["latency"])
    if "output_dir" in raw:
        kwargs["output_dir"] = raw["output_dir"]
    return BenchConfig(**kwargs)


# ---------------------------------------------------------------------------
# running


def episode_seed(seed0: int, suite: str, task_index: int, trial: int) -> int:
    """Derived episode seed; shared across strategies and K so every
    comparison is seed-paired."""
    ss = np.random.SeedSequence([seed0, SUITE_CODES[suite], task_index, trial])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_cells(cfg: BenchConfig):
    """Run the full cross product in deterministic order, yielding
    (record, events) pairs."""
    for suite in cfg.suites:
        for task_index in cfg.task_indices(suite):
            for scfg in cfg.steer:
                for k in cfg.k_sweep:
                    variant = dc_replace(scfg, k=k)
                    for trial in range(cfg.trials_per_task):
                        seed = episode_seed(cfg.seed0, suite, task_index, trial)
                        yield run_episode_traced(
                            suite, task_index, seed, cfg.policy, variant, cfg.latency
                        )


def run_suite(cfg: BenchConfig) -> dict:
    """Execute the benchmark, write results, and run the embedded
    self-checks. Returns the output paths and rollup counts."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trials_path = out_dir / "trials.csv"
    trace_path = out_dir / "trace.jsonl"
    summary_path = out_dir / "summary.csv"

    records: list[TrialRecord] = []
    with open(trace_path, "w", encoding="utf-8") as trace_fh:
        for record, events in run_cells(cfg):
            records.append(record)
            for event in events:
                line = {
                    "suite": record.suite,
                    "task_index": record.task_index,
                    "strategy": record.strategy,
                    "k": record.k,
                    "seed": record.seed,
                    "segment": event.to_dict(),
                }
                trace_fh.write(json.dumps(line, sort_keys=True))
                trace_fh.write("\n")

    write_trials_csv(trials_path, records)
    summary = summarize(records)
    write_summary_csv(summary_path, summary)

    check_accounting_identity(records, trace_path)
    check_misalignment_recount(records, trace_path)

    return {
        "trials_csv": str(trials_path),
        "trace_jsonl": str(trace_path),
        "summary_csv": str(summary_path),
        "episodes": len(records),
    }


# ---------------------------------------------------------------------------
# emission


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_trials_csv(path: str | Path, records: list[TrialRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TrialRecord.FIELDS)
        for r in records:
            writer.writerow([_fmt(getattr(r, name)) for name in TrialRecord.FIELDS])


def read_trials_csv(path: str | Path) -> list[TrialRecord]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TrialRecord.FIELDS:
            raise ConfigError(f"unexpected trial CSV header in {path}")
        for row in reader:
            out.append(
                TrialRecord(
                    suite=row["suite"],
                    task_index=int(row["task_index"]),
                    strategy=row["strategy"],
                    k=int(row["k"]),
                    seed=int(row["seed"]),
                    success=row["success"] == "1",
                    env_steps=int(row["env_steps"]),
                    reasoning_steps=int(row["reasoning_steps"]),
                    sample_ms=float(row["sample_ms"]),
                    verify_wait_ms=float(row["verify_wait_ms"]),
                    amortized_overhead_ms_per_step=float(
                        row["amortized_overhead_ms_per_step"]
                    ),
                    fallback_count=int(row["fallback_count"]),
                    misaligned_segments=int(row["misaligned_segments"]),
                )
            )
    return out


SUMMARY_FIELDS = (
    "suite",
    "task",
    "strategy",
    "k",
    "trials",
    "successes",
    "success_rate",
    "ci_lo",
    "ci_hi",
    "mean_steps",
    "sample_ms_per_step",
    "verify_ms_per_step",
    "total_ms_per_step",
)


def _cell_row(suite, task, strategy, k, cell: list[TrialRecord]) -> dict:
    trials = len(cell)
    successes = sum(r.success for r in cell)
    lo, hi = wilson_interval(successes, trials, 0.95)
    steps = sum(r.env_steps for r in cell)
    sample = sum(r.sample_ms for r in cell)
    verify = sum(r.verify_wait_ms for r in cell)
    return {
        "suite": suite,
        "task": task,
        "strategy": strategy,
        "k": k,
        "trials": trials,
        "successes": successes,
        "success_rate": successes / trials,
        "ci_lo": lo,
        "ci_hi": hi,
        "mean_steps": steps / trials,
        "sample_ms_per_step": sample / steps if steps else 0.0,
        "verify_ms_per_step": verify / steps if steps else 0.0,
        "total_ms_per_step": (sample + verify) / steps if steps else 0.0,
    }


def summarize(records: list[TrialRecord]) -> list[dict]:
    """Per (suite, task, strategy, k) rows plus task='all' aggregates.
    Latency columns are ratio-of-sums, i.e. amortized per executed env
    step."""
    cells: dict[tuple, list[TrialRecord]] = {}
    aggregates: dict[tuple, list[TrialRecord]] = {}
    for r in records:
        cells.setdefault((r.suite, r.task_index, r.strategy, r.k), []).append(r)
        aggregates.setdefault((r.suite, r.strategy, r.k), []).append(r)

    rows = []
    for (suite, task, strategy, k) in sorted(
        cells, key=lambda c: (SUITE_CODES[c[0]], c[1], STRATEGIES.index(c[2]), c[3])
    ):
        rows.append(_cell_row(suite, str(task), strategy, k, cells[(suite, task, strategy, k)]))
    for (suite, strategy, k) in sorted(
        aggregates, key=lambda c: (SUITE_CODES[c[0]], STRATEGIES.index(c[1]), c[2])
    ):
        rows.append(_cell_row(suite, "all", strategy, k, aggregates[(suite, strategy, k)]))
    return rows


def write_summary_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for row in rows:
            writer.writerow([_fmt(row[name]) for name in SUMMARY_FIELDS])


# ---------------------------------------------------------------------------
# metrics


CALIBRATION_TASKS = (0, 1, 7)


def latency_calibration_records(
    k: int, trials_per_task: int = 150, seed_base: int = 7000
) -> list[TrialRecord]:
    """Run the latency calibration workload at candidate count k: the
    long two-subgoal pick-and-place tasks under the frozen calibration
    defect rates and the calibrated latency model."""
    from .verify import CALIBRATION_P_NOISE, CALIBRATION_P_WRONG

    pcfg = PolicyConfig(p_wrong=CALIBRATION_P_WRONG, p_noise=CALIBRATION_P_NOISE)
    scfg = SteerConfig(strategy="seal", k=k)
    lat = calibrated_latency_model()
    records = []
    for task_index in CALIBRATION_TASKS:
        for trial in range(trials_per_task):
            seed = seed_base + 97 * trial + task_index
            records.append(
                run_episode_traced(
                    "id", task_index, seed, pcfg, scfg, lat
                )[0]
            )
    return records


def latency_breakdown(records: list[TrialRecord]) -> list[dict]:
    """Per-K amortized per-step sampling and verification costs (ratio of
    sums) and their total."""
    if not records:
        raise ValueError("no records")
    by_k: dict[int, list[TrialRecord]] = {}
    for r in records:
        by_k.setdefault(r.k, []).append(r)
    rows = []
    for k in sorted(by_k):
        cell = by_k[k]
        steps = sum(r.env_steps for r in cell)
        sample = sum(r.sample_ms for r in cell)
        verify = sum(r.verify_wait_ms for r in cell)
        rows.append(
            {
                "k": k,
                "sample_ms_per_step": sample / steps if steps else 0.0,
                "verify_ms_per_step": verify / steps if steps else 0.0,
                "total_ms_per_step": (sample + verify) / steps if steps else 0.0,
            }
        )
    return rows


def estimate_alignment_loss(
    pcfg: PolicyConfig,
    suite: str,
    task_index: int,
    plan: PlanRecord | None,
    m: int,
    seed: int,
) -> tuple[float, float]:
    """Monte Carlo estimate of the per-segment misalignment rate: the
    fraction of m independent single-candidate segments whose final state
    fails the plan's target. Returns (loss, standard error)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    state, task = sample_scene(suite, task_index, seed)
    eff = pcfg.effective(task.suite_tag)
    if plan is None:
        plan_rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
        plan = generate_plan(state, None, task, dc_replace(eff, p_plan_err=0.0), plan_rng)
        if plan is None:
            raise ValueError("task already complete in its initial scene")
    failures = 0
    for i in range(m):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 202, i]))
        seg = open_segment(plan, state, eff, rng)
        s = state
        while True:
            tok = next_token(s, seg, eff, rng)
            if tok is ActionToken.THINK:
                break
            s = step(s, tok)
        failures += not eval_predicate(s, plan.target)
    loss = failures / m
    stderr = math.sqrt(loss * (1.0 - loss) / m)
    return loss, stderr


# ---------------------------------------------------------------------------
# embedded self-checks


def _trace_lines(trace_path: str | Path):
    with open(trace_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def _episode_key(r: TrialRecord) -> tuple:
    return (r.suite, r.task_index, r.strategy, r.k, r.seed)


def check_accounting_identity(
    records: list[TrialRecord], trace_path: str | Path
) -> None:
    """sample_ms + verify_wait_ms must equal the overhead the trace
    attributes to the episode's segments."""
    totals: dict[tuple, float] = {}
    for line in _trace_lines(trace_path):
        key = (
            line["suite"],
            line["task_index"],
            line["strategy"],
            line["k"],
            line["seed"],
        )
        seg = line["segment"]
        totals[key] = totals.get(key, 0.0) + seg["sample_ms"] + seg["verify_wait_ms"]
    for r in records:
        want = totals.get(_episode_key(r), 0.0)
        got = r.sample_ms + r.verify_wait_ms
        if abs(got - want) > 1e-6 * max(1.0, abs(want)):
            raise SelfCheckError(
                f"accounting identity broken for {_episode_key(r)}: {got} != {want}"
            )


def check_misalignment_recount(
    records: list[TrialRecord], trace_path: str | Path
) -> None:
    """misaligned_segments must equal the number of trace segments whose
    executed outcome failed the plan target."""
    counts: dict[tuple, int] = {}
    for line in _trace_lines(trace_path):
        key = (
            line["suite"],
            line["task_index"],
            line["strategy"],
            line["k"],
            line["seed"],
        )
        counts[key] = counts.get(key, 0) + (not line["segment"]["aligned"])
    for r in records:
        want = counts.get(_episode_key(r), 0)
        if r.misaligned_segments != want:
            raise SelfCheckError(
                f"misaligned recount broken for {_episode_key(r)}: "
                f"{r.misaligned_segments} != {want}"
            )
