"""Selection strategies and the episode driver.

Three ways to pick among candidate rollouts:

* ``seal``  - schedule a verification for each candidate as it finishes
  generating, respect the verifier's concurrency limit, and execute the
  first candidate whose verdict arrives as an accept (early exit); if
  every verdict rejects, fall back to a configured default and log it.
* ``value`` - verifier-free baseline: score each candidate's predicted
  final state with a task-progress heuristic and take the argmax.
* ``none``  - no steering: execute the first sampled candidate.

The episode driver runs plan -> hypothesize/predict -> select -> sync
until the plan generator signals completion or the step budget runs out,
accounting sampling and verification on a deterministic virtual clock.
Per-segment overhead splits at the executed candidate's generation
finish: batch steps up to it are sampling cost, the remainder until the
decision instant is verification (selection) stall.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .policy import PlanRecord, PolicyConfig, generate_plan
from .rollout import (
    CandidateRollout,
    EnvPool,
    hypothesize_predict,
    make_pool,
    replay_tokens,
    sync_pool,
    sync_pool_to_state,
)
from .taskworld import TaskSpec, WorldState, eval_predicate, sample_scene
from .verify import (
    LatencyModel,
    Verdict,
    VerifierConfig,
    draw_service_time,
    sampling_step_cost,
    verdict_noisy,
    verdict_oracle,
)

STRATEGIES = ("seal", "value", "none")
FALLBACKS = ("earliest_finished", "random", "longest")

# rng sub-stream tags within an episode seed
_STREAM_PLAN = 1
_STREAM_VERIFY = 2
_STREAM_CANDIDATES = 3


class VirtualClock:
    """Monotone virtual-millisecond clock for decision overhead."""

    def __init__(self, now: float = 0.0):
        self.now = now

    def advance_to(self, t: float) -> None:
        if t < self.now:
            raise ValueError(f"clock cannot move backwards ({self.now} -> {t})")
        self.now = t


@dataclass(frozen=True)
class Selection:
    chosen: int
    decided_at: float
    verdicts_seen: tuple[Verdict, ...]
    fallback_used: bool


def default_miscalibration() -> dict[str, float]:
    # the heuristic scorer's grounding degrades on recombined instructions
    # and under the viewpoint shift, where it overrates progress toward
    # the wrong object
    return {"compose": 0.75, "visual_viewpoint": 0.6}


@dataclass(frozen=True)
class SteerConfig:
    strategy: str = "seal"
    k: int = 1
    fallback: str = "earliest_finished"
    value_miscalibration: dict[str, float] = field(
        default_factory=default_miscalibration
    )
    chunk_len: int | None = None
    step_budget: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"fallback must be one of {FALLBACKS}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.chunk_len is not None:
            if self.chunk_len < 1:
                raise ValueError("chunk_len must be >= 1")
            if self.strategy != "value":
                raise ValueError("chunk_len applies to the value strategy only")
        if self.step_budget is not None and self.step_budget < 1:
            raise ValueError("step_budget must be >= 1")


# ---------------------------------------------------------------------------
# verifier-gated early-exit selection


def seal_select(
    cands: list[CandidateRollout],
    plan: PlanRecord,
    pool_base: WorldState,
    vcfg: VerifierConfig,
    clock: VirtualClock,
    rng: np.random.Generator,
    fallback: str = "earliest_finished",
) -> Selection:
    """Early-exit selection over asynchronously verified candidates.

    Verifications are scheduled at each candidate's generation finish,
    FIFO by (gen_finish, index) through ``pool_limit`` verifier slots.
    The first arriving accept wins (ties broken by candidate index) and
    everything still pending is cancelled. If every verdict rejects, the
    fallback candidate is executed and flagged.

    Random draws are consumed in candidate index order (one verdict flip,
    then one service time, per candidate), so outcomes do not depend on
    schedule order; the fallback draw, when needed, comes last.
    """
    if not cands:
        raise ValueError("no candidates to select from")

    truths = [verdict_oracle(pool_base, c.final_state(), plan) for c in cands]
    flips = [verdict_noisy(t, vcfg, rng) for t in truths]
    services = [draw_service_time(vcfg, rng) for _ in cands]

    # verifier slot simulation; cancellation only removes events after the
    # decision instant, so the no-cancellation schedule is exact up to it
    order = sorted(range(len(cands)), key=lambda i: (cands[i].gen_finish, i))
    slots = [clock.now] * vcfg.pool_limit
    issued = {}
    arrived = {}
    for i in order:
        finish = clock.now + cands[i].gen_finish
        slot = min(range(len(slots)), key=lambda s: slots[s])
        start = max(finish, slots[slot])
        issued[i] = start
        arrived[i] = start + services[i]
        slots[slot] = arrived[i]

    accepts = [i for i in range(len(cands)) if flips[i]]
    if accepts:
        chosen = min(accepts, key=lambda i: (arrived[i], i))
        decided = arrived[chosen]
        fallback_used = False
    else:
        decided = max(arrived.values())
        fallback_used = True
        if fallback == "earliest_finished":
            chosen = min(range(len(cands)), key=lambda i: (cands[i].gen_finish, i))
        elif fallback == "longest":
            chosen = max(range(len(cands)), key=lambda i: (cands[i].segment_len, -i))
        else:
            chosen = int(rng.integers(0, len(cands)))

    verdicts = tuple(
        Verdict(candidate=i, accept=flips[i], issued_at=issued[i], arrived_at=arrived[i])
        for i in sorted(range(len(cands)), key=lambda i: (arrived[i], i))
        if arrived[i] <= decided
    )
    return Selection(
        chosen=chosen,
        decided_at=decided,
        verdicts_seen=verdicts,
        fallback_used=fallback_used,
    )


# ---------------------------------------------------------------------------
# value-scored baseline


def _distance_norm(state: WorldState, goal) -> float:
    span = state.grid_width + state.grid_height
    gpos = state.gripper.pos
    if goal.kind in ("in", "on") and state.gripper.held != goal.obj:
        anchor = state.object(goal.obj).pos
    else:
        anchor = state.fixture(goal.fixture).pos
    return (abs(gpos[0] - anchor[0]) + abs(gpos[1] - anchor[1])) / span


def _progress_score(state: WorldState, subgoals) -> float:
    satisfied = sum(eval_predicate(state, g) for g in subgoals)
    for g in subgoals:
        if not eval_predicate(state, g):
            return satisfied - _distance_norm(state, g)
    return float(satisfied)


def _misgrounded_subgoals(state: WorldState, subgoals) -> tuple:
    """The task as seen by a badly grounded scorer: every object-typed
    subgoal rebinds to a non-target scene object (fixed assignment by
    sorted id), so progress toward the wrong object reads as progress."""
    targets = {g.obj for g in subgoals if g.obj is not None}
    alternates = [
        o.id for o in sorted(state.objects, key=lambda o: o.id) if o.id not in targets
    ]
    if not alternates:
        return tuple(subgoals)
    out = []
    i = 0
    for g in subgoals:
        if g.obj is None:
            out.append(g)
        else:
            out.append(dc_replace(g, obj=alternates[i % len(alternates)]))
            i += 1
    return tuple(out)


def heuristic_value(state: WorldState, task: TaskSpec, cfg: SteerConfig) -> float:
    """Task-progress score: satisfied subgoal count minus the normalized
    distance to the current target. The per-suite miscalibration blends
    in the same score computed under wrong object bindings, modeling a
    scorer whose grounding does not transfer to that suite."""
    true_score = _progress_score(state, task.subgoals)
    m = cfg.value_miscalibration.get(task.suite_tag, 0.0)
    if m <= 0.0:
        return true_score
    wrong = _misgrounded_subgoals(state, task.subgoals)
    return (1.0 - m) * true_score + m * _progress_score(state, wrong)


def value_select(
    cands: list[CandidateRollout],
    task: TaskSpec,
    cfg: SteerConfig,
    clock: VirtualClock | None = None,
) -> Selection:
    """Pick the candidate whose predicted final state scores highest;
    ties go to the lowest index. Never consults the plan. The decision
    instant is when the whole batch finished generating."""
    if not cands:
        raise ValueError("no candidates to select from")
    best = 0
    best_score = heuristic_value(cands[0].final_state(), task, cfg)
    for i in range(1, len(cands)):
        s = heuristic_value(cands[i].final_state(), task, cfg)
        if s > best_score:
            best, best_score = i, s
    t0 = clock.now if clock is not None else 0.0
    return Selection(
        chosen=best,
        decided_at=t0 + max(c.gen_finish for c in cands),
        verdicts_seen=(),
        fallback_used=False,
    )


def first_candidate_select(
    cands: list[CandidateRollout], clock: VirtualClock | None = None
) -> Selection:
    """No steering: execute the first sampled sequence."""
    t0 = clock.now if clock is not None else 0.0
    return Selection(
        chosen=0,
        decided_at=t0 + cands[0].gen_finish,
        verdicts_seen=(),
        fallback_used=False,
    )


# ---------------------------------------------------------------------------
# episode driver


@dataclass(frozen=True)
class TrialRecord:
    suite: str
    task_index: int
    strategy: str
    k: int
    seed: int
    success: bool
    env_steps: int
    reasoning_steps: int
    sample_ms: float
    verify_wait_ms: float
    amortized_overhead_ms_per_step: float
    fallback_count: int
    misaligned_segments: int

    FIELDS = (
        "suite",
        "task_index",
        "strategy",
        "k",
        "seed",
        "success",
        "env_steps",
        "reasoning_steps",
        "sample_ms",
        "verify_wait_ms",
        "amortized_overhead_ms_per_step",
        "fallback_count",
        "misaligned_segments",
    )


@dataclass(frozen=True)
class SegmentEvent:
    """One reasoning step as logged to the episode trace."""

    index: int
    t0: float
    plan_text: str
    target: dict
    candidates: tuple[dict, ...]
    chosen: int
    decided_at: float
    fallback_used: bool
    aligned: bool
    env_steps: int
    sample_ms: float
    verify_wait_ms: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "t0": self.t0,
            "plan_text": self.plan_text,
            "target": self.target,
            "candidates": list(self.candidates),
            "chosen": self.chosen,
            "decided_at": self.decided_at,
            "fallback_used": self.fallback_used,
            "aligned": self.aligned,
            "env_steps": self.env_steps,
            "sample_ms": self.sample_ms,
            "verify_wait_ms": self.verify_wait_ms,
        }


@dataclass
class _SegmentOutcome:
    executed: WorldState
    selection: Selection
    env_steps: int
    sample_ms: float
    candidates_log: tuple[dict, ...]


def _run_plain_segment(
    pool: EnvPool,
    plan: PlanRecord,
    task: TaskSpec,
    eff: PolicyConfig,
    scfg: SteerConfig,
    lat: LatencyModel,
    clock: VirtualClock,
    verify_rng: np.random.Generator,
    seed: int,
    segment_index: int,
) -> _SegmentOutcome:
    t0 = clock.now
    cand_ss = np.random.SeedSequence([seed, _STREAM_CANDIDATES, segment_index])
    cands = hypothesize_predict(pool, plan, eff, lat, cand_ss)

    if scfg.strategy == "seal":
        sel = seal_select(
            cands,
            plan,
            cands[0].base_state,
            lat.verifier,
            clock,
            verify_rng,
            fallback=scfg.fallback,
        )
    elif scfg.strategy == "value":
        sel = value_select(cands, task, scfg, clock)
    else:
        sel = first_candidate_select(cands, clock)

    chosen = cands[sel.chosen]
    if eff.dynamics_noise > 0:
        executed = replay_tokens(chosen.base_state, chosen.tokens)
        sync_pool_to_state(pool, executed)
    else:
        executed = chosen.final_state()
        sync_pool(pool, chosen)

    log = tuple(
        {
            "index": c.index,
            "len": c.segment_len,
            "gen_finish": t0 + c.gen_finish,
            "aligned": verdict_oracle(c.base_state, c.final_state(), plan),
            "verdict": _verdict_of(sel, c.index),
        }
        for c in cands
    )
    return _SegmentOutcome(
        executed=executed,
        selection=sel,
        env_steps=chosen.segment_len,
        sample_ms=chosen.segment_len * sampling_step_cost(pool.k, lat),
        candidates_log=log,
    )


def _run_chunked_segment(
    pool: EnvPool,
    plan: PlanRecord,
    task: TaskSpec,
    eff: PolicyConfig,
    scfg: SteerConfig,
    lat: LatencyModel,
    clock: VirtualClock,
    seed: int,
    segment_index: int,
) -> _SegmentOutcome:
    """Chunk-level re-selection for the value baseline: generate bounded
    chunks, re-score after each, and continue until the plan target holds
    or the segment cap is reached."""
    total = 0
    sample_ms = 0.0
    executed = pool.replicas[0]
    decided = clock.now
    round_no = 0
    while total < eff.h_max:
        cap = min(scfg.chunk_len, eff.h_max - total)
        cfg_round = dc_replace(eff, h_max=cap)
        cand_ss = np.random.SeedSequence(
            [seed, _STREAM_CANDIDATES, segment_index, round_no]
        )
        cands = hypothesize_predict(pool, plan, cfg_round, lat, cand_ss)
        sel = value_select(cands, task, scfg, clock)
        chosen = cands[sel.chosen]
        if eff.dynamics_noise > 0:
            executed = replay_tokens(chosen.base_state, chosen.tokens)
            sync_pool_to_state(pool, executed)
        else:
            executed = chosen.final_state()
            sync_pool(pool, chosen)
        total += chosen.segment_len
        sample_ms += chosen.segment_len * sampling_step_cost(pool.k, lat)
        clock.advance_to(sel.decided_at)
        decided = sel.decided_at
        round_no += 1
        if chosen.segment_len == 0 or eval_predicate(executed, plan.target):
            break

    sel = Selection(
        chosen=0, decided_at=decided, verdicts_seen=(), fallback_used=False
    )
    return _SegmentOutcome(
        executed=executed,
        selection=sel,
        env_steps=total,
        sample_ms=sample_ms,
        candidates_log=(),
    )


def run_episode(
    suite: str,
    task_index: int,
    seed: int,
    pcfg: PolicyConfig,
    scfg: SteerConfig,
    lat: LatencyModel,
) -> TrialRecord:
    record, _events = run_episode_traced(suite, task_index, seed, pcfg, scfg, lat)
    return record


def run_episode_traced(
    suite: str,
    task_index: int,
    seed: int,
    pcfg: PolicyConfig,
    scfg: SteerConfig,
    lat: LatencyModel,
) -> tuple[TrialRecord, list[SegmentEvent]]:
    """Full reasoning loop with virtual-time accounting.

    Episode randomness decomposes into named sub-streams of the episode
    seed: the plan stream, a per-segment verifier stream, and per
    (segment, candidate) generation streams, so replays are bit-exact
    and candidate outputs do not depend on K or the strategy.
    """
    state, task = sample_scene(suite, task_index, seed)
    eff = pcfg.effective(task.suite_tag)
    k_gen = 1 if scfg.strategy == "none" else scfg.k
    budget = scfg.step_budget if scfg.step_budget is not None else 40 * eff.h_max

    pool = make_pool(state, k_gen)
    clock = VirtualClock()
    plan_rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_PLAN]))

    events: list[SegmentEvent] = []
    env_steps = 0
    sample_ms = 0.0
    verify_ms = 0.0
    fallback_count = 0
    misaligned = 0
    last_plan: PlanRecord | None = None
    segment_index = 0

    while env_steps < budget and segment_index < budget:
        plan = generate_plan(state, last_plan, task, eff, plan_rng)
        if plan is None:
            break
        t0 = clock.now
        verify_rng = np.random.default_rng(
            np.random.SeedSequence([seed, _STREAM_VERIFY, segment_index])
        )

        if scfg.chunk_len is not None:
            seg = _run_chunked_segment(
                pool, plan, task, eff, scfg, lat, clock, seed, segment_index
            )
        else:
            seg = _run_plain_segment(
                pool, plan, task, eff, scfg, lat, clock, verify_rng, seed, segment_index
            )

        sel = seg.selection
        seg_verify = max(0.0, (sel.decided_at - t0) - seg.sample_ms)
        clock.advance_to(sel.decided_at)

        aligned = eval_predicate(seg.executed, plan.target)
        env_steps += seg.env_steps
        sample_ms += seg.sample_ms
        verify_ms += seg_verify
        fallback_count += bool(sel.fallback_used)
        misaligned += not aligned

        events.append(
            SegmentEvent(
                index=segment_index,
                t0=t0,
                plan_text=plan.render(),
                target=plan.target.to_dict(),
                candidates=seg.candidates_log,
                chosen=sel.chosen,
                decided_at=sel.decided_at,
                fallback_used=sel.fallback_used,
                aligned=aligned,
                env_steps=seg.env_steps,
                sample_ms=seg.sample_ms,
                verify_wait_ms=seg_verify,
            )
        )

        state = seg.executed
        last_plan = plan
        segment_index += 1

    success = all(eval_predicate(state, g) for g in task.subgoals)
    total_overhead = sample_ms + verify_ms
    record = TrialRecord(
        suite=suite,
        task_index=task_index,
        strategy=scfg.strategy,
        k=scfg.k,
        seed=seed,
        success=success,
        env_steps=env_steps,
        reasoning_steps=segment_index,
        sample_ms=sample_ms,
        verify_wait_ms=verify_ms,
        amortized_overhead_ms_per_step=(total_overhead / env_steps) if env_steps else 0.0,
        fallback_count=fallback_count,
        misaligned_segments=misaligned,
    )
    return record, events


def _verdict_of(sel: Selection, candidate: int) -> bool | None:
    for v in sel.verdicts_seen:
        if v.candidate == candidate:
            return v.accept
    return None
