"""Selection strategies, the event schedule, the scorer, and episodes.

The verification schedule is cross-checked against an independent
priority-queue event simulator built in this file.
"""

import dataclasses
import heapq
import inspect

import numpy as np
import pytest

from steerbench import taskworld as tw
from steerbench.policy import PolicyConfig, generate_plan
from steerbench.rollout import CandidateRollout, make_pool
from steerbench.steer import (
    SteerConfig,
    VirtualClock,
    first_candidate_select,
    heuristic_value,
    run_episode,
    run_episode_traced,
    seal_select,
    value_select,
)
from steerbench.taskworld import (
    ActionToken,
    FixtureState,
    Gripper,
    ObjectState,
    Subgoal,
    TaskSpec,
    WorldState,
    eval_predicate,
    expert_action,
    sample_scene,
    state_hash,
    step,
)
from steerbench.verify import (
    LatencyModel,
    ServiceTimeSpec,
    VerifierConfig,
    calibrated_latency_model,
)


def rng_for(*key):
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def zero_defect():
    return PolicyConfig(p_plan_err=0.0, p_wrong=0.0, p_noise=0.0)


def oracle_verifier(service=0.0, pool_limit=1):
    return VerifierConfig(
        alpha=0.0,
        beta=0.0,
        service_time=ServiceTimeSpec.constant(service),
        pool_limit=pool_limit,
    )


def make_candidate(index, base, aligned_goal, gen_finish, n_actions=1):
    """Synthetic candidate: ``aligned_goal`` satisfied in the final state
    when given, otherwise the final state is the base state."""
    if aligned_goal is not None:
        fix = base.fixture(aligned_goal.fixture)
        final = dataclasses.replace(
            base,
            objects=tuple(
                dataclasses.replace(o, pos=fix.pos, container=fix.id)
                if o.id == aligned_goal.obj
                else o
                for o in base.objects
            ),
        )
        trace = (final,)
    else:
        trace = (step(base, ActionToken.MOVE_E),) if n_actions else ()
    return CandidateRollout(
        index=index,
        tokens=tuple([ActionToken.MOVE_E] * max(n_actions, len(trace)) + [ActionToken.THINK]),
        trace=trace if trace else (),
        gen_finish=gen_finish,
        segment_len=max(n_actions, len(trace)),
        base_hash=state_hash(base),
        base_state=base,
    )


def basket_plan(scene_seed=3):
    state, task = sample_scene("id", 0, scene_seed)
    plan = generate_plan(state, None, task, zero_defect(), rng_for(0))
    return state, task, plan


# --------------------------------------------------------------------------
# seal selection


def test_single_aligned_candidate_wins_regardless_of_index():
    state, task, plan = basket_plan()
    cands = [
        make_candidate(0, state, None, 100.0),
        make_candidate(1, state, None, 150.0),
        make_candidate(2, state, plan.target, 900.0),
    ]
    sel = seal_select(cands, plan, state, oracle_verifier(50.0), VirtualClock(), rng_for(1))
    assert sel.chosen == 2
    assert not sel.fallback_used


def test_reject_all_verifier_forces_fallback():
    state, task, plan = basket_plan()
    cands = [make_candidate(i, state, plan.target, 100.0 * (i + 1)) for i in range(3)]
    vcfg = VerifierConfig(
        alpha=0.0, beta=1.0, service_time=ServiceTimeSpec.constant(10.0), pool_limit=1
    )
    sel = seal_select(cands, plan, state, vcfg, VirtualClock(), rng_for(2))
    assert sel.fallback_used
    assert sel.chosen == 0  # earliest finished
    assert len(sel.verdicts_seen) == 3
    assert sel.decided_at == max(v.arrived_at for v in sel.verdicts_seen)


def test_fallback_longest_and_random():
    state, task, plan = basket_plan()
    cands = [
        make_candidate(0, state, None, 100.0, n_actions=2),
        make_candidate(1, state, None, 300.0, n_actions=5),
        make_candidate(2, state, None, 200.0, n_actions=3),
    ]
    vcfg = VerifierConfig(
        alpha=0.0, beta=1.0, service_time=ServiceTimeSpec.constant(10.0), pool_limit=1
    )
    sel = seal_select(
        cands, plan, state, vcfg, VirtualClock(), rng_for(3), fallback="longest"
    )
    assert sel.chosen == 1
    picks = {
        seal_select(
            cands, plan, state, vcfg, VirtualClock(), rng_for(4, i), fallback="random"
        ).chosen
        for i in range(40)
    }
    assert len(picks) > 1


def test_earlier_finishing_aligned_candidate_wins():
    # hand-computed schedule: constant service 50, pool_limit 1,
    # finishes at 100/200/300, candidates 1 and 2 aligned
    state, task, plan = basket_plan()
    cands = [
        make_candidate(0, state, None, 100.0),
        make_candidate(1, state, plan.target, 200.0),
        make_candidate(2, state, plan.target, 300.0),
    ]
    sel = seal_select(cands, plan, state, oracle_verifier(50.0), VirtualClock(), rng_for(5))
    # verdict 0 arrives at 150 (reject), verdict 1 at 250 (accept)
    assert sel.chosen == 1
    assert sel.decided_at == pytest.approx(250.0)
    assert [v.candidate for v in sel.verdicts_seen] == [0, 1]


def test_pool_limit_queues_verifications():
    state, task, plan = basket_plan()
    # all finish together; service 100; two slots
    cands = [make_candidate(i, state, plan.target if i == 4 else None, 10.0) for i in range(5)]
    sel = seal_select(
        cands, plan, state, oracle_verifier(100.0, pool_limit=2), VirtualClock(), rng_for(6)
    )
    # waves: {0,1} at 110, {2,3} at 210, {4} at 310
    assert sel.chosen == 4
    assert sel.decided_at == pytest.approx(310.0)


def reference_schedule(cands, clock_now, service, pool_limit):
    """Independent discrete-event simulation of the verification queue:
    a heap of (time, kind) events with FIFO waiting by (gen_finish,
    index)."""
    waiting = sorted(range(len(cands)), key=lambda i: (cands[i].gen_finish, i))
    events = [(clock_now + cands[i].gen_finish, 0, i) for i in waiting]
    heapq.heapify(events)
    free = pool_limit
    queue = []
    arrivals = {}
    ready = {i: clock_now + cands[i].gen_finish for i in waiting}
    # process finish events in time order, assigning slots FIFO
    finished = []
    while events:
        t, _kind, i = heapq.heappop(events)
        finished.append((t, i))
    busy_until = [clock_now] * pool_limit
    for t, i in sorted(finished, key=lambda x: (x[0], x[1])):
        slot = min(range(pool_limit), key=lambda s: busy_until[s])
        start = max(t, busy_until[slot])
        arrivals[i] = start + service[i]
        busy_until[slot] = arrivals[i]
    return arrivals


def test_schedule_matches_reference_event_simulation():
    state, task, plan = basket_plan()
    rng = rng_for(7)
    for trial in range(200):
        k = int(rng.integers(1, 8))
        pool_limit = int(rng.integers(1, 4))
        service_c = float(rng.uniform(5.0, 500.0))
        aligned_mask = [bool(rng.random() < 0.4) for _ in range(k)]
        cands = [
            make_candidate(
                i,
                state,
                plan.target if aligned_mask[i] else None,
                float(rng.integers(0, 1000)),
            )
            for i in range(k)
        ]
        vcfg = oracle_verifier(service_c, pool_limit)
        sel = seal_select(cands, plan, state, vcfg, VirtualClock(), rng_for(8, trial))
        arrivals = reference_schedule(cands, 0.0, [service_c] * k, pool_limit)
        accepted = [i for i in range(k) if aligned_mask[i]]
        if accepted:
            want = min(accepted, key=lambda i: (arrivals[i], i))
            assert sel.chosen == want
            assert sel.decided_at == pytest.approx(arrivals[want])
            assert not sel.fallback_used
        else:
            assert sel.fallback_used
            assert sel.decided_at == pytest.approx(max(arrivals.values()))
        for v in sel.verdicts_seen:
            assert v.arrived_at == pytest.approx(arrivals[v.candidate])


# --------------------------------------------------------------------------
# heuristic value


def tiny_scene():
    state = WorldState(
        grid_width=3,
        grid_height=3,
        objects=(ObjectState("soup", "alphabet soup", (0, 0)),),
        fixtures=(FixtureState("basket", "basket", (2, 2)),),
        gripper=Gripper((1, 1)),
    )
    task = TaskSpec(
        instruction="put the alphabet soup in the basket",
        subgoals=(Subgoal("in", "basket", "soup"),),
        suite_tag="id",
    )
    return state, task


def test_terminal_state_scores_maximal_over_reachable_states():
    state, task = tiny_scene()
    cfg = SteerConfig(strategy="value", value_miscalibration={})

    def key(s):
        return (s.gripper.pos, s.gripper.held, s.objects[0].pos, s.objects[0].container)

    seen = {key(state)}
    frontier = [state]
    states = [state]
    while frontier:
        s = frontier.pop()
        for a in tw.DYNAMICS_TOKENS:
            nxt = dataclasses.replace(step(s, a), tick=0)
            if key(nxt) not in seen:
                seen.add(key(nxt))
                frontier.append(nxt)
                states.append(nxt)
    best = max(heuristic_value(s, task, cfg) for s in states)
    for s in states:
        terminal = eval_predicate(s, task.subgoals[0])
        if terminal:
            assert heuristic_value(s, task, cfg) == pytest.approx(best)
        else:
            assert heuristic_value(s, task, cfg) < best


def test_satisfied_subgoal_scores_higher():
    state, task = sample_scene("id", 0, 3)
    cfg = SteerConfig(strategy="value", value_miscalibration={})
    fix = state.fixture("basket")
    done = dataclasses.replace(
        state,
        objects=tuple(
            dataclasses.replace(o, pos=fix.pos, container="basket")
            if o.id == "soup"
            else o
            for o in state.objects
        ),
    )
    assert heuristic_value(done, task, cfg) > heuristic_value(state, task, cfg)


def test_miscalibration_prefers_wrong_object_progress():
    state, task = sample_scene("compose", 0, 3)
    cfg = SteerConfig(strategy="value")
    assert cfg.value_miscalibration["compose"] > 0
    targets = {g.obj for g in task.subgoals}
    bystander = next(o.id for o in state.objects if o.id not in targets)
    fix = state.fixture("basket")

    def moved(obj_id):
        return dataclasses.replace(
            state,
            objects=tuple(
                dataclasses.replace(o, pos=fix.pos, container="basket")
                if o.id == obj_id
                else o
                for o in state.objects
            ),
            gripper=Gripper(fix.pos),
        )

    correct = moved(task.subgoals[0].obj)
    wrong = moved(bystander)
    assert heuristic_value(wrong, task, cfg) > heuristic_value(correct, task, cfg)
    # and with a clean scorer the ordering flips back
    clean = SteerConfig(strategy="value", value_miscalibration={})
    assert heuristic_value(correct, task, clean) > heuristic_value(wrong, task, clean)


def test_value_select_basics():
    state, task, plan = basket_plan()
    single = [make_candidate(0, state, plan.target, 50.0)]
    assert value_select(single, task, SteerConfig(strategy="value")).chosen == 0

    cands = [
        make_candidate(0, state, None, 50.0),
        make_candidate(1, state, plan.target, 80.0),
    ]
    sel = value_select(cands, task, SteerConfig(strategy="value", value_miscalibration={}))
    assert sel.chosen == 1
    assert sel.decided_at == pytest.approx(80.0)

    ties = [make_candidate(0, state, None, 10.0), make_candidate(0, state, None, 10.0)]
    assert value_select(ties, task, SteerConfig(strategy="value")).chosen == 0


def test_value_select_never_sees_plan():
    params = inspect.signature(value_select).parameters
    assert "plan" not in params
    assert all("PlanRecord" not in str(p.annotation) for p in params.values())


def test_miscalibrated_value_picks_candidate_seal_rejects():
    state, task = sample_scene("compose", 0, 3)
    plan = generate_plan(state, None, task, zero_defect(), rng_for(9))
    targets = {g.obj for g in task.subgoals}
    bystander = next(o.id for o in state.objects if o.id not in targets)
    cands = [
        make_candidate(0, state, Subgoal("in", "basket", bystander), 100.0),
        make_candidate(1, state, plan.target, 120.0),
    ]
    vsel = value_select(cands, task, SteerConfig(strategy="value"))
    ssel = seal_select(
        cands, plan, state, oracle_verifier(10.0), VirtualClock(), rng_for(10)
    )
    assert vsel.chosen == 0 and ssel.chosen == 1


# --------------------------------------------------------------------------
# episodes


def test_zero_defect_episode_is_expert_optimal():
    from steerbench.annotate import generate_demo

    lat = calibrated_latency_model()
    for seed in (0, 5, 9):
        _s, task = sample_scene("id", 0, seed)
        want = len(generate_demo(task, seed).frames)
        rec = run_episode(
            "id", 0, seed, zero_defect(), SteerConfig(strategy="none", k=1), lat
        )
        assert rec.success
        assert rec.env_steps == want
        assert rec.misaligned_segments == 0
        assert rec.fallback_count == 0


def test_degenerate_equivalence_seal_accept_all_vs_none():
    lat = LatencyModel(
        verifier=VerifierConfig(
            alpha=1.0, beta=0.0, service_time=ServiceTimeSpec.constant(0.0), pool_limit=1
        )
    )
    pcfg = PolicyConfig()
    for seed in range(20):
        a = run_episode("id", seed % 10, seed, pcfg, SteerConfig(strategy="seal", k=1), lat)
        b = run_episode("id", seed % 10, seed, pcfg, SteerConfig(strategy="none", k=1), lat)
        da, db = dataclasses.asdict(a), dataclasses.asdict(b)
        assert da.pop("strategy") == "seal" and db.pop("strategy") == "none"
        assert da == db


def test_episode_trace_is_reproducible():
    lat = calibrated_latency_model()
    pcfg = PolicyConfig(p_wrong=0.4, p_noise=0.2)
    scfg = SteerConfig(strategy="seal", k=5)
    a = run_episode_traced("compose", 1, 42, pcfg, scfg, lat)
    b = run_episode_traced("compose", 1, 42, pcfg, scfg, lat)
    assert a == b


def test_episode_respects_step_budget():
    lat = calibrated_latency_model()
    pcfg = PolicyConfig(p_wrong=0.95, p_noise=0.5)
    rec = run_episode(
        "id", 0, 7, pcfg, SteerConfig(strategy="none", k=1, step_budget=25), lat
    )
    assert rec.env_steps <= 25 + pcfg.h_max  # budget checked per segment


def test_accounting_identity_per_segment():
    lat = calibrated_latency_model()
    pcfg = PolicyConfig(p_wrong=0.5, p_noise=0.3)
    rec, events = run_episode_traced("id", 2, 3, pcfg, SteerConfig(strategy="seal", k=4), lat)
    total = sum(e.sample_ms + e.verify_wait_ms for e in events)
    assert rec.sample_ms + rec.verify_wait_ms == pytest.approx(total)
    for e in events:
        assert e.decided_at - e.t0 == pytest.approx(e.sample_ms + e.verify_wait_ms)
    if rec.env_steps:
        assert rec.amortized_overhead_ms_per_step == pytest.approx(
            (rec.sample_ms + rec.verify_wait_ms) / rec.env_steps
        )


def test_virtual_clock_monotone():
    clock = VirtualClock()
    clock.advance_to(5.0)
    with pytest.raises(ValueError):
        clock.advance_to(4.0)


def test_chunked_value_episode_completes():
    lat = calibrated_latency_model()
    rec = run_episode(
        "id",
        0,
        3,
        zero_defect(),
        SteerConfig(strategy="value", k=3, chunk_len=5, step_budget=80),
        lat,
    )
    assert rec.success


def test_steer_config_validation():
    with pytest.raises(ValueError):
        SteerConfig(strategy="magic")
    with pytest.raises(ValueError):
        SteerConfig(strategy="seal", k=0)
    with pytest.raises(ValueError):
        SteerConfig(strategy="seal", chunk_len=5)
    with pytest.raises(ValueError):
        SteerConfig(strategy="value", chunk_len=0)
    with pytest.raises(ValueError):
        SteerConfig(strategy="seal", fallback="never")


def test_first_candidate_select():
    state, task, plan = basket_plan()
    cands = [make_candidate(0, state, None, 70.0), make_candidate(1, state, None, 10.0)]
    sel = first_candidate_select(cands, VirtualClock(100.0))
    assert sel.chosen == 0
    assert sel.decided_at == pytest.approx(170.0)
