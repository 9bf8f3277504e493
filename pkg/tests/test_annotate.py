"""Demo generation, segmentation, and the annotation validator."""

import numpy as np
import pytest

from steerbench import annotate as an
from steerbench import taskworld as tw
from steerbench.annotate import (
    AnnotatedSegment,
    build_dataset,
    generate_demo,
    read_dataset,
    segment_trajectory,
    validate_annotations,
    write_dataset,
)
from steerbench.taskworld import ActionToken, eval_predicate, sample_scene


def manhattan(a, b):
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def test_demo_final_state_satisfies_all_subgoals():
    _s, task = sample_scene("id", 0, 11)
    traj = generate_demo(task, 11)
    assert all(eval_predicate(traj.final_state, g) for g in task.subgoals)
    assert all(f.action is not ActionToken.THINK for f in traj.frames)


def test_demo_deterministic():
    _s, task = sample_scene("id", 4, 2)
    assert generate_demo(task, 2) == generate_demo(task, 2)


def test_demo_length_matches_distance_oracle():
    # open-grid shortest paths are Manhattan distances; basket tasks have
    # no open/close detours, so the optimal count is fully predictable
    for seed in range(15):
        state, task = sample_scene("id", 0, seed)
        pos = state.gripper.pos
        want = 0
        for goal in task.subgoals:
            obj = state.object(goal.obj)
            fix = state.fixture(goal.fixture)
            want += manhattan(pos, obj.pos) + 1 + manhattan(obj.pos, fix.pos) + 1
            pos = fix.pos
        traj = generate_demo(task, seed)
        assert len(traj.frames) == want


def test_single_subgoal_task_yields_one_segment():
    _s, task = sample_scene("id", 5, 3)
    traj = generate_demo(task, 3)
    segments = segment_trajectory(traj)
    assert len(segments) == 1
    assert segments[0].start == 0 and segments[0].end == len(traj.frames)


def test_segment_boundary_matches_scan_oracle():
    _s, task = sample_scene("id", 0, 9)
    traj = generate_demo(task, 9)
    segments = segment_trajectory(traj)
    first_goal = task.subgoals[0]
    oracle_end = next(
        i + 1
        for i in range(len(traj.frames))
        if eval_predicate(traj.post_state(i), first_goal)
    )
    assert segments[0].end == oracle_end
    assert segments[1].start == oracle_end


def test_segment_count_varies_across_tasks():
    counts = set()
    for ti in range(tw.suite_size("id")):
        _s, task = sample_scene("id", ti, 0)
        counts.add(len(segment_trajectory(generate_demo(task, 0))))
    assert len(counts) > 1


def test_segmentation_idempotent():
    _s, task = sample_scene("id", 3, 5)
    traj = generate_demo(task, 5)
    assert segment_trajectory(traj) == segment_trajectory(traj)


def test_segment_plans_have_correct_done_prefixes():
    _s, task = sample_scene("id", 0, 4)
    traj = generate_demo(task, 4)
    for j, seg in enumerate(segment_trajectory(traj)):
        assert seg.plan.index == j
        assert len(seg.plan.done) == j
        assert seg.plan.target == task.subgoals[j]


def test_validator_clean_on_pipeline_output():
    dataset = build_dataset("id", 100, seed=7)
    report = validate_annotations(dataset)
    assert report.ok()
    assert report.episodes == 100
    assert not report.failed


def test_validator_flags_shifted_boundary():
    _s, task = sample_scene("id", 0, 6)
    traj = generate_demo(task, 6)
    segments = segment_trajectory(traj)
    bad = [
        AnnotatedSegment(
            plan=segments[0].plan, start=segments[0].start, end=segments[0].end - 1
        ),
        AnnotatedSegment(
            plan=segments[1].plan, start=segments[1].start - 1, end=segments[1].end
        ),
    ]
    report = validate_annotations([(traj, bad)])
    assert any(v["check"] == "terminal_predicate" for v in report.violations)


def test_validator_flags_reordered_template_fields():
    _s, task = sample_scene("id", 5, 1)
    traj = generate_demo(task, 1)
    seg = segment_trajectory(traj)[0]
    scrambled = AnnotatedSegment(
        plan=seg.plan,
        start=seg.start,
        end=seg.end,
        text=(
            f"Now I need to do: {seg.plan.now}\n"
            f"Plans: {'; '.join(seg.plan.plans)}\n"
            f"What has been done: nothing"
        ),
    )
    report = validate_annotations([(traj, [scrambled])])
    assert any(v["check"] == "format" for v in report.violations)


def test_validator_flags_coverage_gap():
    _s, task = sample_scene("id", 0, 2)
    traj = generate_demo(task, 2)
    segments = segment_trajectory(traj)
    gappy = [segments[0]]  # drop the tail segment
    report = validate_annotations([(traj, gappy)])
    assert any(v["check"] == "coverage" for v in report.violations)


def test_dataset_round_trip(tmp_path):
    dataset = build_dataset("id", 12, seed=3)
    path = tmp_path / "demos.jsonl"
    write_dataset(path, dataset)
    loaded = read_dataset(path)
    assert loaded == dataset


def test_trajectory_frames_chain_under_step():
    _s, task = sample_scene("id", 2, 8)
    traj = generate_demo(task, 8)
    for i in range(len(traj.frames)):
        assert tw.step(traj.frames[i].state, traj.frames[i].action) == traj.post_state(i)


def test_segmenting_unsolved_trajectory_errors():
    _s, task = sample_scene("id", 0, 5)
    traj = generate_demo(task, 5)
    truncated = an.Trajectory(
        task=task, frames=traj.frames[:2], final_state=traj.frames[2].state
    )
    with pytest.raises(an.AnnotationError):
        segment_trajectory(truncated)


def test_cli_annotate_smoke(tmp_path, capsys):
    from steerbench.cli import main

    out = tmp_path / "data.jsonl"
    code = main(
        ["annotate", "--suite", "id", "--episodes", "5", "--seed", "1", "--out", str(out)]
    )
    assert code == 0
    assert out.exists()
    assert out.with_suffix(".jsonl.report.json").exists()
    assert len(read_dataset(out)) == 5
