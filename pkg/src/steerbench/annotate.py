"""Reasoning-annotated demonstration pipeline.

Expert demonstrations are generated per task, segmented at the frame
where each subgoal's predicate first becomes true (one sub-task's end is
the next one's start), and each segment gets a structured plan record in
the three-field text format. A validator re-checks coverage, contiguity,
the text template, and that every segment's terminal state satisfies the
plan it was annotated with. Datasets are line-oriented JSON: one episode
per line, self-describing keys.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .policy import PLAN_TEMPLATE_RE, PlanRecord, sentence_for_subgoal
from .taskworld import (
    ActionToken,
    TaskSpec,
    WorldState,
    eval_predicate,
    expert_action,
    sample_scene,
    step,
    suite_size,
)


class AnnotationError(Exception):
    """Trajectory cannot be segmented against its task."""


@dataclass(frozen=True)
class Frame:
    state: WorldState
    action: ActionToken


@dataclass(frozen=True)
class Trajectory:
    task: TaskSpec
    frames: tuple[Frame, ...]
    final_state: WorldState

    def post_state(self, i: int) -> WorldState:
        """State after executing frame i."""
        return self.frames[i + 1].state if i + 1 < len(self.frames) else self.final_state


@dataclass(frozen=True)
class AnnotatedSegment:
    plan: PlanRecord
    start: int
    end: int  # exclusive
    text: str = ""

    def __post_init__(self):
        if not self.text:
            object.__setattr__(self, "text", self.plan.render())


def generate_demo(task: TaskSpec, seed: int) -> Trajectory:
    """Expert rollout solving the task's subgoals in order. The scene is
    regenerated from (task.suite_tag, task.task_index, seed), so equal
    inputs give bit-identical trajectories."""
    state, check = sample_scene(task.suite_tag, task.task_index, seed)
    if check.subgoals != task.subgoals:
        raise AnnotationError("task does not match its suite/index definition")
    frames: list[Frame] = []
    for goal in task.subgoals:
        while True:
            action = expert_action(state, goal)
            if action is ActionToken.THINK:
                break
            frames.append(Frame(state=state, action=action))
            state = step(state, action)
    if not all(eval_predicate(state, g) for g in task.subgoals):
        raise AnnotationError(f"expert failed to solve {task.instruction!r}")
    return Trajectory(task=task, frames=tuple(frames), final_state=state)


def segment_trajectory(traj: Trajectory) -> list[AnnotatedSegment]:
    """Place one boundary per subgoal at the first frame whose post-state
    satisfies it; segments are contiguous and cover the whole
    trajectory."""
    sentences = [sentence_for_subgoal(g) for g in traj.task.subgoals]
    segments: list[AnnotatedSegment] = []
    start = 0
    for j, goal in enumerate(traj.task.subgoals):
        end = None
        for i in range(start, len(traj.frames)):
            if eval_predicate(traj.post_state(i), goal):
                end = i + 1
                break
        if end is None:
            raise AnnotationError(f"subgoal {goal} never completes")
        if j == len(traj.task.subgoals) - 1:
            end = len(traj.frames)  # last segment absorbs any tail
        plan = PlanRecord(
            plans=tuple(sentences),
            done=tuple(sentences[:j]),
            now=sentences[j],
            target=goal,
            index=j,
        )
        segments.append(AnnotatedSegment(plan=plan, start=start, end=end))
        start = end
    return segments


@dataclass
class ValidationReport:
    episodes: int = 0
    segments: int = 0
    passed: dict = field(default_factory=dict)
    failed: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    CHECKS = ("coverage", "format", "terminal_predicate")

    def ok(self) -> bool:
        return not self.violations

    def record(self, check: str, ok: bool, episode: int, detail: str = "") -> None:
        bucket = self.passed if ok else self.failed
        bucket[check] = bucket.get(check, 0) + 1
        if not ok:
            self.violations.append(
                {"episode": episode, "check": check, "detail": detail}
            )

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "segments": self.segments,
            "passed": self.passed,
            "failed": self.failed,
            "violations": self.violations,
        }


def validate_annotations(
    dataset: list[tuple[Trajectory, list[AnnotatedSegment]]]
) -> ValidationReport:
    """Report-only consistency audit of an annotated dataset."""
    report = ValidationReport(episodes=len(dataset))
    for ep, (traj, segments) in enumerate(dataset):
        report.segments += len(segments)

        covered = (
            bool(segments)
            and segments[0].start == 0
            and segments[-1].end == len(traj.frames)
            and all(
                segments[i].end == segments[i + 1].start
                for i in range(len(segments) - 1)
            )
            and all(s.start < s.end for s in segments)
        )
        report.record(
            "coverage",
            covered,
            ep,
            "segments must be ordered, disjoint, and cover every frame",
        )

        for seg in segments:
            m = PLAN_TEMPLATE_RE.match(seg.text)
            format_ok = bool(m) and seg.text == seg.plan.render()
            report.record(
                "format",
                format_ok,
                ep,
                f"segment {seg.plan.index} text does not match the template",
            )

        for seg in segments:
            last = min(seg.end, len(traj.frames)) - 1
            terminal_ok = (
                0 <= last < len(traj.frames)
                and eval_predicate(traj.post_state(last), seg.plan.target)
            )
            report.record(
                "terminal_predicate",
                terminal_ok,
                ep,
                f"segment {seg.plan.index} terminal state misses its target",
            )
    return report


# ---------------------------------------------------------------------------
# dataset serialization (one episode per line)


def episode_to_dict(traj: Trajectory, segments: list[AnnotatedSegment]) -> dict:
    return {
        "task": traj.task.to_dict(),
        "frames": [
            {"state": f.state.to_dict(), "action": f.action.value} for f in traj.frames
        ],
        "final_state": traj.final_state.to_dict(),
        "segments": [
            {
                "plan": s.plan.to_dict(),
                "start": s.start,
                "end": s.end,
                "text": s.text,
            }
            for s in segments
        ],
    }


def episode_from_dict(d: dict) -> tuple[Trajectory, list[AnnotatedSegment]]:
    task = TaskSpec.from_dict(d["task"])
    frames = tuple(
        Frame(state=WorldState.from_dict(f["state"]), action=ActionToken(f["action"]))
        for f in d["frames"]
    )
    traj = Trajectory(
        task=task, frames=frames, final_state=WorldState.from_dict(d["final_state"])
    )
    segments = [
        AnnotatedSegment(
            plan=PlanRecord.from_dict(s["plan"]),
            start=s["start"],
            end=s["end"],
            text=s["text"],
        )
        for s in d["segments"]
    ]
    return traj, segments


def write_dataset(
    path: str | Path, dataset: list[tuple[Trajectory, list[AnnotatedSegment]]]
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj, segments in dataset:
            fh.write(json.dumps(episode_to_dict(traj, segments), sort_keys=True))
            fh.write("\n")


def read_dataset(path: str | Path) -> list[tuple[Trajectory, list[AnnotatedSegment]]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(episode_from_dict(json.loads(line)))
    return out


def build_dataset(
    suite: str, episodes: int, seed: int
) -> list[tuple[Trajectory, list[AnnotatedSegment]]]:
    """Annotated expert dataset: episodes round-robin over the suite's
    tasks, each with a seed derived from (seed, episode)."""
    n_tasks = suite_size(suite)
    dataset = []
    for ep in range(episodes):
        task_index = ep % n_tasks
        ep_seed = int(
            np.random.SeedSequence([seed, ep]).generate_state(1, dtype=np.uint64)[0]
        )
        _state, task = sample_scene(suite, task_index, ep_seed)
        traj = generate_demo(task, ep_seed)
        dataset.append((traj, segment_trajectory(traj)))
    return dataset
