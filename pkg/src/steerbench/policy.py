"""Simulated plan-then-act policy.

The policy alternates between a think branch that emits a structured
textual plan record and an act branch that streams action tokens until it
emits ``THINK`` again. Instead of a learned model, behavior is driven by
the scripted expert plus configurable defect rates:

* ``p_plan_err``  - the plan record targets the wrong subgoal
* ``p_wrong``     - the act branch silently pursues a different subgoal
                    than the plan states (the plan/outcome misalignment
                    this project measures)
* ``p_noise``     - per-step uniformly random action substitution

Out-of-distribution suites scale these rates through a per-suite
corruption table; ``t_act`` plays the role of a sampling temperature and
scales the act-branch defects jointly. A vanilla, no-reasoning policy
that grounds straight from the instruction is included as the baseline.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .taskworld import (
    DYNAMICS_TOKENS,
    ActionToken,
    Subgoal,
    TaskSpec,
    WorldState,
    enumerate_subgoals,
    eval_predicate,
    expert_action,
    fixture_name,
    object_name,
    resolve_fixture,
    resolve_object,
)

PLAN_TEMPLATE_RE = re.compile(
    r"\APlans: (?P<plans>[^\n]*)\n"
    r"What has been done: (?P<done>[^\n]*)\n"
    r"Now I need to do: (?P<now>[^\n]*)\Z"
)


def sentence_for_subgoal(goal: Subgoal) -> str:
    if goal.kind == "in":
        return f"put the {object_name(goal.obj)} in the {fixture_name(goal.fixture)}"
    if goal.kind == "on":
        return f"put the {object_name(goal.obj)} on the {fixture_name(goal.fixture)}"
    if goal.kind == "closed":
        return f"close the {fixture_name(goal.fixture)}"
    if goal.kind == "activated":
        return f"turn on the {fixture_name(goal.fixture)}"
    raise ValueError(f"no sentence for subgoal {goal}")


def parse_plan_sentence(text: str) -> Subgoal:
    m = re.fullmatch(r"put the (.+) (in|on) the (.+)", text)
    if m:
        obj = resolve_object(m.group(1))
        fix = resolve_fixture(m.group(3))
        if obj is None or fix is None:
            raise ValueError(f"unresolvable plan sentence {text!r}")
        return Subgoal("in" if m.group(2) == "in" else "on", fix, obj)
    m = re.fullmatch(r"close the (.+)", text)
    if m:
        fix = resolve_fixture(m.group(1))
        if fix is None:
            raise ValueError(f"unresolvable plan sentence {text!r}")
        return Subgoal("closed", fix)
    m = re.fullmatch(r"turn on the (.+)", text)
    if m:
        fix = resolve_fixture(m.group(1))
        if fix is None:
            raise ValueError(f"unresolvable plan sentence {text!r}")
        return Subgoal("activated", fix)
    raise ValueError(f"unresolvable plan sentence {text!r}")


@dataclass(frozen=True)
class PlanRecord:
    """One intermediate reasoning step in the three-field format."""

    plans: tuple[str, ...]
    done: tuple[str, ...]
    now: str
    target: Subgoal
    index: int

    def render(self) -> str:
        done = "; ".join(self.done) if self.done else "nothing"
        return (
            f"Plans: {'; '.join(self.plans)}\n"
            f"What has been done: {done}\n"
            f"Now I need to do: {self.now}"
        )

    def to_dict(self) -> dict:
        return {
            "plans": list(self.plans),
            "done": list(self.done),
            "now": self.now,
            "target": self.target.to_dict(),
            "index": self.index,
        }

    @staticmethod
    def from_dict(d: dict) -> "PlanRecord":
        return PlanRecord(
            plans=tuple(d["plans"]),
            done=tuple(d["done"]),
            now=d["now"],
            target=Subgoal.from_dict(d["target"]),
            index=d["index"],
        )


@dataclass(frozen=True)
class CorruptionFactors:
    """Per-suite defect multipliers: ``plan`` scales p_plan_err, ``act``
    scales p_wrong and p_noise, ``ground`` scales the vanilla policy's
    combined grounding error."""

    plan: float = 1.0
    act: float = 1.0
    ground: float = 1.0


def default_corruption() -> dict[str, CorruptionFactors]:
    # ordering picked so the viewpoint shift dominates all other suites
    # and language shifts hurt the instruction-grounded vanilla policy
    # far more than the plan-conditioned one
    return {
        "id": CorruptionFactors(),
        "lang_rephrase": CorruptionFactors(plan=1.0, act=1.0, ground=3.0),
        "lang_object_property": CorruptionFactors(plan=1.0, act=1.25, ground=2.0),
        "visual_scene": CorruptionFactors(plan=1.0, act=1.25, ground=1.5),
        "visual_viewpoint": CorruptionFactors(plan=2.0, act=3.0, ground=4.0),
        "compose": CorruptionFactors(plan=1.0, act=3.0, ground=2.5),
    }


def _clamp01(p: float) -> float:
    return 0.0 if p < 0 else 1.0 if p > 1 else p


@dataclass(frozen=True)
class PolicyConfig:
    p_plan_err: float = 0.0
    p_wrong: float = 0.2
    p_noise: float = 0.05
    h_max: int = 40
    t_act: float = 1.0
    dynamics_noise: float = 0.0
    corruption: dict[str, CorruptionFactors] = field(default_factory=default_corruption)

    def __post_init__(self):
        for name in ("p_plan_err", "p_wrong", "p_noise", "dynamics_noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.h_max < 1:
            raise ValueError("h_max must be >= 1")

    def factors(self, suite: str) -> CorruptionFactors:
        return self.corruption.get(suite, CorruptionFactors())

    def effective(self, suite: str) -> "PolicyConfig":
        """Resolve suite corruption and temperature into flat rates. The
        episode driver applies this once; the returned config has the
        multipliers folded in (corruption cleared, t_act reset)."""
        f = self.factors(suite)
        return replace(
            self,
            p_plan_err=_clamp01(self.p_plan_err * f.plan),
            p_wrong=_clamp01(self.p_wrong * self.t_act * f.act),
            p_noise=_clamp01(self.p_noise * self.t_act * f.act),
            t_act=1.0,
            corruption={},
        )

    def grounding_error(self, suite: str) -> float:
        """Combined plan-and-act defect rate for the vanilla policy,
        computed from the raw (unresolved) rates."""
        f = self.factors(suite)
        return _clamp01((self.p_plan_err + self.p_wrong) * self.t_act * f.ground)


@dataclass
class SegmentState:
    """Act-branch context for one segment; owned by a single candidate."""

    intended: Subgoal
    steps_taken: int = 0


def done_prefix(state: WorldState, task: TaskSpec) -> int:
    """Length of the longest prefix of task subgoals satisfied in state."""
    n = 0
    for goal in task.subgoals:
        if not eval_predicate(state, goal):
            break
        n += 1
    return n


def generate_plan(
    state: WorldState,
    last: PlanRecord | None,
    task: TaskSpec,
    cfg: PolicyConfig,
    rng: np.random.Generator,
) -> PlanRecord | None:
    """Think branch: emit the next plan record, or None once every task
    subgoal holds (episode termination signal).

    With probability ``p_plan_err`` the current step of the plan targets
    a uniformly random other feasible subgoal of the scene; the rendered
    plan list carries that wrong sentence at the current position, so the
    record stays structurally well formed.
    """
    n_done = done_prefix(state, task)
    if n_done == len(task.subgoals):
        return None

    sentences = [sentence_for_subgoal(g) for g in task.subgoals]
    target = task.subgoals[n_done]

    if rng.random() < cfg.p_plan_err:
        alts = [g for g in enumerate_subgoals(state) if g != target]
        if alts:
            target = alts[int(rng.integers(0, len(alts)))]
            sentences[n_done] = sentence_for_subgoal(target)

    return PlanRecord(
        plans=tuple(sentences),
        done=tuple(sentences[:n_done]),
        now=sentences[n_done],
        target=target,
        index=0 if last is None else last.index + 1,
    )


def open_segment(
    plan: PlanRecord,
    state: WorldState,
    cfg: PolicyConfig,
    rng: np.random.Generator,
) -> SegmentState:
    """Act branch entry: commit to an intended subgoal for this segment.

    With probability ``p_wrong * t_act`` the segment pursues a uniformly
    random other syntactically valid subgoal of the scene instead of the
    plan's target."""
    intended = plan.target
    p = _clamp01(cfg.p_wrong * cfg.t_act)
    if rng.random() < p:
        alts = [g for g in enumerate_subgoals(state) if g != plan.target]
        if alts:
            intended = alts[int(rng.integers(0, len(alts)))]
    return SegmentState(intended=intended)


def next_token(
    state: WorldState,
    seg: SegmentState,
    cfg: PolicyConfig,
    rng: np.random.Generator,
) -> ActionToken:
    """Act branch step: THINK once the intended subgoal holds or the
    segment cap is reached, otherwise one expert step with probability
    ``1 - p_noise * t_act`` and a uniformly random action otherwise."""
    if eval_predicate(state, seg.intended) or seg.steps_taken >= cfg.h_max:
        return ActionToken.THINK
    seg.steps_taken += 1
    if rng.random() < _clamp01(cfg.p_noise * cfg.t_act):
        return DYNAMICS_TOKENS[int(rng.integers(0, len(DYNAMICS_TOKENS)))]
    return expert_action(state, seg.intended)


def vanilla_action(
    state: WorldState,
    task: TaskSpec,
    cfg: PolicyConfig,
    rng: np.random.Generator,
) -> ActionToken:
    """No-reasoning baseline: grounds the next subgoal directly from the
    instruction at every step, with the plan and act defects folded into
    a single per-call grounding error. Pass the raw (unresolved) config;
    suite adjustment happens here via the ``ground`` factor."""
    n_done = done_prefix(state, task)
    if n_done == len(task.subgoals):
        return ActionToken.THINK
    intended = task.subgoals[n_done]
    if rng.random() < cfg.grounding_error(task.suite_tag):
        alts = [g for g in enumerate_subgoals(state) if g != intended]
        if alts:
            intended = alts[int(rng.integers(0, len(alts)))]
    f = cfg.factors(task.suite_tag)
    if rng.random() < _clamp01(cfg.p_noise * cfg.t_act * f.act):
        return DYNAMICS_TOKENS[int(rng.integers(0, len(DYNAMICS_TOKENS)))]
    if eval_predicate(state, intended):
        return ActionToken.THINK
    return expert_action(state, intended)
