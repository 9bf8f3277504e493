"""Symbolic tabletop-manipulation world.

A small gridworld stands in for a full manipulation benchmark: movable
objects, fixtures (basket, stove, drawer, plate, microwave), and a single
gripper on a ``grid_width x grid_height`` board. Dynamics are exact and
deterministic; instructions come from a closed grammar and compile to
ordered subgoal lists; a scripted expert provides shortest-path
demonstrations. Scene sampling covers the in-distribution suite, four
out-of-distribution variants, and a composition suite of unseen subgoal
pairs.

Everything here has value semantics: states are frozen dataclasses and
``step`` returns a new state, so states can be shared freely across
threads and environment replicas.
"""

from __future__ import annotations

import enum
import struct
import hashlib
import itertools
from dataclasses import dataclass, replace

import numpy as np

GRID_WIDTH = 6
GRID_HEIGHT = 6

OPENABLE_KINDS = frozenset({"drawer", "microwave"})
CONTAINMENT_KINDS = frozenset({"basket", "drawer", "microwave"})
SURFACE_KINDS = frozenset({"stove", "plate"})
FIXTURE_KINDS = frozenset({"basket", "stove", "drawer", "plate", "microwave"})

SUITES = (
    "id",
    "lang_rephrase",
    "lang_object_property",
    "visual_scene",
    "visual_viewpoint",
    "compose",
)
SUITE_CODES = {name: i for i, name in enumerate(SUITES)}


class TaskworldError(Exception):
    """Base class for world-level contract violations."""


class UnknownEntityError(TaskworldError):
    """A predicate or goal referenced an id that is not in the scene."""


class InstructionParseError(TaskworldError):
    """Instruction text does not match any grammar production."""


class PlanningError(TaskworldError):
    """The scripted expert cannot make progress toward the goal."""


class SceneError(TaskworldError):
    """Unknown suite or task index."""


class BlobError(TaskworldError):
    """Malformed state blob."""


class ActionToken(enum.Enum):
    """Discrete policy tokens. ``THINK`` is a control token: it marks the
    end of an action segment and is never applied to the dynamics."""

    MOVE_N = "MoveN"
    MOVE_S = "MoveS"
    MOVE_E = "MoveE"
    MOVE_W = "MoveW"
    GRASP = "Grasp"
    RELEASE = "Release"
    OPEN = "Open"
    CLOSE = "Close"
    ACTIVATE = "Activate"
    THINK = "Think"


DYNAMICS_TOKENS = tuple(t for t in ActionToken if t is not ActionToken.THINK)

_MOVE_DELTA = {
    ActionToken.MOVE_N: (0, 1),
    ActionToken.MOVE_S: (0, -1),
    ActionToken.MOVE_E: (1, 0),
    ActionToken.MOVE_W: (-1, 0),
}


@dataclass(frozen=True)
class ObjectState:
    id: str
    name: str
    pos: tuple[int, int]
    container: str | None = None


@dataclass(frozen=True)
class FixtureState:
    id: str
    kind: str
    pos: tuple[int, int]
    open: bool | None = None
    active: bool | None = None


@dataclass(frozen=True)
class Gripper:
    pos: tuple[int, int]
    held: str | None = None


@dataclass(frozen=True)
class WorldState:
    """Full world configuration; doubles as the policy observation."""

    grid_width: int
    grid_height: int
    objects: tuple[ObjectState, ...]
    fixtures: tuple[FixtureState, ...]
    gripper: Gripper
    tick: int = 0

    def object(self, obj_id: str) -> ObjectState:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise UnknownEntityError(f"no object {obj_id!r} in scene")

    def fixture(self, fix_id: str) -> FixtureState:
        for f in self.fixtures:
            if f.id == fix_id:
                return f
        raise UnknownEntityError(f"no fixture {fix_id!r} in scene")

    def fixture_at(self, pos: tuple[int, int]) -> FixtureState | None:
        for f in self.fixtures:
            if f.pos == pos:
                return f
        return None

    def to_dict(self) -> dict:
        return {
            "grid_width": self.grid_width,
            "grid_height": self.grid_height,
            "objects": [
                {"id": o.id, "name": o.name, "pos": list(o.pos), "container": o.container}
                for o in self.objects
            ],
            "fixtures": [
                {"id": f.id, "kind": f.kind, "pos": list(f.pos), "open": f.open, "active": f.active}
                for f in self.fixtures
            ],
            "gripper": {"pos": list(self.gripper.pos), "held": self.gripper.held},
            "tick": self.tick,
        }

    @staticmethod
    def from_dict(d: dict) -> "WorldState":
        return WorldState(
            grid_width=d["grid_width"],
            grid_height=d["grid_height"],
            objects=tuple(
                ObjectState(o["id"], o["name"], tuple(o["pos"]), o["container"])
                for o in d["objects"]
            ),
            fixtures=tuple(
                FixtureState(f["id"], f["kind"], tuple(f["pos"]), f["open"], f["active"])
                for f in d["fixtures"]
            ),
            gripper=Gripper(tuple(d["gripper"]["pos"]), d["gripper"]["held"]),
            tick=d["tick"],
        )


@dataclass(frozen=True)
class Subgoal:
    """Ground predicate over scene entities.

    kind: one of ``in`` (object inside a containment fixture), ``on``
    (object on a surface fixture), ``closed``, ``activated``.
    """

    kind: str
    fixture: str
    obj: str | None = None

    def __str__(self) -> str:
        if self.kind in ("in", "on"):
            return f"{self.kind.capitalize()}({self.obj},{self.fixture})"
        return f"{self.kind.capitalize()}({self.fixture})"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "fixture": self.fixture, "obj": self.obj}

    @staticmethod
    def from_dict(d: dict) -> "Subgoal":
        return Subgoal(kind=d["kind"], fixture=d["fixture"], obj=d.get("obj"))


@dataclass(frozen=True)
class TaskSpec:
    instruction: str
    subgoals: tuple[Subgoal, ...]
    suite_tag: str
    task_index: int = 0

    def to_dict(self) -> dict:
        return {
            "instruction": self.instruction,
            "subgoals": [g.to_dict() for g in self.subgoals],
            "suite_tag": self.suite_tag,
            "task_index": self.task_index,
        }

    @staticmethod
    def from_dict(d: dict) -> "TaskSpec":
        return TaskSpec(
            instruction=d["instruction"],
            subgoals=tuple(Subgoal.from_dict(g) for g in d["subgoals"]),
            suite_tag=d["suite_tag"],
            task_index=d.get("task_index", 0),
        )


# ---------------------------------------------------------------------------
# dynamics


def _clamp(v: int, lo: int, hi: int) -> int:
    return lo if v < lo else hi if v > hi else v


def step(state: WorldState, action: ActionToken) -> WorldState:
    """Apply one dynamics action. Inapplicable actions are silent no-ops
    (only the tick advances), so arbitrary sampled token streams are safe
    to execute."""
    if action is ActionToken.THINK:
        raise ValueError("Think is a control token, not a dynamics action")

    gpos = state.gripper.pos
    held = state.gripper.held
    objects = state.objects
    fixtures = state.fixtures
    gripper = state.gripper

    if action in _MOVE_DELTA:
        dx, dy = _MOVE_DELTA[action]
        npos = (
            _clamp(gpos[0] + dx, 0, state.grid_width - 1),
            _clamp(gpos[1] + dy, 0, state.grid_height - 1),
        )
        gripper = Gripper(npos, held)
        if held is not None and npos != gpos:
            objects = tuple(
                replace(o, pos=npos) if o.id == held else o for o in objects
            )

    elif action is ActionToken.GRASP:
        if held is None:
            candidates = [
                o
                for o in objects
                if o.pos == gpos
                and not (
                    o.container is not None
                    and _container_closed(state, o.container)
                )
            ]
            if candidates:
                # co-located objects can only coexist inside one fixture;
                # lowest id breaks the tie deterministically
                picked = min(candidates, key=lambda o: o.id)
                objects = tuple(
                    replace(o, container=None) if o.id == picked.id else o
                    for o in objects
                )
                gripper = Gripper(gpos, picked.id)

    elif action is ActionToken.RELEASE:
        if held is not None:
            fix_here = state.fixture_at(gpos)
            if fix_here is not None:
                openable_blocked = (
                    fix_here.kind in OPENABLE_KINDS and not fix_here.open
                )
                if not openable_blocked:
                    objects = tuple(
                        replace(o, container=fix_here.id, pos=gpos)
                        if o.id == held
                        else o
                        for o in objects
                    )
                    gripper = Gripper(gpos, None)
            else:
                occupied = any(
                    o.pos == gpos and o.id != held and o.container is None
                    for o in objects
                )
                if not occupied:
                    gripper = Gripper(gpos, None)

    elif action in (ActionToken.OPEN, ActionToken.CLOSE):
        fix_here = state.fixture_at(gpos)
        if fix_here is not None and fix_here.kind in OPENABLE_KINDS:
            want_open = action is ActionToken.OPEN
            fixtures = tuple(
                replace(f, open=want_open) if f.id == fix_here.id else f
                for f in fixtures
            )

    elif action is ActionToken.ACTIVATE:
        fix_here = state.fixture_at(gpos)
        if fix_here is not None and fix_here.kind == "stove":
            fixtures = tuple(
                replace(f, active=True) if f.id == fix_here.id else f
                for f in fixtures
            )

    return WorldState(
        grid_width=state.grid_width,
        grid_height=state.grid_height,
        objects=objects,
        fixtures=fixtures,
        gripper=gripper,
        tick=state.tick + 1,
    )


def _container_closed(state: WorldState, fix_id: str) -> bool:
    f = state.fixture(fix_id)
    return f.kind in OPENABLE_KINDS and not f.open


def eval_predicate(state: WorldState, goal: Subgoal) -> bool:
    """Ground-truth predicate check; pure, raises on unknown ids."""
    f = state.fixture(goal.fixture)
    if goal.kind == "in":
        if f.kind not in CONTAINMENT_KINDS:
            raise UnknownEntityError(f"{f.id!r} ({f.kind}) cannot contain objects")
        return state.object(goal.obj).container == f.id
    if goal.kind == "on":
        if f.kind not in SURFACE_KINDS:
            raise UnknownEntityError(f"{f.id!r} ({f.kind}) is not a surface")
        return state.object(goal.obj).container == f.id
    if goal.kind == "closed":
        if f.open is None:
            raise UnknownEntityError(f"{f.id!r} ({f.kind}) is not openable")
        return not f.open
    if goal.kind == "activated":
        if f.active is None:
            raise UnknownEntityError(f"{f.id!r} ({f.kind}) cannot be activated")
        return bool(f.active)
    raise UnknownEntityError(f"unknown predicate kind {goal.kind!r}")


def enumerate_subgoals(state: WorldState) -> list[Subgoal]:
    """All syntactically valid subgoals over the scene's entities, in a
    fixed deterministic order."""
    goals: list[Subgoal] = []
    for f in sorted(state.fixtures, key=lambda f: f.id):
        if f.kind in CONTAINMENT_KINDS:
            for o in sorted(state.objects, key=lambda o: o.id):
                goals.append(Subgoal("in", f.id, o.id))
        if f.kind in SURFACE_KINDS:
            for o in sorted(state.objects, key=lambda o: o.id):
                goals.append(Subgoal("on", f.id, o.id))
        if f.kind in OPENABLE_KINDS:
            goals.append(Subgoal("closed", f.id))
        if f.kind == "stove":
            goals.append(Subgoal("activated", f.id))
    return goals


# ---------------------------------------------------------------------------
# scripted expert


def _move_toward(frm: tuple[int, int], to: tuple[int, int]) -> ActionToken:
    # fixed axis order E, W, N, S breaks shortest-path ties reproducibly
    if to[0] > frm[0]:
        return ActionToken.MOVE_E
    if to[0] < frm[0]:
        return ActionToken.MOVE_W
    if to[1] > frm[1]:
        return ActionToken.MOVE_N
    return ActionToken.MOVE_S


def _release_legal(state: WorldState, pos: tuple[int, int]) -> bool:
    f = state.fixture_at(pos)
    if f is not None:
        return not (f.kind in OPENABLE_KINDS and not f.open)
    held = state.gripper.held
    return not any(
        o.pos == pos and o.id != held and o.container is None for o in state.objects
    )


def expert_action(
    state: WorldState, goal: Subgoal, rng: np.random.Generator | None = None
) -> ActionToken:
    """One step of the scripted move-then-manipulate controller.

    Returns ``THINK`` once the goal predicate holds. ``rng`` is accepted
    for optional action jitter but unused by default; the controller is
    fully deterministic.
    """
    if eval_predicate(state, goal):
        return ActionToken.THINK

    gpos = state.gripper.pos
    held = state.gripper.held

    if goal.kind in ("in", "on"):
        fix = state.fixture(goal.fixture)
        if held == goal.obj:
            if gpos != fix.pos:
                return _move_toward(gpos, fix.pos)
            if fix.kind in OPENABLE_KINDS and not fix.open:
                return ActionToken.OPEN
            return ActionToken.RELEASE
        if held is not None:
            # holding the wrong object: drop it at the nearest legal cell
            if _release_legal(state, gpos):
                return ActionToken.RELEASE
            target = _nearest_release_cell(state, gpos)
            if target is None:
                raise PlanningError("no legal release cell in scene")
            return _move_toward(gpos, target)
        obj = state.object(goal.obj)
        if obj.container is not None and _container_closed(state, obj.container):
            box = state.fixture(obj.container)
            if gpos != box.pos:
                return _move_toward(gpos, box.pos)
            return ActionToken.OPEN
        if gpos != obj.pos:
            return _move_toward(gpos, obj.pos)
        return ActionToken.GRASP

    if goal.kind == "closed":
        fix = state.fixture(goal.fixture)
        if gpos != fix.pos:
            return _move_toward(gpos, fix.pos)
        return ActionToken.CLOSE

    if goal.kind == "activated":
        fix = state.fixture(goal.fixture)
        if gpos != fix.pos:
            return _move_toward(gpos, fix.pos)
        return ActionToken.ACTIVATE

    raise PlanningError(f"no controller for goal {goal}")


def _nearest_release_cell(
    state: WorldState, frm: tuple[int, int]
) -> tuple[int, int] | None:
    best = None
    for x in range(state.grid_width):
        for y in range(state.grid_height):
            pos = (x, y)
            if pos == frm or not _release_legal(state, pos):
                continue
            d = abs(x - frm[0]) + abs(y - frm[1])
            key = (d, x, y)
            if best is None or key < best[0]:
                best = (key, pos)
    return None if best is None else best[1]


# ---------------------------------------------------------------------------
# object and fixture catalog

# id -> (canonical name, property-style alias)
OBJECT_CATALOG: dict[str, tuple[str, str]] = {
    "soup": ("alphabet soup", "can of soup"),
    "sauce": ("tomato sauce", "can of sauce"),
    "cream_cheese": ("cream cheese box", "box of cheese"),
    "butter": ("butter", "box of butter"),
    "moka": ("moka pot", "moka machine"),
    "kettle": ("kettle", "metal kettle"),
    "bowl": ("black bowl", "middle bowl"),
    "mug": ("white mug", "pure white cup"),
    "mug2": ("yellow mug", "cup with the yellow handle"),
    "pudding": ("chocolate pudding", "brown chocolate"),
    "book": ("book", "standing book"),
    "ketchup": ("ketchup", "ketchup bottle"),
    "milk": ("milk", "milk carton"),
    "juice": ("orange juice", "juice box"),
}

FIXTURE_CATALOG: dict[str, tuple[str, str]] = {
    # id -> (kind, instruction name)
    "basket": ("basket", "basket"),
    "stove": ("stove", "stove"),
    "drawer": ("drawer", "drawer"),
    "microwave": ("microwave", "microwave"),
    "plate_left": ("plate", "left plate"),
    "plate_right": ("plate", "right plate"),
}

_OBJ_BY_NAME = {name: oid for oid, (name, _alias) in OBJECT_CATALOG.items()}
_OBJ_BY_ALIAS = {alias: oid for oid, (_name, alias) in OBJECT_CATALOG.items()}
_FIX_BY_NAME = {name: fid for fid, (_kind, name) in FIXTURE_CATALOG.items()}


def object_name(obj_id: str) -> str:
    return OBJECT_CATALOG[obj_id][0]


def object_alias(obj_id: str) -> str:
    return OBJECT_CATALOG[obj_id][1]


def fixture_name(fix_id: str) -> str:
    return FIXTURE_CATALOG[fix_id][1]


def resolve_object(name: str) -> str | None:
    return _OBJ_BY_NAME.get(name) or _OBJ_BY_ALIAS.get(name)


def resolve_fixture(name: str) -> str | None:
    return _FIX_BY_NAME.get(name)


# ---------------------------------------------------------------------------
# instruction grammar

_PRODUCTIONS = (
    "put both the <A> and the <B> in the <F>",
    "put the <A> in the <F>",
    "put the <A> in the <F> and close it",
    "turn on the stove and put the <A> on it",
    "put the <A> on the <F1> and the <B> on the <F2>",
)


def _parse_object(text: str) -> str:
    oid = resolve_object(text)
    if oid is None:
        raise InstructionParseError(f"unknown object description {text!r}")
    return oid


def _parse_fixture(text: str) -> str:
    fid = resolve_fixture(text)
    if fid is None:
        raise InstructionParseError(f"unknown fixture description {text!r}")
    return fid


def compile_instruction(text: str) -> TaskSpec:
    """Parse an instruction against the closed grammar and emit the
    ordered subgoal list. Property-style object descriptions resolve
    through the alias table. Raises InstructionParseError with the
    nearest production on mismatch."""
    subgoals = _compile_subgoals(text)
    return TaskSpec(instruction=text, subgoals=tuple(subgoals), suite_tag="id")


def _compile_subgoals(text: str) -> list[Subgoal]:
    t = text.strip().rstrip(".")
    try:
        if t.startswith("put both the "):
            rest = t[len("put both the "):]
            if " in the " not in rest or " and " not in rest:
                raise InstructionParseError("expected 'A and the B in the F'")
            pair, fixture_part = rest.rsplit(" in the ", 1)
            # "the" before the second object is optional in surface form
            if " and the " in pair:
                a_txt, b_txt = pair.split(" and the ", 1)
            else:
                a_txt, b_txt = pair.split(" and ", 1)
            a, b = _parse_object(a_txt), _parse_object(b_txt)
            f = _parse_fixture(fixture_part)
            if FIXTURE_CATALOG[f][0] not in CONTAINMENT_KINDS:
                raise InstructionParseError(f"{fixture_part!r} cannot contain objects")
            return [Subgoal("in", f, a), Subgoal("in", f, b)]

        if t.startswith("turn on the stove and put the "):
            rest = t[len("turn on the stove and put the "):]
            if not rest.endswith(" on it"):
                raise InstructionParseError("expected '... on it'")
            a = _parse_object(rest[: -len(" on it")])
            return [Subgoal("activated", "stove"), Subgoal("on", "stove", a)]

        if t.startswith("put the ") and " on the " in t:
            rest = t[len("put the "):]
            first, second = rest.split(" and the ", 1)
            a_txt, f1_txt = first.split(" on the ", 1)
            b_txt, f2_txt = second.split(" on the ", 1)
            a, b = _parse_object(a_txt), _parse_object(b_txt)
            f1, f2 = _parse_fixture(f1_txt), _parse_fixture(f2_txt)
            for f, ftxt in ((f1, f1_txt), (f2, f2_txt)):
                if FIXTURE_CATALOG[f][0] not in SURFACE_KINDS:
                    raise InstructionParseError(f"{ftxt!r} is not a surface")
            return [Subgoal("on", f1, a), Subgoal("on", f2, b)]

        if t.startswith("put the ") and t.endswith(" and close it"):
            rest = t[len("put the "): -len(" and close it")]
            a_txt, f_txt = rest.split(" in the ", 1)
            a, f = _parse_object(a_txt), _parse_fixture(f_txt)
            if FIXTURE_CATALOG[f][0] not in OPENABLE_KINDS:
                raise InstructionParseError(f"{f_txt!r} cannot be closed")
            return [Subgoal("in", f, a), Subgoal("closed", f)]

        if t.startswith("put the ") and " in the " in t:
            rest = t[len("put the "):]
            a_txt, f_txt = rest.split(" in the ", 1)
            a, f = _parse_object(a_txt), _parse_fixture(f_txt)
            if FIXTURE_CATALOG[f][0] not in CONTAINMENT_KINDS:
                raise InstructionParseError(f"{f_txt!r} cannot contain objects")
            return [Subgoal("in", f, a)]
    except InstructionParseError as e:
        raise InstructionParseError(
            f"cannot parse {text!r}: {e}; nearest production: {_nearest_production(t)!r}"
        ) from None
    except ValueError:
        pass
    raise InstructionParseError(
        f"cannot parse {text!r}; nearest production: {_nearest_production(t)!r}"
    )


def _nearest_production(text: str) -> str:
    def shared_prefix(a: str, b: str) -> int:
        n = 0
        for ca, cb in zip(a, b):
            if ca != cb:
                break
            n += 1
        return n

    return max(_PRODUCTIONS, key=lambda p: shared_prefix(text, p))


def render_instruction(subgoals: tuple[Subgoal, ...] | list[Subgoal]) -> str:
    """Regenerate the canonical instruction for a subgoal list (inverse of
    compile_instruction over the grammar)."""
    gs = list(subgoals)
    if len(gs) == 2 and all(g.kind == "in" for g in gs) and gs[0].fixture == gs[1].fixture:
        a, b = object_name(gs[0].obj), object_name(gs[1].obj)
        return f"put both the {a} and the {b} in the {fixture_name(gs[0].fixture)}"
    if len(gs) == 2 and gs[0].kind == "activated" and gs[1].kind == "on":
        return f"turn on the stove and put the {object_name(gs[1].obj)} on it"
    if len(gs) == 2 and gs[0].kind == "in" and gs[1].kind == "closed":
        return (
            f"put the {object_name(gs[0].obj)} in the "
            f"{fixture_name(gs[0].fixture)} and close it"
        )
    if len(gs) == 2 and all(g.kind == "on" for g in gs):
        return (
            f"put the {object_name(gs[0].obj)} on the {fixture_name(gs[0].fixture)}"
            f" and the {object_name(gs[1].obj)} on the {fixture_name(gs[1].fixture)}"
        )
    if len(gs) == 1 and gs[0].kind == "in":
        return f"put the {object_name(gs[0].obj)} in the {fixture_name(gs[0].fixture)}"
    raise InstructionParseError(f"subgoal list {gs} matches no grammar production")


_REPHRASE_TEMPLATES = {
    "pair_in": "place the {a} in the {f} and the {b} as well",
    "single_in": "move the {a} into the {f}",
    "in_close": "move the {a} into the {f} and shut it",
    "stove_on": "switch the stove on and set the {a} on it",
    "pair_on": "set the {a} on the {f1} and the {b} on the {f2}",
}


def _production_key(subgoals: tuple[Subgoal, ...]) -> str:
    gs = list(subgoals)
    if len(gs) == 2 and all(g.kind == "in" for g in gs):
        return "pair_in"
    if len(gs) == 2 and gs[0].kind == "activated":
        return "stove_on"
    if len(gs) == 2 and gs[0].kind == "in" and gs[1].kind == "closed":
        return "in_close"
    if len(gs) == 2 and all(g.kind == "on" for g in gs):
        return "pair_on"
    return "single_in"


def rephrase_instruction(subgoals: tuple[Subgoal, ...]) -> str:
    """Out-of-grammar paraphrase: same objects and fixtures, different
    surface form."""
    key = _production_key(subgoals)
    gs = list(subgoals)
    tpl = _REPHRASE_TEMPLATES[key]
    if key == "pair_in":
        return tpl.format(
            a=object_name(gs[0].obj), b=object_name(gs[1].obj),
            f=fixture_name(gs[0].fixture),
        )
    if key == "stove_on":
        return tpl.format(a=object_name(gs[1].obj))
    if key == "in_close":
        return tpl.format(a=object_name(gs[0].obj), f=fixture_name(gs[0].fixture))
    if key == "pair_on":
        return tpl.format(
            a=object_name(gs[0].obj), f1=fixture_name(gs[0].fixture),
            b=object_name(gs[1].obj), f2=fixture_name(gs[1].fixture),
        )
    return tpl.format(a=object_name(gs[0].obj), f=fixture_name(gs[0].fixture))


def property_instruction(subgoals: tuple[Subgoal, ...]) -> str:
    """Alias-surface instruction: canonical form with every object name
    swapped for its property-style alias. Still parses via the alias
    table."""
    canonical = render_instruction(subgoals)
    for oid, (name, alias) in sorted(
        OBJECT_CATALOG.items(), key=lambda kv: -len(kv[1][0])
    ):
        canonical = canonical.replace(f"the {name}", f"the {alias}")
    return canonical


# ---------------------------------------------------------------------------
# task suite definitions

# (subgoal template, scene objects, scene fixtures); scene objects include
# standing non-target objects so every scene offers alternative subgoals
_ID_TASKS: tuple[dict, ...] = (
    {
        "subgoals": [("in", "basket", "soup"), ("in", "basket", "sauce")],
        "objects": ["soup", "sauce", "ketchup"],
        "fixtures": ["basket"],
    },
    {
        "subgoals": [("in", "basket", "cream_cheese"), ("in", "basket", "butter")],
        "objects": ["cream_cheese", "butter", "milk"],
        "fixtures": ["basket"],
    },
    {
        "subgoals": [("activated", "stove", None), ("on", "stove", "moka")],
        "objects": ["moka", "kettle"],
        "fixtures": ["stove"],
    },
    {
        "subgoals": [("in", "drawer", "bowl"), ("closed", "drawer", None)],
        "objects": ["bowl", "juice"],
        "fixtures": ["drawer"],
    },
    {
        "subgoals": [("on", "plate_left", "mug"), ("on", "plate_right", "mug2")],
        "objects": ["mug", "mug2"],
        "fixtures": ["plate_left", "plate_right"],
    },
    {
        "subgoals": [("in", "basket", "book")],
        "objects": ["book", "ketchup"],
        "fixtures": ["basket"],
    },
    {
        "subgoals": [("on", "plate_left", "mug"), ("on", "plate_right", "pudding")],
        "objects": ["mug", "pudding"],
        "fixtures": ["plate_left", "plate_right"],
    },
    {
        "subgoals": [("in", "basket", "soup"), ("in", "basket", "cream_cheese")],
        "objects": ["soup", "cream_cheese", "sauce"],
        "fixtures": ["basket"],
    },
    {
        "subgoals": [("on", "stove", "moka"), ("on", "stove", "kettle")],
        "objects": ["moka", "kettle"],
        "fixtures": ["stove"],
    },
    {
        "subgoals": [("in", "microwave", "mug2"), ("closed", "microwave", None)],
        "objects": ["mug2", "milk"],
        "fixtures": ["microwave"],
    },
)

# objects that appear in id-suite basket scenes; unseen pairs over this
# universe form the composition suite
_BASKET_UNIVERSE = ("soup", "sauce", "cream_cheese", "butter", "book", "ketchup", "milk", "juice")


def id_basket_pairs() -> set[frozenset]:
    pairs = set()
    for task in _ID_TASKS:
        goals = [g for g in task["subgoals"] if g[0] == "in" and g[1] == "basket"]
        if len(goals) == 2:
            pairs.add(frozenset((goals[0][2], goals[1][2])))
    return pairs


def compose_pairs() -> list[tuple[str, str]]:
    """Unseen basket pairs, in catalog enumeration order."""
    seen = id_basket_pairs()
    out = []
    for a, b in itertools.combinations(_BASKET_UNIVERSE, 2):
        if frozenset((a, b)) not in seen:
            out.append((a, b))
    return out[:13]


def suite_size(suite: str) -> int:
    if suite not in SUITE_CODES:
        raise SceneError(f"unknown suite {suite!r}")
    return len(compose_pairs()) if suite == "compose" else len(_ID_TASKS)


def _task_definition(suite: str, task_index: int) -> dict:
    if suite == "compose":
        pairs = compose_pairs()
        if not 0 <= task_index < len(pairs):
            raise SceneError(f"compose task index {task_index} out of range")
        a, b = pairs[task_index]
        # recombined scenes keep two bystander objects around, like the
        # source scenes they were drawn from
        extras = [o for o in _BASKET_UNIVERSE if o not in (a, b)][:2]
        return {
            "subgoals": [("in", "basket", a), ("in", "basket", b)],
            "objects": [a, b] + extras,
            "fixtures": ["basket"],
        }
    if not 0 <= task_index < len(_ID_TASKS):
        raise SceneError(f"task index {task_index} out of range for suite {suite!r}")
    return _ID_TASKS[task_index]


def _make_subgoals(raw: list[tuple]) -> tuple[Subgoal, ...]:
    return tuple(Subgoal(kind, fixture, obj) for kind, fixture, obj in raw)


def sample_scene(suite: str, task_index: int, seed: int) -> tuple[WorldState, TaskSpec]:
    """Deterministic scene and task for (suite, task_index, seed).

    The base layout depends only on (task_index, seed) so the language
    suites share the scene with the id suite; visual_scene adds seeded
    distractors on top; visual_viewpoint and compose mark the suite tag
    that the policy's corruption table keys on.
    """
    if suite not in SUITE_CODES:
        raise SceneError(f"unknown suite {suite!r}")
    base = _task_definition("compose" if suite == "compose" else "id", task_index)
    subgoals = _make_subgoals(base["subgoals"])

    layout_key = (
        [seed, SUITE_CODES["compose"], task_index, 0xC0]
        if suite == "compose"
        else [seed, task_index, 0xC0]
    )
    rng = np.random.default_rng(np.random.SeedSequence(layout_key))
    object_ids = list(base["objects"])
    fixture_ids = list(base["fixtures"])

    if suite == "visual_scene":
        deco = np.random.default_rng(
            np.random.SeedSequence([seed, SUITE_CODES[suite], task_index, 0xD1])
        )
        present = set(object_ids)
        spare = [o for o in OBJECT_CATALOG if o not in present]
        n_extra = 1 + int(deco.integers(0, 2))
        picks = deco.choice(len(spare), size=min(n_extra, len(spare)), replace=False)
        distractors = [spare[int(i)] for i in picks]
        targets = {g.obj for g in subgoals if g.obj is not None}
        standing = [o for o in object_ids if o not in targets]
        if standing and deco.random() < 0.5 and distractors:
            # substitute a non-target object instead of only adding
            object_ids[object_ids.index(standing[0])] = distractors.pop()
        object_ids.extend(distractors)
        if len(object_ids) <= len(base["objects"]):
            object_ids.append(spare[int(deco.integers(0, len(spare)))])

    cells = [(x, y) for x in range(GRID_WIDTH) for y in range(GRID_HEIGHT)]
    order = rng.permutation(len(cells))
    cursor = iter(int(i) for i in order)

    fixtures = []
    for fid in fixture_ids:
        pos = cells[next(cursor)]
        kind = FIXTURE_CATALOG[fid][0]
        fixtures.append(
            FixtureState(
                id=fid,
                kind=kind,
                pos=pos,
                open=False if kind in OPENABLE_KINDS else None,
                active=False if kind == "stove" else None,
            )
        )

    objects = []
    for oid in object_ids:
        # the cell permutation guarantees fixtures, objects, and gripper
        # land on distinct cells
        objects.append(ObjectState(id=oid, name=object_name(oid), pos=cells[next(cursor)]))

    gpos = cells[next(cursor)]

    state = WorldState(
        grid_width=GRID_WIDTH,
        grid_height=GRID_HEIGHT,
        objects=tuple(sorted(objects, key=lambda o: o.id)),
        fixtures=tuple(sorted(fixtures, key=lambda f: f.id)),
        gripper=Gripper(gpos),
    )

    if suite == "lang_rephrase":
        instruction = rephrase_instruction(subgoals)
    elif suite == "lang_object_property":
        instruction = property_instruction(subgoals)
    else:
        instruction = render_instruction(subgoals)

    task = TaskSpec(
        instruction=instruction,
        subgoals=subgoals,
        suite_tag=suite,
        task_index=task_index,
    )
    return state, task


# ---------------------------------------------------------------------------
# canonical snapshot encoding and hashing

_BLOB_MAGIC = b"TW01"
_KIND_CODES = {k: i for i, k in enumerate(sorted(FIXTURE_KINDS))}
_KIND_FROM_CODE = {i: k for k, i in _KIND_CODES.items()}


def _pack_str(s: str | None) -> bytes:
    if s is None:
        return struct.pack("<H", 0xFFFF)
    raw = s.encode("utf-8")
    if len(raw) >= 0xFFFF:
        raise BlobError("string too long for encoding")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.blob):
            raise BlobError("truncated blob")
        out = self.blob[self.at : self.at + n]
        self.at += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def i8(self) -> int:
        return struct.unpack("<b", self.take(1))[0]

    def string(self) -> str | None:
        n = self.u16()
        if n == 0xFFFF:
            return None
        return self.take(n).decode("utf-8")


def snapshot(state: WorldState) -> bytes:
    """Canonical little-endian encoding: header, then objects sorted by
    id, then fixtures sorted by id, then the gripper. Stable across runs
    and platforms, so hashes of equal states always agree."""
    parts = [
        _BLOB_MAGIC,
        struct.pack(
            "<BBI", state.grid_width, state.grid_height, state.tick
        ),
    ]
    objs = sorted(state.objects, key=lambda o: o.id)
    parts.append(struct.pack("<H", len(objs)))
    for o in objs:
        parts.append(_pack_str(o.id))
        parts.append(_pack_str(o.name))
        parts.append(struct.pack("<BB", o.pos[0], o.pos[1]))
        parts.append(_pack_str(o.container))
    fixes = sorted(state.fixtures, key=lambda f: f.id)
    parts.append(struct.pack("<H", len(fixes)))
    for f in fixes:
        parts.append(_pack_str(f.id))
        parts.append(struct.pack("<B", _KIND_CODES[f.kind]))
        parts.append(struct.pack("<BB", f.pos[0], f.pos[1]))
        parts.append(
            struct.pack(
                "<bb",
                -1 if f.open is None else int(f.open),
                -1 if f.active is None else int(f.active),
            )
        )
    parts.append(struct.pack("<BB", state.gripper.pos[0], state.gripper.pos[1]))
    parts.append(_pack_str(state.gripper.held))
    return b"".join(parts)


def restore(blob: bytes) -> WorldState:
    r = _Reader(blob)
    if r.take(4) != _BLOB_MAGIC:
        raise BlobError("bad magic")
    gw, gh, tick = r.u8(), r.u8(), r.u32()
    objects = []
    for _ in range(r.u16()):
        oid = r.string()
        name = r.string()
        pos = (r.u8(), r.u8())
        container = r.string()
        if oid is None or name is None:
            raise BlobError("object id/name missing")
        objects.append(ObjectState(oid, name, pos, container))
    fixtures = []
    for _ in range(r.u16()):
        fid = r.string()
        kind_code = r.u8()
        pos = (r.u8(), r.u8())
        open_raw, active_raw = r.i8(), r.i8()
        if fid is None or kind_code not in _KIND_FROM_CODE:
            raise BlobError("bad fixture entry")
        fixtures.append(
            FixtureState(
                fid,
                _KIND_FROM_CODE[kind_code],
                pos,
                None if open_raw < 0 else bool(open_raw),
                None if active_raw < 0 else bool(active_raw),
            )
        )
    gpos = (r.u8(), r.u8())
    held = r.string()
    if r.at != len(blob):
        raise BlobError("trailing bytes")
    return WorldState(
        grid_width=gw,
        grid_height=gh,
        objects=tuple(objects),
        fixtures=tuple(fixtures),
        gripper=Gripper(gpos, held),
        tick=tick,
    )


def state_hash(state: WorldState) -> int:
    """64-bit digest of the canonical encoding."""
    h = hashlib.blake2b(snapshot(state), digest_size=8)
    return int.from_bytes(h.digest(), "little")
