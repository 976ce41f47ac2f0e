"""Deterministic text gridworld with six household task families.

The world is a complete graph of locations (any ``goto`` takes one step):
rooms where objects start, four stations (sink, microwave, fridge, lamp)
that change object state, and receptacles that serve as placement goals.
Invalid actions are silent no-ops so the action space stays fixed.
"""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

CATEGORIES = ("pick", "look", "clean", "heat", "cool", "pick2")
STATIONS = ("sink", "microwave", "fridge", "lamp")
FLAGS = ("clean", "hot", "cold", "examined")
ACTION_KINDS = ("goto", "take", "put", "use", "noop")

# station -> flag it sets on the held object
STATION_EFFECT = {"sink": "clean", "microwave": "hot", "fridge": "cold", "lamp": "examined"}
# category -> flag the target must carry at the end (None: placement only)
REQUIRED_FLAG = {
    "pick": None,
    "look": "examined",
    "clean": "clean",
    "heat": "hot",
    "cool": "cold",
    "pick2": None,
}

DEFAULT_MAX_STEPS = 12


class WorldError(ValueError):
    pass


class UnknownEntity(WorldError):
    pass


class UnknownCategory(WorldError):
    pass


class LayoutError(WorldError):
    pass


@dataclass(frozen=True, order=True)
class Action:
    kind: str
    arg: str | None = None

    def __str__(self) -> str:
        return self.kind if self.arg is None else f"{self.kind}({self.arg})"


NOOP = Action("noop")


@dataclass(frozen=True)
class WorldLayout:
    rooms: tuple[str, ...]
    receptacles: tuple[str, ...]
    objects: tuple[str, ...]
    initial: tuple[str, ...]  # initial location per object, aligned with ``objects``
    stations: tuple[str, ...] = STATIONS

    def __post_init__(self):
        if sorted(self.stations) != sorted(STATIONS):
            raise LayoutError(f"stations must be exactly {STATIONS}, got {self.stations}")
        names = self.locations + self.objects
        if len(set(names)) != len(names):
            raise LayoutError("entity names must be unique")
        if not self.rooms or not self.receptacles or not self.objects:
            raise LayoutError("layout needs at least one room, receptacle and object")
        if len(self.initial) != len(self.objects):
            raise LayoutError("one initial location per object is required")
        for obj, loc in zip(self.objects, self.initial):
            if loc not in self.rooms and loc not in self.receptacles:
                raise LayoutError(f"object {obj!r} starts at invalid location {loc!r}")

    @property
    def locations(self) -> tuple[str, ...]:
        return self.rooms + self.stations + self.receptacles

    @property
    def actions(self) -> tuple[Action, ...]:
        return _action_table(self)

    def action_index(self, action: Action) -> int:
        try:
            return _action_lookup(self)[action]
        except KeyError:
            raise UnknownEntity(f"action {action} is not in the action table") from None

    def with_object(self, name: str, location: str) -> "WorldLayout":
        return replace(self, objects=self.objects + (name,), initial=self.initial + (location,))


_ACTION_CACHE: dict[WorldLayout, tuple[Action, ...]] = {}
_LOOKUP_CACHE: dict[WorldLayout, dict[Action, int]] = {}


def _action_table(layout: WorldLayout) -> tuple[Action, ...]:
    table = _ACTION_CACHE.get(layout)
    if table is None:
        table = (
            tuple(Action("goto", loc) for loc in layout.locations)
            + tuple(Action("take", obj) for obj in layout.objects)
            + tuple(Action("put", rec) for rec in layout.receptacles)
            + tuple(Action("use", st) for st in layout.stations)
            + (NOOP,)
        )
        _ACTION_CACHE[layout] = table
    return table


def _action_lookup(layout: WorldLayout) -> dict[Action, int]:
    lookup = _LOOKUP_CACHE.get(layout)
    if lookup is None:
        lookup = {a: i for i, a in enumerate(_action_table(layout))}
        _LOOKUP_CACHE[layout] = lookup
    return lookup


def default_layout() -> WorldLayout:
    """4 rooms, 4 stations, 2 receptacles, 4 objects (one per room)."""
    return WorldLayout(
        rooms=("kitchen", "hallway", "bedroom", "study"),
        receptacles=("shelf", "drawer"),
        objects=("apple", "mug", "book", "cloth"),
        initial=("kitchen", "hallway", "bedroom", "study"),
    )


def parse_layout(text: str) -> WorldLayout:
    """Parse the ``key: a, b, c`` layout format.

    Keys: ``rooms``, ``stations`` (optional), ``receptacles`` and ``objects``,
    where objects are written ``name@location``.
    """
    fields: dict[str, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise LayoutError(f"line {lineno}: expected 'key: values'")
        key, _, rest = line.partition(":")
        fields[key.strip()] = [v.strip() for v in rest.split(",") if v.strip()]
    missing = {"rooms", "receptacles", "objects"} - fields.keys()
    if missing:
        raise LayoutError(f"layout missing keys: {sorted(missing)}")
    objects, initial = [], []
    for item in fields["objects"]:
        name, sep, loc = item.partition("@")
        if not sep:
            raise LayoutError(f"object entry {item!r} must be name@location")
        objects.append(name.strip())
        initial.append(loc.strip())
    return WorldLayout(
        rooms=tuple(fields["rooms"]),
        receptacles=tuple(fields["receptacles"]),
        objects=tuple(objects),
        initial=tuple(initial),
        stations=tuple(fields.get("stations", STATIONS)),
    )


def format_layout(layout: WorldLayout) -> str:
    lines = [
        "rooms: " + ", ".join(layout.rooms),
        "stations: " + ", ".join(layout.stations),
        "receptacles: " + ", ".join(layout.receptacles),
        "objects: " + ", ".join(f"{o}@{l}" for o, l in zip(layout.objects, layout.initial)),
    ]
    return "\n".join(lines) + "\n"


def load_layout(path: str | Path) -> WorldLayout:
    return parse_layout(Path(path).read_text())


@dataclass(frozen=True)
class Task:
    category: str
    targets: tuple[str, ...]
    goal: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise UnknownCategory(self.category)
        want = 2 if self.category == "pick2" else 1
        if len(self.targets) != want:
            raise ValueError(f"{self.category} needs {want} target(s), got {len(self.targets)}")

    @property
    def instruction(self) -> str:
        verb = {
            "pick": "put",
            "look": "examine under the lamp, then put",
            "clean": "clean",
            "heat": "heat",
            "cool": "cool",
            "pick2": "put",
        }[self.category]
        things = " and ".join(f"the {t}" for t in self.targets)
        if self.category in ("clean", "heat", "cool"):
            return f"{verb} {things} and put it in the {self.goal}"
        return f"{verb} {things} in the {self.goal}"

    def stable_hash(self) -> int:
        return zlib.crc32(f"{self.category}|{','.join(self.targets)}|{self.goal}".encode())


@dataclass(frozen=True)
class WorldState:
    layout: WorldLayout = field(repr=False)
    task: Task
    location: str
    holding: str | None
    object_locations: tuple[str | None, ...]
    flags: tuple[frozenset[str], ...]
    placed_count: int
    t: int
    max_steps: int

    def location_of(self, obj: str) -> str | None:
        return self.object_locations[self.layout.objects.index(obj)]

    def flags_of(self, obj: str) -> frozenset[str]:
        return self.flags[self.layout.objects.index(obj)]

    def visible_objects(self) -> tuple[str, ...]:
        return tuple(o for o, l in zip(self.layout.objects, self.object_locations) if l == self.location)


@dataclass(frozen=True)
class Observation:
    location: str
    visible: tuple[tuple[str, frozenset[str]], ...]
    holding: str | None
    holding_flags: frozenset[str]
    category: str
    targets: tuple[str, ...]
    goal: str
    pending: tuple[str, ...]  # targets not yet resting in the goal receptacle
    focus_flags: frozenset[str]  # flags of the held target, else of the first pending one
    instruction: str

    @property
    def visible_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.visible)


def observe(state: WorldState) -> Observation:
    task = state.task
    pending = tuple(t for t in task.targets if state.location_of(t) != task.goal)
    if state.holding is not None and state.holding in pending:
        focus = state.holding
    else:
        focus = pending[0] if pending else None
    return Observation(
        location=state.location,
        visible=tuple((o, state.flags_of(o)) for o in state.visible_objects()),
        holding=state.holding,
        holding_flags=state.flags_of(state.holding) if state.holding else frozenset(),
        category=task.category,
        targets=task.targets,
        goal=task.goal,
        pending=pending,
        focus_flags=state.flags_of(focus) if focus else frozenset(),
        instruction=task.instruction,
    )


def check_task(layout: WorldLayout, task: Task) -> None:
    for t in task.targets:
        if t not in layout.objects:
            raise UnknownEntity(f"object {t!r} not in layout")
    if task.goal not in layout.receptacles:
        raise UnknownEntity(f"receptacle {task.goal!r} not in layout")


def reset(layout: WorldLayout, task: Task, seed: int, max_steps: int = DEFAULT_MAX_STEPS):
    """Start an episode: seed picks the start room and permutes initial placements."""
    check_task(layout, task)
    rng = np.random.default_rng(seed)
    start = layout.rooms[int(rng.integers(len(layout.rooms)))]
    perm = rng.permutation(len(layout.objects))
    placements = tuple(layout.initial[int(i)] for i in perm)
    state = WorldState(
        layout=layout,
        task=task,
        location=start,
        holding=None,
        object_locations=placements,
        flags=tuple(frozenset() for _ in layout.objects),
        placed_count=0,
        t=0,
        max_steps=max_steps,
    )
    state = replace(state, placed_count=_placed(state))
    return state, observe(state)


def _placed(state: WorldState) -> int:
    return sum(state.location_of(t) == state.task.goal for t in state.task.targets)


def goal_reached(state: WorldState) -> bool:
    task = state.task
    if task.category == "pick2":
        return state.placed_count == 2
    target = task.targets[0]
    if state.location_of(target) != task.goal:
        return False
    flag = REQUIRED_FLAG[task.category]
    return flag is None or flag in state.flags_of(target)


def _transition(state: WorldState, action: Action) -> WorldState:
    layout = state.layout
    kind, arg = action.kind, action.arg
    if kind == "goto" and arg in layout.locations and arg != state.location:
        return replace(state, location=arg)
    if kind == "take" and arg in layout.objects and state.holding is None:
        i = layout.objects.index(arg)
        if state.object_locations[i] == state.location:
            locs = list(state.object_locations)
            locs[i] = None
            return replace(state, holding=arg, object_locations=tuple(locs))
    if kind == "put" and arg in layout.receptacles and state.holding is not None and state.location == arg:
        i = layout.objects.index(state.holding)
        locs = list(state.object_locations)
        locs[i] = arg
        return replace(state, holding=None, object_locations=tuple(locs))
    if kind == "use" and arg in layout.stations and state.holding is not None and state.location == arg:
        if arg == "lamp" and state.holding not in state.task.targets:
            return state
        i = layout.objects.index(state.holding)
        flags = set(state.flags[i])
        effect = STATION_EFFECT[arg]
        flags.add(effect)
        if effect == "hot":
            flags.discard("cold")
        elif effect == "cold":
            flags.discard("hot")
        if frozenset(flags) == state.flags[i]:
            return state
        new = list(state.flags)
        new[i] = frozenset(flags)
        return replace(state, flags=tuple(new))
    return state


def apply_action(state: WorldState, action: Action) -> WorldState:
    """World dynamics without the clock; invalid actions return ``state`` itself."""
    nxt = _transition(state, action)
    if nxt is state:
        return state
    return replace(nxt, placed_count=_placed(nxt))


def step(state: WorldState, action: Action):
    """Advance one tick. Returns ``(state, observation, done, success)``."""
    if state.t >= state.max_steps:
        raise WorldError("episode already exhausted its step budget")
    nxt = apply_action(state, action)
    nxt = replace(nxt, t=state.t + 1)
    success = goal_reached(nxt)
    done = success or nxt.t >= nxt.max_steps
    return nxt, observe(nxt), done, success


def enumerate_tasks(layout: WorldLayout, category: str) -> list[Task]:
    if category not in CATEGORIES:
        raise UnknownCategory(category)
    if category == "pick2":
        pairs = itertools.combinations(layout.objects, 2)
        return [Task(category, pair, r) for pair in pairs for r in layout.receptacles]
    return [Task(category, (o,), r) for o in layout.objects for r in layout.receptacles]


def all_tasks(layout: WorldLayout) -> list[Task]:
    return [t for c in CATEGORIES for t in enumerate_tasks(layout, c)]


def sample_task(layout: WorldLayout, rng: np.random.Generator) -> Task:
    """Uniform draw over categories, then uniform over that category's tasks."""
    category = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
    tasks = enumerate_tasks(layout, category)
    return tasks[int(rng.integers(len(tasks)))]
