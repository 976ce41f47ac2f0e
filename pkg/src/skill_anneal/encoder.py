"""Fixed feature encoder for (history, current observation, skill rules, c).

Feature blocks, in order:

=========  ====================================================  ==========
block      contents                                               size
=========  ====================================================  ==========
location   one-hot agent location                                 L
holding    one-hot {nothing, pending target, other object}        3
objects    per object: is a pending target, is a visible target   2 * O
flags      clean/hot/cold/examined of the focus target            4
category   one-hot task category                                  6
goal       one-hot goal receptacle                                R
situation  one-hot of (category, holding slot, required flag met,     6*3*2*2*L
           pending target visible, location)
visited    locations seen in the retained history                 L
tried      actions taken in the retained history                  A
hint       one-hot action of the first firing skill rule          A
bias       constant 1                                             1
=========  ====================================================  ==========

The situation block is the joint index of the coarse observation features.
It lets a linear head give every decision-relevant state its own weights,
so rule-following can be stored in the observation weights without
interference between categories.

Compression with factor ``c`` keeps only the most recent ``ceil(H / c)``
history events, so larger factors genuinely forget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mini_world import CATEGORIES, FLAGS, REQUIRED_FLAG, Action, Observation, WorldLayout
from .skill_bank import first_match

HOLDING_SLOTS = ("nothing", "target", "other")
PER_OBJECT_FEATURES = 2
SITUATION_SCALE = 3.0


class InvalidCompression(ValueError):
    pass


def retained_events(history_len: int, c: float) -> int:
    if not c >= 1:
        raise InvalidCompression(f"compression factor must be >= 1, got {c}")
    if history_len <= 0:
        return 0
    return math.ceil(history_len / c)


@dataclass(frozen=True)
class FeatureLayout:
    """Block offsets for one world layout."""

    location: slice
    holding: slice
    objects: slice
    flags: slice
    category: slice
    goal: slice
    situation: slice
    visited: slice
    tried: slice
    hint: slice
    bias: int
    dim: int

    @property
    def observation(self) -> slice:
        return slice(self.location.start, self.situation.stop)

    @property
    def recency(self) -> slice:
        return slice(self.visited.start, self.tried.stop)


def feature_layout(layout: WorldLayout) -> FeatureLayout:
    sizes = [
        ("location", len(layout.locations)),
        ("holding", len(HOLDING_SLOTS)),
        ("objects", PER_OBJECT_FEATURES * len(layout.objects)),
        ("flags", len(FLAGS)),
        ("category", len(CATEGORIES)),
        ("goal", len(layout.receptacles)),
        ("situation", len(CATEGORIES) * len(HOLDING_SLOTS) * 4 * len(layout.locations)),
        ("visited", len(layout.locations)),
        ("tried", len(layout.actions)),
        ("hint", len(layout.actions)),
    ]
    blocks, start = {}, 0
    for name, size in sizes:
        blocks[name] = slice(start, start + size)
        start += size
    return FeatureLayout(**blocks, bias=start, dim=start + 1)


def feature_dim(layout: WorldLayout) -> int:
    return feature_layout(layout).dim


class ContextEncoder:
    """Encoder bound to one layout; ``encode`` is pure."""

    def __init__(self, layout: WorldLayout):
        self.layout = layout
        self.blocks = feature_layout(layout)
        self.dim = self.blocks.dim
        self._loc = {l: i for i, l in enumerate(layout.locations)}
        self._obj = {o: i for i, o in enumerate(layout.objects)}
        self._rec = {r: i for i, r in enumerate(layout.receptacles)}
        self._cat = {c: i for i, c in enumerate(CATEGORIES)}
        self._flag = {f: i for i, f in enumerate(FLAGS)}
        self._act = {a: i for i, a in enumerate(layout.actions)}

    def hint_action(self, current: Observation, rules) -> Action | None:
        return first_match(rules, current) if rules else None

    def encode(self, history, current: Observation, rules=(), c: float = 1.0) -> np.ndarray:
        keep = retained_events(len(history), c)
        b = self.blocks
        x = np.zeros(self.dim)
        x[b.location.start + self._loc[current.location]] = 1.0
        if current.holding is None:
            slot = 0
        elif current.holding in current.pending:
            slot = 1
        else:
            slot = 2
        x[b.holding.start + slot] = 1.0
        visible = current.visible_names
        for t in current.pending:
            j = b.objects.start + PER_OBJECT_FEATURES * self._obj[t]
            x[j] = 1.0
            if t in visible:
                x[j + 1] = 1.0
        for f in current.focus_flags:
            x[b.flags.start + self._flag[f]] = 1.0
        x[b.category.start + self._cat[current.category]] = 1.0
        x[b.goal.start + self._rec[current.goal]] = 1.0
        flag = REQUIRED_FLAG[current.category]
        treated = flag is None or flag in current.focus_flags
        seen = any(t in visible for t in current.pending)
        cell = ((self._cat[current.category] * len(HOLDING_SLOTS) + slot) * 2 + treated) * 2 + seen
        x[b.situation.start + cell * len(self._loc) + self._loc[current.location]] = SITUATION_SCALE
        if keep:
            for obs, action in history[len(history) - keep:]:
                x[b.visited.start + self._loc[obs.location]] = 1.0
                x[b.tried.start + self._act[action]] = 1.0
        hint = self.hint_action(current, rules)
        if hint is not None:
            x[b.hint.start + self._act[hint]] = 1.0
        x[b.bias] = 1.0
        return x


def encode(layout: WorldLayout, history, current: Observation, rules=(), c: float = 1.0) -> np.ndarray:
    return ContextEncoder(layout).encode(history, current, rules, c)
