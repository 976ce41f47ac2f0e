"""Skill files: front-matter plus ordered ``when ... then ...`` rules.

A skill file looks like::

    ---
    task: miniworld
    category: clean
    ---
    # Clean Before Placing
    ## Rules
    when task_is(clean) and holding(target) and at(sink) then use(sink)

Files live at ``<root>/<task>/<category>.md``. A bank assigns ids 1..N in
lexicographic path order. Rules are evaluated first-match-wins, files in
ascending id order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .mini_world import ACTION_KINDS, CATEGORIES, FLAGS, Action, Observation, WorldLayout

PREDICATES = {"holding": 1, "at": 1, "visible": 1, "state": 2, "task_is": 1}
ACTION_ARITY = {"goto": 1, "take": 1, "put": 1, "use": 1, "noop": 0}
GENERAL = "general"
# role symbols resolved against the current observation
ROLES = ("target", "goal", "any")

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_CALL = re.compile(rf"^(not\s+)?({_IDENT})\s*\(\s*([^()]*)\)$")
_RULE = re.compile(r"^when\s+(.+?)\s+then\s+(.+)$")
_NOOP = re.compile(r"^noop(\s*\(\s*\))?$")


class SkillError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.message = message
        self.line = line
        self.path = path
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{':'.join(where)}: {message}" if where else message)


class MissingFrontMatter(SkillError):
    pass


class UnknownPredicate(SkillError):
    pass


class UnknownAction(SkillError):
    pass


class EmptyRules(SkillError):
    pass


class RuleSyntaxError(SkillError):
    pass


class EmptyBank(SkillError):
    pass


class UnknownId(KeyError):
    pass


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple[str, ...]
    negated: bool = False

    def __post_init__(self):
        if self.predicate not in PREDICATES:
            raise UnknownPredicate(f"unknown predicate {self.predicate!r}")
        if len(self.args) != PREDICATES[self.predicate]:
            raise RuleSyntaxError(
                f"{self.predicate} takes {PREDICATES[self.predicate]} argument(s), got {len(self.args)}"
            )

    def __str__(self) -> str:
        body = f"{self.predicate}({', '.join(self.args)})"
        return f"not {body}" if self.negated else body

    def holds(self, obs: Observation) -> bool:
        return _eval_atom(self, obs) != self.negated


@dataclass(frozen=True)
class SkillRule:
    condition: tuple[Atom, ...]
    action: Action  # may carry role symbols, e.g. take(target)

    def __post_init__(self):
        if not self.condition:
            raise RuleSyntaxError("rule condition must be non-empty")

    def __str__(self) -> str:
        cond = " and ".join(str(a) for a in self.condition)
        return f"when {cond} then {self.action}"

    def fires(self, obs: Observation) -> bool:
        return all(atom.holds(obs) for atom in self.condition)


@dataclass(frozen=True)
class SkillFile:
    id: int
    task: str
    category: str
    title: str
    rules: tuple[SkillRule, ...]
    path: str


@dataclass(frozen=True)
class SkillBank:
    files: tuple[SkillFile, ...]

    @property
    def N(self) -> int:
        return len(self.files)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(f.id for f in self.files)

    def get(self, k: int) -> SkillFile:
        if not 1 <= k <= len(self.files):
            raise UnknownId(k)
        return self.files[k - 1]


def _parse_atom(text: str, lineno: int) -> Atom:
    m = _CALL.match(text.strip())
    if not m:
        raise RuleSyntaxError(f"malformed atom {text.strip()!r}", lineno)
    negated, name, argtext = bool(m.group(1)), m.group(2), m.group(3)
    if name not in PREDICATES:
        raise UnknownPredicate(f"unknown predicate {name!r}", lineno)
    args = tuple(a.strip() for a in argtext.split(",")) if argtext.strip() else ()
    if any(not re.fullmatch(_IDENT, a) for a in args):
        raise RuleSyntaxError(f"bad argument list in {text.strip()!r}", lineno)
    try:
        return Atom(name, args, negated)
    except SkillError as exc:
        raise type(exc)(exc.message, lineno) from None


def _parse_action(text: str, lineno: int) -> Action:
    text = text.strip()
    if _NOOP.match(text):
        return Action("noop")
    m = _CALL.match(text)
    if not m or m.group(1):
        raise UnknownAction(f"malformed action {text!r}", lineno)
    name, argtext = m.group(2), m.group(3)
    if name not in ACTION_ARITY:
        raise UnknownAction(f"unknown action {name!r}", lineno)
    args = [a.strip() for a in argtext.split(",")] if argtext.strip() else []
    if len(args) != ACTION_ARITY[name] or any(not re.fullmatch(_IDENT, a) for a in args):
        raise UnknownAction(f"action {name} takes {ACTION_ARITY[name]} argument(s)", lineno)
    return Action(name, args[0])


def parse_rule(line: str, lineno: int = 0) -> SkillRule:
    m = _RULE.match(line.strip())
    if not m:
        raise RuleSyntaxError(f"expected 'when <atoms> then <action>', got {line.strip()!r}", lineno)
    atoms = tuple(_parse_atom(part, lineno) for part in re.split(r"\s+and\s+", m.group(1)))
    return SkillRule(atoms, _parse_action(m.group(2), lineno))


def parse_skill_file(text: str, path: str = "<string>", file_id: int = 0) -> SkillFile:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "---":
        raise MissingFrontMatter("file must open with a '---' front-matter line", 1, path)
    meta: dict[str, str] = {}
    i = 1
    while i < len(lines) and lines[i].strip() != "---":
        line = lines[i].strip()
        if line:
            key, sep, value = line.partition(":")
            if not sep:
                raise MissingFrontMatter(f"front-matter line is not 'key: value': {line!r}", i + 1, path)
            meta[key.strip()] = value.strip()
        i += 1
    if i >= len(lines):
        raise MissingFrontMatter("front-matter block is never closed", len(lines), path)
    for key in ("task", "category"):
        if not meta.get(key):
            raise MissingFrontMatter(f"front-matter lacks '{key}'", i + 1, path)
    category = meta["category"]
    if category != GENERAL and category not in CATEGORIES:
        raise SkillError(f"unknown category {category!r}", i + 1, path)

    title = ""
    rules: list[SkillRule] = []
    in_rules = False
    rules_heading = None
    for lineno in range(i + 2, len(lines) + 1):
        line = lines[lineno - 1].strip()
        if not line:
            continue
        if line.startswith("## "):
            in_rules = line[3:].strip().lower() == "rules"
            if in_rules:
                rules_heading = lineno
            continue
        if line.startswith("# ") and not title and not in_rules:
            title = line[2:].strip()
            continue
        if in_rules:
            try:
                rules.append(parse_rule(line, lineno))
            except SkillError as exc:
                raise type(exc)(exc.message, lineno, path) from None
    if not rules:
        raise EmptyRules("no rules under a '## Rules' heading", rules_heading or len(lines), path)
    return SkillFile(file_id, meta["task"], category, title, tuple(rules), str(path))


def serialize_skill_file(skill: SkillFile) -> str:
    out = ["---", f"task: {skill.task}", f"category: {skill.category}", "---"]
    if skill.title:
        out.append(f"# {skill.title}")
    out.append("## Rules")
    out.extend(str(r) for r in skill.rules)
    return "\n".join(out) + "\n"


def load_bank(root_dir: str | Path) -> SkillBank:
    root = Path(root_dir)
    if not root.is_dir():
        raise FileNotFoundError(root)
    paths = sorted(p for p in root.glob("*/*.md") if p.is_file())
    files = []
    for k, path in enumerate(sorted(paths, key=lambda p: p.relative_to(root).as_posix()), 1):
        files.append(parse_skill_file(path.read_text(), path.relative_to(root).as_posix(), k))
    if not files:
        raise EmptyBank(f"no skill files under {root}/<task>/*.md")
    return SkillBank(tuple(files))


def rules_for(bank: SkillBank, active_ids, task_category: str) -> list[SkillRule]:
    """Rules of the active files: matching categories first, then the rest.

    Non-matching files still contribute their rules; their ``task_is`` guards
    keep them from firing.
    """
    ids = sorted(active_ids)
    for k in ids:
        bank.get(k)
    files = [bank.get(k) for k in ids]
    matching = [f for f in files if f.category in (GENERAL, task_category)]
    others = [f for f in files if f.category not in (GENERAL, task_category)]
    return [r for f in matching + others for r in f.rules]


def check_bank(bank: SkillBank, layout: WorldLayout) -> None:
    """Raise if any rule names an entity or flag the layout does not have."""
    entities = set(layout.locations) | set(layout.objects) | set(ROLES) | set(CATEGORIES)
    for f in bank.files:
        for lineno, rule in enumerate(f.rules, 1):
            for atom in rule.condition:
                args = atom.args
                if atom.predicate == "state":
                    if args[1] not in FLAGS:
                        raise SkillError(f"unknown flag {args[1]!r} in rule {lineno}", path=f.path)
                    args = args[:1]
                if atom.predicate == "task_is":
                    if args[0] not in CATEGORIES:
                        raise SkillError(f"unknown category {args[0]!r} in rule {lineno}", path=f.path)
                    continue
                for a in args:
                    if a not in entities:
                        raise SkillError(f"unknown entity {a!r} in rule {lineno}", path=f.path)
            if rule.action.kind not in ACTION_KINDS:
                raise UnknownAction(f"unknown action in rule {lineno}", path=f.path)
            if rule.action.arg is not None and rule.action.arg not in entities:
                raise SkillError(f"unknown entity {rule.action.arg!r} in rule {lineno}", path=f.path)


# --- evaluation against an observation ------------------------------------


def _focus(obs: Observation) -> str | None:
    if obs.holding is not None and obs.holding in obs.pending:
        return obs.holding
    return obs.pending[0] if obs.pending else None


def _flags_of(obs: Observation, obj: str) -> frozenset[str]:
    if obs.holding == obj:
        return obs.holding_flags
    for name, flags in obs.visible:
        if name == obj:
            return flags
    return frozenset()


def _eval_atom(atom: Atom, obs: Observation) -> bool:
    p, args = atom.predicate, atom.args
    if p == "task_is":
        return obs.category == args[0]
    if p == "at":
        loc = obs.goal if args[0] == "goal" else args[0]
        return obs.location == loc
    if p == "holding":
        x = args[0]
        if x == "any":
            return obs.holding is not None
        if x == "target":
            return obs.holding is not None and obs.holding in obs.pending
        return obs.holding == x
    if p == "visible":
        x = args[0]
        names = obs.visible_names
        if x == "target":
            return any(t in names for t in obs.pending)
        if x == "any":
            return bool(names)
        return x in names
    if p == "state":
        x, flag = args
        if x == "target":
            return flag in obs.focus_flags if _focus(obs) else False
        return flag in _flags_of(obs, x)
    raise UnknownPredicate(p)


def resolve_action(action: Action, obs: Observation) -> Action:
    """Bind role symbols (``target``, ``goal``) to concrete entities."""
    arg = action.arg
    if arg == "goal":
        return Action(action.kind, obs.goal)
    if arg == "target":
        names = obs.visible_names
        for t in obs.pending:
            if t in names:
                return Action(action.kind, t)
        focus = _focus(obs)
        return Action(action.kind, focus if focus else obs.targets[0])
    return action


def first_match(rules, obs: Observation) -> Action | None:
    for rule in rules:
        if rule.fires(obs):
            return resolve_action(rule.action, obs)
    return None
