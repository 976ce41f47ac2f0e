"""Skill-budget schedule, relevance grouping, helpfulness and selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import ContextEncoder
from .grpo import rollout
from .mini_world import CATEGORIES, DEFAULT_MAX_STEPS, Task, WorldLayout
from .policy import PolicyParams
from .skill_bank import GENERAL, SkillBank, rules_for

VALIDATION_SEED = 20240917
SELECTION_MODES = ("skill0", "full", "no_filter", "no_rank")


class CurriculumError(ValueError):
    pass


class InvalidStages(CurriculumError):
    pass


class InvalidStep(CurriculumError):
    pass


class UncoveredCategory(CurriculumError):
    pass


class EmptyTaskSet(CurriculumError):
    pass


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def budget_schedule(N: int, N_S: int) -> list[int]:
    """``M[s] = ceil(N * (N_S - s) / (N_S - 1))`` for s = 1..N_S, exact integers."""
    if N_S < 2:
        raise InvalidStages(f"need at least 2 stages, got {N_S}")
    if N < 1:
        raise CurriculumError(f"need at least one skill file, got {N}")
    return [_ceil_div(N * (N_S - s), N_S - 1) for s in range(1, N_S + 1)]


def stage_length(total_steps: int, N_S: int) -> int:
    length = total_steps // N_S
    if length < 1:
        raise InvalidStep(f"total_steps={total_steps} leaves no steps for {N_S} stages")
    return length


def stage_index(step: int, total_steps: int, N_S: int) -> int:
    """1-based stage of a 1-based step; the remainder joins the last stage."""
    if not 1 <= step <= total_steps:
        raise InvalidStep(f"step {step} outside [1, {total_steps}]")
    return min(N_S, 1 + (step - 1) // stage_length(total_steps, N_S))


def step_in_stage(step: int, total_steps: int, N_S: int) -> int:
    stage = stage_index(step, total_steps, N_S)
    return step - (stage - 1) * stage_length(total_steps, N_S)


def group_validation(tasks, bank: SkillBank) -> dict[int, list[Task]]:
    """Assign every task to exactly one skill file.

    A task goes to the lowest-id file of its category. When the bank has
    general files, each category's tasks are dealt round-robin over
    ``[that file, *general files]`` so general files see a uniform mixture.
    """
    owner: dict[str, int] = {}
    for f in bank.files:
        if f.category != GENERAL and f.category not in owner:
            owner[f.category] = f.id
    general = [f.id for f in bank.files if f.category == GENERAL]
    split: dict[int, list[Task]] = {f.id: [] for f in bank.files}
    dealt: dict[str, int] = {}
    for task in tasks:
        if task.category not in owner:
            raise UncoveredCategory(f"no skill file for category {task.category!r}")
        receivers = [owner[task.category]] + general
        i = dealt.get(task.category, 0)
        split[receivers[i % len(receivers)]].append(task)
        dealt[task.category] = i + 1
    return split


def validation_seed(task: Task, base: int = VALIDATION_SEED) -> int:
    return int(np.random.SeedSequence([base, task.stable_hash()]).generate_state(1)[0])


def validate_accuracy(
    params: PolicyParams,
    tasks,
    active_ids,
    bank: SkillBank,
    layout: WorldLayout,
    *,
    max_steps: int = DEFAULT_MAX_STEPS,
    seed: int = VALIDATION_SEED,
    encoder: ContextEncoder | None = None,
) -> float:
    """Fraction of ``tasks`` solved by greedy rollouts with the given skills."""
    tasks = list(tasks)
    if not tasks:
        raise EmptyTaskSet("validation needs at least one task")
    encoder = encoder or ContextEncoder(layout)
    active = sorted(active_ids)
    solved = 0
    for task in tasks:
        rules = rules_for(bank, active, task.category) if active else []
        traj = rollout(
            params, layout, task, rules, max_steps,
            reset_seed=validation_seed(task, seed), greedy=True, encoder=encoder,
        )
        solved += traj.success
    return solved / len(tasks)


@dataclass
class HelpfulnessReport:
    acc_with: dict[int, float]
    acc_without: dict[int, float]
    step: int = 0
    active: tuple[int, ...] = ()
    delta: dict[int, float] = field(init=False)

    def __post_init__(self):
        self.delta = {k: self.acc_with[k] - self.acc_without[k] for k in self.acc_with}


def helpfulness_report(
    params: PolicyParams,
    split: dict[int, list[Task]],
    active_ids,
    bank: SkillBank,
    layout: WorldLayout,
    *,
    step: int = 0,
    condition_on: str = "active",
    max_steps: int = DEFAULT_MAX_STEPS,
    seed: int = VALIDATION_SEED,
    encoder: ContextEncoder | None = None,
) -> HelpfulnessReport:
    """Per active file k: accuracy on its sub-task with skills minus without.

    ``condition_on="active"`` validates with the whole active set; ``"single"``
    provides file k alone.
    """
    active = tuple(sorted(active_ids))
    if not active:
        raise CurriculumError("helpfulness needs a non-empty active set")
    if condition_on not in ("active", "single"):
        raise CurriculumError(f"unknown conditioning {condition_on!r}")
    encoder = encoder or ContextEncoder(layout)
    kw = dict(max_steps=max_steps, seed=seed, encoder=encoder)
    acc_with, acc_without = {}, {}
    for k in active:
        tasks = split[k]
        with_ids = active if condition_on == "active" else (k,)
        acc_with[k] = validate_accuracy(params, tasks, with_ids, bank, layout, **kw)
        acc_without[k] = validate_accuracy(params, tasks, (), bank, layout, **kw)
    return HelpfulnessReport(acc_with, acc_without, step=step, active=active)


def filter_rank_select(report, budget: int, mode: str = "skill0", rng: np.random.Generator | None = None) -> list[int]:
    """Keep helpful files, rank by helpfulness, truncate to the budget.

    ``report`` is a HelpfulnessReport or a mapping k -> delta. Ties rank by
    ascending id. ``no_filter`` skips the positivity filter; ``no_rank``
    replaces ranking with a seeded random choice.
    """
    if budget < 0:
        raise CurriculumError("budget must be non-negative")
    delta = report.delta if isinstance(report, HelpfulnessReport) else dict(report)
    if mode == "full":
        return sorted(delta)
    if budget == 0:
        return []
    pool = sorted(delta) if mode == "no_filter" else sorted(k for k, d in delta.items() if d > 0)
    if mode == "no_rank":
        if rng is None:
            raise CurriculumError("no_rank selection needs an rng")
        picked = rng.permutation(len(pool))[:budget]
        return [pool[int(i)] for i in picked]
    if mode not in ("skill0", "no_filter"):
        raise CurriculumError(f"unknown selection mode {mode!r}")
    return sorted(pool, key=lambda k: (-delta[k], k))[:budget]


def category_splits(layout: WorldLayout) -> dict[str, list[Task]]:
    from .mini_world import enumerate_tasks

    return {c: enumerate_tasks(layout, c) for c in CATEGORIES}
