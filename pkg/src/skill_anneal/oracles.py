"""Brute-force references: BFS plans, exhaustive subset selection and
central finite differences. Slow by design; used by tests."""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .mini_world import DEFAULT_MAX_STEPS, Action, Task, WorldLayout, WorldState, apply_action, goal_reached, reset

MAX_SELECT_ITEMS = 20
MAX_BFS_DEPTH = 12


class Unsolvable(Exception):
    pass


class TooLarge(ValueError):
    pass


class NonFinite(ValueError):
    pass


@dataclass(frozen=True)
class Plan:
    actions: tuple[Action, ...]

    @property
    def length(self) -> int:
        return len(self.actions)

    def __len__(self) -> int:
        return len(self.actions)


def _key(state: WorldState):
    return (state.location, state.holding, state.object_locations, state.flags, state.placed_count)


def bfs_solve(layout: WorldLayout, task: Task, seed: int, max_steps: int = DEFAULT_MAX_STEPS) -> Plan:
    """Shortest plan from the seeded reset state.

    Successors are expanded in sorted action order, so the first plan found
    is also the lexicographically smallest among the shortest ones.
    """
    depth = min(max_steps, MAX_BFS_DEPTH)
    start, _ = reset(layout, task, seed, max(max_steps, 1))
    if goal_reached(start):
        return Plan(())
    actions = sorted(layout.actions)
    seen = {_key(start)}
    frontier = deque([(start, ())])
    while frontier:
        state, path = frontier.popleft()
        if len(path) >= depth:
            continue
        for a in actions:
            nxt = apply_action(state, a)
            k = _key(nxt)
            if k in seen:
                continue
            plan = path + (a,)
            if goal_reached(nxt):
                return Plan(plan)
            seen.add(k)
            frontier.append((nxt, plan))
    raise Unsolvable(f"no plan for {task.instruction} within {depth} steps")


def brute_force_select(delta, budget: int) -> frozenset[int]:
    """Best subset of the positive-delta items of size <= budget, by enumeration."""
    if budget < 0:
        raise ValueError("budget must be non-negative")
    delta = dict(delta)
    if len(delta) > MAX_SELECT_ITEMS:
        raise TooLarge(f"refusing to enumerate {len(delta)} items (limit {MAX_SELECT_ITEMS})")
    ids = sorted(delta)
    best, best_val = (), 0.0
    for size in range(0, min(budget, len(ids)) + 1):
        for combo in itertools.combinations(ids, size):
            if any(delta[k] <= 0 for k in combo):
                continue
            val = math.fsum(delta[k] for k in combo)
            if val > best_val or (val == best_val and combo < best):
                best, best_val = combo, val
    return frozenset(best)


def selection_value(delta, chosen) -> float:
    """Exactly rounded sum, so the value does not depend on member order."""
    return math.fsum(delta[k] for k in chosen)


def finite_diff_grad(f, params: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at a flat parameter vector."""
    theta = np.asarray(params, dtype=float)
    grad = np.zeros_like(theta)
    flat = grad.reshape(-1)
    probe = theta.copy().reshape(-1)
    for j in range(probe.size):
        orig = probe[j]
        probe[j] = orig + step
        hi = f(probe.reshape(theta.shape))
        probe[j] = orig - step
        lo = f(probe.reshape(theta.shape))
        probe[j] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NonFinite(f"f is not finite around coordinate {j}")
        flat[j] = (hi - lo) / (2 * step)
    return grad
