"""Group rollouts, composite reward, group-normalized advantages and the
clipped, KL-regularized surrogate with its exact gradient.

The surrogate for one group of trajectories is

    J = 1/sum|tau_i| * sum_i sum_t [ min(rho A_i, clip(rho, 1-eps, 1+eps) A_i)
                                     - beta * KL(pi_theta || pi_ref)(x_it) ]

with rho = exp(log pi_theta - log pi_old). Groups are averaged. The caller
ascends J.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import ContextEncoder
from .mini_world import Observation, Task, WorldLayout, WorldState, reset, step
from .policy import (
    Decision,
    PolicyParams,
    ShapeMismatch,
    greedy_decision,
    head_log_probs,
    sample_decision,
)

ADV_EPS = 1e-8


class GroupTooSmall(ValueError):
    pass


class NonFinite(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryStep:
    features: np.ndarray
    decision: Decision
    observation: Observation  # observation after the action


@dataclass
class Trajectory:
    task: Task
    steps: list[TrajectoryStep] = field(default_factory=list)
    success: bool = False
    final_state: WorldState | None = None
    composite: float = 0.0

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def factors(self) -> list[float]:
        return [s.decision.factor for s in self.steps]

    @property
    def log_c_sum(self) -> float:
        return sum(math.log(c) for c in self.factors)


@dataclass
class TrajectoryGroup:
    task: Task
    trajectories: list[Trajectory]
    advantages: np.ndarray


def rollout(
    params_old: PolicyParams,
    layout: WorldLayout,
    task: Task,
    rules,
    max_steps: int,
    rng: np.random.Generator | None = None,
    *,
    reset_seed: int | None = None,
    greedy: bool = False,
    encoder: ContextEncoder | None = None,
) -> Trajectory:
    """Play one episode. The factor chosen at step t compresses step t+1's context."""
    if reset_seed is None:
        if rng is None:
            raise ValueError("need an rng or an explicit reset_seed")
        reset_seed = int(rng.integers(2**63))
    if not greedy and rng is None:
        raise ValueError("sampling rollouts need an rng")
    encoder = encoder or ContextEncoder(layout)
    state, obs = reset(layout, task, reset_seed, max_steps)
    traj = Trajectory(task, final_state=state)
    if max_steps <= 0:
        return traj
    actions = layout.actions
    history: list[tuple[Observation, object]] = []
    c = 1.0
    done = False
    while not done:
        x = encoder.encode(history, obs, rules, c)
        decision = greedy_decision(params_old, x) if greedy else sample_decision(params_old, x, rng)
        action = actions[decision.action]
        state, nxt, done, success = step(state, action)
        traj.steps.append(TrajectoryStep(x, decision, nxt))
        history.append((obs, action))
        obs, c = nxt, decision.factor
        traj.success = success
    traj.final_state = state
    return traj


def composite_return(traj: Trajectory, lam: float) -> float:
    """Success indicator plus ``lam * sum ln c_t``, all zero on failure."""
    if not traj.success:
        return 0.0
    return 1.0 + lam * traj.log_c_sum


def group_advantages(returns) -> np.ndarray:
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise GroupTooSmall(f"need at least 2 returns, got {r.size}")
    std = r.std()
    if std < ADV_EPS:
        return np.zeros_like(r)
    return (r - r.mean()) / (std + ADV_EPS)


def make_group(task: Task, trajectories: list[Trajectory], lam: float) -> TrajectoryGroup:
    for tr in trajectories:
        tr.composite = composite_return(tr, lam)
    adv = group_advantages([tr.composite for tr in trajectories])
    return TrajectoryGroup(task, trajectories, adv)


def _stack(groups: list[TrajectoryGroup]):
    feats, acts, facs, old, adv, weight = [], [], [], [], [], []
    live = [g for g in groups if sum(len(t) for t in g.trajectories) > 0]
    for g in live:
        total = sum(len(t) for t in g.trajectories)
        for tr, a_i in zip(g.trajectories, g.advantages):
            for s in tr.steps:
                feats.append(s.features)
                acts.append(s.decision.action)
                facs.append(s.decision.factor_index)
                old.append(s.decision.logp)
                adv.append(a_i)
                weight.append(1.0 / (total * len(live)))
    return (
        np.array(feats).reshape(len(feats), -1),
        np.array(acts, dtype=int),
        np.array(facs, dtype=int),
        np.array(old, dtype=float),
        np.array(adv, dtype=float),
        np.array(weight, dtype=float),
    )


def loss_and_grad(
    params: PolicyParams,
    params_old: PolicyParams,
    params_ref: PolicyParams,
    groups: list[TrajectoryGroup],
    eps_clip: float,
    beta: float,
) -> tuple[float, PolicyParams]:
    """Objective value and its exact gradient w.r.t. ``params``.

    ``params_old`` is not read: the behaviour log-probs were stored at rollout
    time. It is accepted so callers can check shapes.
    """
    if not (params.same_shape(params_old) and params.same_shape(params_ref)):
        raise ShapeMismatch("params, params_old and params_ref must share shapes")
    X, acts, facs, old, adv, w = _stack(groups)
    if X.shape[0] == 0:
        return 0.0, params.zeros_like()
    if X.shape[1] != params.dim:
        raise ShapeMismatch(f"stored features have dim {X.shape[1]}, params expect {params.dim}")
    n = X.shape[0]
    rows = np.arange(n)
    lp_a, lp_c = head_log_probs(params, X)
    logp = lp_a[rows, acts] + lp_c[rows, facs]
    ratio = np.exp(logp - old)
    clipped = np.clip(ratio, 1.0 - eps_clip, 1.0 + eps_clip)
    unclipped_term = ratio * adv
    surr = np.minimum(unclipped_term, clipped * adv)
    # gradient flows only where the unclipped branch is the minimum
    active = unclipped_term <= clipped * adv
    coef = w * np.where(active, unclipped_term, 0.0)

    p_a, p_c = np.exp(lp_a), np.exp(lp_c)
    g_a = -coef[:, None] * p_a
    g_a[rows, acts] += coef
    g_c = -coef[:, None] * p_c
    g_c[rows, facs] += coef

    objective = float(np.sum(w * surr))
    if beta:
        ref_a, ref_c = head_log_probs(params_ref, X)
        diff_a, diff_c = lp_a - ref_a, lp_c - ref_c
        kl_a = np.sum(p_a * diff_a, axis=1)
        kl_c = np.sum(p_c * diff_c, axis=1)
        objective -= beta * float(np.sum(w * (kl_a + kl_c)))
        g_a -= beta * w[:, None] * p_a * (diff_a - kl_a[:, None])
        g_c -= beta * w[:, None] * p_c * (diff_c - kl_c[:, None])

    grad = PolicyParams(X.T @ g_a, X.T @ g_c, params.grid)
    if not (math.isfinite(objective) and np.all(np.isfinite(grad.W_a)) and np.all(np.isfinite(grad.W_c))):
        raise NonFinite("objective or gradient is not finite")
    return objective, grad


def apply_update(params: PolicyParams, gradient: PolicyParams, lr: float) -> PolicyParams:
    """One gradient-ascent step; returns a new parameter object."""
    if not params.same_shape(gradient):
        raise ShapeMismatch("gradient shape differs from params")
    new = PolicyParams(params.W_a + lr * gradient.W_a, params.W_c + lr * gradient.W_c, params.grid)
    if not (np.all(np.isfinite(new.W_a)) and np.all(np.isfinite(new.W_c))):
        raise NonFinite("update produced non-finite weights")
    return new


def mean_kl_to(params: PolicyParams, ref: PolicyParams, groups: list[TrajectoryGroup]) -> float:
    """Mean per-step KL(params || ref) over the stored rollout features."""
    X = _stack(groups)[0]
    if X.shape[0] == 0:
        return 0.0
    lp_a, lp_c = head_log_probs(params, X)
    rf_a, rf_c = head_log_probs(ref, X)
    kl = np.sum(np.exp(lp_a) * (lp_a - rf_a), axis=1) + np.sum(np.exp(lp_c) * (lp_c - rf_c), axis=1)
    return float(kl.mean())
