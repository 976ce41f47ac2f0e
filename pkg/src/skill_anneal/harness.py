"""Curriculum training loop, evaluation and ablation presets."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import ConfigInvalid, RunConfig, format_config
from .curriculum import (
    budget_schedule,
    filter_rank_select,
    group_validation,
    helpfulness_report,
    stage_index,
    step_in_stage,
    validate_accuracy,
)
from .encoder import ContextEncoder, feature_layout
from .grpo import Trajectory, apply_update, loss_and_grad, make_group, rollout
from .mini_world import CATEGORIES, UnknownCategory, all_tasks, enumerate_tasks, load_layout, sample_task
from .policy import PolicyParams, save_checkpoint, snapshot
from .skill_bank import check_bank, load_bank, rules_for

METRICS_FILE = "metrics.csv"
HELPFULNESS_FILE = "helpfulness.csv"
CHECKPOINT_FILE = "policy.npz"
HELPFULNESS_HEADER = ["step", "stage", "k", "acc_with", "acc_without", "delta", "selected"]
ABLATION_PRESETS = ("budgets", "filter_rank", "interval")


class UnknownPreset(ValueError):
    pass


class TrainResult(NamedTuple):
    params: PolicyParams
    metrics_path: Path
    helpfulness_path: Path


def metrics_header() -> list[str]:
    return (
        ["step", "stage", "budget", "active_count", "mean_return", "mean_success", "mean_log_c"]
        + [f"acc_with_{c}" for c in CATEGORIES]
        + [f"acc_without_{c}" for c in CATEGORIES]
        + ["wall_ms"]
    )


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def derive_seed(*parts: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(p) for p in parts])


def init_params(layout, grid, hint_prior: float = 0.0, init_scale: float = 0.0, seed: int = 0) -> PolicyParams:
    """Action-head weights drawn from N(0, init_scale^2), plus ``hint_prior`` on
    the hint->action diagonal. The compression head starts at zero."""
    blocks = feature_layout(layout)
    params = PolicyParams.zeros(blocks.dim, len(layout.actions), grid)
    if init_scale:
        rng = np.random.default_rng(derive_seed(seed, 11))
        params.W_a = init_scale * rng.standard_normal(params.W_a.shape)
    if hint_prior:
        idx = np.arange(len(layout.actions))
        params.W_a[blocks.hint.start + idx, idx] = hint_prior
    return params


@dataclass
class _Context:
    layout: object
    bank: object
    cfg: RunConfig
    encoder: ContextEncoder


_WORKER: _Context | None = None


def _worker_init(cfg: RunConfig) -> None:
    global _WORKER
    layout = load_layout(cfg.layout_path)
    _WORKER = _Context(layout, load_bank(cfg.skills_dir), cfg, ContextEncoder(layout))


def _rollout_group(ctx: _Context, params, task, active, step: int, g: int) -> list[Trajectory]:
    cfg = ctx.cfg
    rules = rules_for(ctx.bank, active, task.category) if active else []
    reset_seed = int(derive_seed(cfg.seed, step, g).generate_state(1)[0])
    out = []
    for m in range(cfg.group_size):
        rng = np.random.default_rng(derive_seed(cfg.seed, step, g, m))
        out.append(rollout(params, ctx.layout, task, rules, cfg.max_steps, rng,
                           reset_seed=reset_seed, encoder=ctx.encoder))
    return out


def _rollout_group_remote(args):
    return _rollout_group(_WORKER, *args)


def evaluate(params: PolicyParams, active_ids, layout, bank, *, categories=None, max_steps: int = 12,
             encoder: ContextEncoder | None = None) -> dict[str, float]:
    """Greedy accuracy per category over every enumerated task, with exactly ``active_ids``."""
    cats = CATEGORIES if categories is None else tuple(categories)
    for c in cats:
        if c not in CATEGORIES:
            raise UnknownCategory(f"unknown category {c!r}")
    encoder = encoder or ContextEncoder(layout)
    return {
        c: validate_accuracy(params, enumerate_tasks(layout, c), active_ids, bank, layout,
                             max_steps=max_steps, encoder=encoder)
        for c in cats
    }


def train(cfg: RunConfig) -> TrainResult:
    """Run the curriculum loop and write metrics, helpfulness and a checkpoint."""
    cfg.validate()
    layout = load_layout(cfg.layout_path)
    bank = load_bank(cfg.skills_dir)
    check_bank(bank, layout)
    encoder = ContextEncoder(layout)
    ctx = _Context(layout, bank, cfg, encoder)
    N = bank.N
    budgets = list(cfg.budget_override) if cfg.budget_override else budget_schedule(N, cfg.stages)
    if len(budgets) != cfg.stages:
        raise ConfigInvalid("budget vector length must equal the number of stages")
    split = group_validation(all_tasks(layout), bank)
    all_ids = tuple(bank.ids)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    metrics_path, help_path = out / METRICS_FILE, out / HELPFULNESS_FILE

    params = init_params(layout, cfg.compression_grid, cfg.hint_prior, cfg.init_scale, cfg.seed)
    ref = snapshot(params)
    active: list[int] = list(all_ids)  # ranked order of the last selection
    select_rng = np.random.default_rng(derive_seed(cfg.seed, 7))
    pool = None
    if cfg.workers > 1:
        pool = ProcessPoolExecutor(cfg.workers, initializer=_worker_init, initargs=(cfg,))

    try:
        with open(metrics_path, "w", newline="") as mf, open(help_path, "w", newline="") as hf:
            mw, hw = csv.writer(mf, lineterminator="\n"), csv.writer(hf, lineterminator="\n")
            mw.writerow(metrics_header())
            hw.writerow(HELPFULNESS_HEADER)
            for step in range(1, cfg.total_steps + 1):
                t0 = time.perf_counter()
                stage = stage_index(step, cfg.total_steps, cfg.stages)
                t = step_in_stage(step, cfg.total_steps, cfg.stages)
                budget = budgets[stage - 1]

                if cfg.selection_mode == "full":
                    active = list(all_ids)
                    if t % cfg.val_interval == 0 and budget > 0:
                        report = helpfulness_report(params, split, active, bank, layout, step=step,
                                                    condition_on=cfg.condition_on,
                                                    max_steps=cfg.max_steps, encoder=encoder)
                        _write_report(hw, report, stage, set(active))
                elif t % cfg.val_interval == 0 and budget > 0:
                    if active:
                        report = helpfulness_report(params, split, active, bank, layout, step=step,
                                                    condition_on=cfg.condition_on,
                                                    max_steps=cfg.max_steps, encoder=encoder)
                        chosen = filter_rank_select(report, budget, cfg.selection_mode, select_rng)
                        _write_report(hw, report, stage, set(chosen))
                        active = chosen
                elif budget == 0:
                    active = []
                if cfg.selection_mode != "full" and len(active) > budget:
                    # entering a stage with a smaller budget: keep the best-ranked files
                    active = active[:budget]

                batch_rng = np.random.default_rng(derive_seed(cfg.seed, step))
                tasks = [sample_task(layout, batch_rng) for _ in range(cfg.tasks_per_batch)]
                act = tuple(sorted(active))
                jobs = [(params, task, act, step, g) for g, task in enumerate(tasks)]
                if pool is None:
                    results = [_rollout_group(ctx, *job) for job in jobs]
                else:
                    results = list(pool.map(_rollout_group_remote, jobs))
                groups = [make_group(task, trajs, cfg.lam) for task, trajs in zip(tasks, results)]

                old = snapshot(params)
                _, grad = loss_and_grad(params, old, ref, groups, cfg.eps_clip, cfg.beta)
                params = apply_update(params, grad, cfg.lr)

                trajs = [tr for g in groups for tr in g.trajectories]
                row = [step, stage, budget, len(active),
                       _fmt(np.mean([tr.composite for tr in trajs])),
                       _fmt(np.mean([tr.success for tr in trajs])),
                       _fmt(np.mean([tr.log_c_sum for tr in trajs]))]
                if step % cfg.eval_interval == 0 or step == cfg.total_steps:
                    with_acc = evaluate(params, all_ids, layout, bank, max_steps=cfg.max_steps, encoder=encoder)
                    without = evaluate(params, (), layout, bank, max_steps=cfg.max_steps, encoder=encoder)
                    row += [_fmt(with_acc[c]) for c in CATEGORIES] + [_fmt(without[c]) for c in CATEGORIES]
                else:
                    row += [""] * (2 * len(CATEGORIES))
                wall = (time.perf_counter() - t0) * 1000 if cfg.record_wall_ms else 0.0
                row.append(f"{wall:.0f}")
                mw.writerow(row)
    finally:
        if pool is not None:
            pool.shutdown()

    save_checkpoint(params, out / CHECKPOINT_FILE, meta={
        "skills_dir": cfg.skills_dir, "layout_path": cfg.layout_path, "max_steps": cfg.max_steps,
    })
    return TrainResult(params, metrics_path, help_path)


def _write_report(writer, report, stage: int, selected: set[int]) -> None:
    for k in sorted(report.delta):
        writer.writerow([report.step, stage, k, _fmt(report.acc_with[k]), _fmt(report.acc_without[k]),
                         _fmt(report.delta[k]), int(k in selected)])


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def final_accuracy(run_dir) -> dict[str, dict[str, float]]:
    """Last evaluated per-category accuracies of a finished run."""
    rows = [r for r in read_csv(Path(run_dir) / METRICS_FILE) if r[f"acc_with_{CATEGORIES[0]}"] != ""]
    last = rows[-1]
    return {
        "with": {c: float(last[f"acc_with_{c}"]) for c in CATEGORIES},
        "without": {c: float(last[f"acc_without_{c}"]) for c in CATEGORIES},
    }


def ablation_grid(preset: str, base: RunConfig, N: int) -> dict[str, RunConfig]:
    if preset == "budgets":
        S = base.stages
        half = math.ceil(N / 2)
        return {
            "skill0": base.replace(selection_mode="skill0", budget_override=None),
            f"static_{N}": base.replace(selection_mode="skill0", budget_override=(N,) * S),
            f"static_{half}": base.replace(selection_mode="skill0", budget_override=(half,) * S),
            "static_0": base.replace(selection_mode="skill0", budget_override=(0,) * S),
            "fixed_full": base.replace(selection_mode="full", budget_override=None),
        }
    if preset == "filter_rank":
        return {m: base.replace(selection_mode=m, budget_override=None) for m in ("skill0", "no_filter", "no_rank")}
    if preset == "interval":
        return {f"d{d}": base.replace(val_interval=d) for d in (5, 10, 20)}
    raise UnknownPreset(f"unknown ablation preset {preset!r}; choose from {ABLATION_PRESETS}")


@dataclass
class AblationRow:
    name: str
    seeds: tuple[int, ...]
    skill_free: float
    skill_augmented: float

    @property
    def gap(self) -> float:
        return self.skill_free - self.skill_augmented


def run_ablation(preset: str, base: RunConfig, seeds=(0, 1, 2)) -> list[AblationRow]:
    """Train every cell of a preset over ``seeds``; report seed-mean final accuracies."""
    if preset not in ABLATION_PRESETS:
        raise UnknownPreset(f"unknown ablation preset {preset!r}; choose from {ABLATION_PRESETS}")
    N = load_bank(base.skills_dir).N
    rows = []
    for name, cfg in ablation_grid(preset, base, N).items():
        free, aug = [], []
        for seed in seeds:
            run = cfg.replace(seed=seed, out_dir=str(Path(base.out_dir) / preset / name / f"seed{seed}"))
            train(run)
            acc = final_accuracy(run.out_dir)
            free.append(np.mean(list(acc["without"].values())))
            aug.append(np.mean(list(acc["with"].values())))
        rows.append(AblationRow(name, tuple(seeds), float(np.mean(free)), float(np.mean(aug))))
    return rows


def format_ablation(rows: list[AblationRow]) -> str:
    lines = [f"{'setting':<14}{'w/ skills':>11}{'w/o skills':>12}{'gap':>9}"]
    for r in rows:
        lines.append(f"{r.name:<14}{r.skill_augmented:>11.3f}{r.skill_free:>12.3f}{r.gap:>+9.3f}")
    return "\n".join(lines)
