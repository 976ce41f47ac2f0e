"""Command-line entry point: ``skill-anneal {train,eval,schedule,ablate}``."""

from __future__ import annotations

import argparse
import sys

from .config import RunConfig, load_config
from .curriculum import budget_schedule
from .harness import ABLATION_PRESETS, evaluate, format_ablation, run_ablation, train
from .mini_world import CATEGORIES, load_layout
from .policy import load_checkpoint
from .skill_bank import load_bank


def _base_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    if getattr(args, "workers", None):
        changes["workers"] = args.workers
    return cfg.replace(**changes) if changes else cfg


def _parse_skills(choice: str, ids) -> tuple[int, ...]:
    if choice == "all":
        return tuple(ids)
    if choice == "none":
        return ()
    chosen = tuple(sorted({int(v) for v in choice.split(",") if v.strip()}))
    unknown = set(chosen) - set(ids)
    if unknown:
        raise SystemExit(f"unknown skill ids: {sorted(unknown)}")
    return chosen


def cmd_train(args) -> int:
    cfg = _base_config(args)
    result = train(cfg)
    print(f"metrics: {result.metrics_path}")
    print(f"helpfulness: {result.helpfulness_path}")
    acc = evaluate(result.params, (), load_layout(cfg.layout_path), load_bank(cfg.skills_dir),
                   max_steps=cfg.max_steps)
    print("skill-free accuracy: " + " ".join(f"{c}={acc[c]:.3f}" for c in CATEGORIES))
    return 0


def cmd_eval(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    defaults = RunConfig()
    skills_dir = args.skills_dir or meta.get("skills_dir") or defaults.skills_dir
    layout_path = args.layout or meta.get("layout_path") or defaults.layout_path
    max_steps = int(meta.get("max_steps", defaults.max_steps))
    bank = load_bank(skills_dir)
    layout = load_layout(layout_path)
    active = _parse_skills(args.skills, bank.ids)
    acc = evaluate(params, active, layout, bank, max_steps=max_steps)
    for c in CATEGORIES:
        print(f"{c:<6} {acc[c]:.3f}")
    print(f"mean   {sum(acc.values()) / len(acc):.3f}")
    return 0


def cmd_schedule(args) -> int:
    print(budget_schedule(args.n, args.stages))
    return 0


def cmd_ablate(args) -> int:
    base = _base_config(args)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    rows = run_ablation(args.preset, base, seeds)
    print(format_ablation(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skill-anneal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the curriculum training loop")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--skills", default="none", help="all, none, or comma-separated ids")
    p.add_argument("--skills-dir", dest="skills_dir")
    p.add_argument("--layout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("schedule", help="print the skill budget per stage")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--stages", type=int, required=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("ablate", help="run an ablation preset")
    p.add_argument("--preset", required=True, choices=ABLATION_PRESETS)
    p.add_argument("--config")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
