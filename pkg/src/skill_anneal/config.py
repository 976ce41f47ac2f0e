"""Run configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .curriculum import SELECTION_MODES
from .policy import DEFAULT_GRID, PolicyError, check_grid


class ConfigInvalid(ValueError):
    pass


def packaged_skills_dir() -> Path:
    return Path(str(resources.files("skill_anneal") / "data" / "skills"))


def packaged_layout_path() -> Path:
    return Path(str(resources.files("skill_anneal") / "data" / "layout.txt"))


@dataclass
class RunConfig:
    seed: int = 0
    total_steps: int = 300
    stages: int = 3
    val_interval: int = 10
    group_size: int = 8
    tasks_per_batch: int = 16
    lam: float = 0.0
    beta: float = 0.01
    eps_clip: float = 0.2
    lr: float = 3.0
    max_steps: int = 12
    compression_grid: tuple[float, ...] = DEFAULT_GRID
    skills_dir: str = ""
    layout_path: str = ""
    out_dir: str = "runs/default"
    budget_override: tuple[int, ...] | None = None
    selection_mode: str = "skill0"
    # knobs outside the core contract
    workers: int = 1
    eval_interval: int = 10
    record_wall_ms: bool = False
    condition_on: str = "active"
    hint_prior: float = 3.0
    init_scale: float = 0.25

    def __post_init__(self):
        if not self.skills_dir:
            self.skills_dir = str(packaged_skills_dir())
        if not self.layout_path:
            self.layout_path = str(packaged_layout_path())
        self.compression_grid = tuple(float(c) for c in self.compression_grid)
        if self.budget_override is not None:
            self.budget_override = tuple(int(m) for m in self.budget_override)
        self.validate()

    def validate(self) -> None:
        counts = ("total_steps", "stages", "val_interval", "group_size", "tasks_per_batch", "max_steps",
                  "workers", "eval_interval")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be >= 1")
        if self.stages < 2:
            raise ConfigInvalid("stages must be >= 2")
        if self.total_steps < self.stages:
            raise ConfigInvalid("total_steps must be at least the number of stages")
        if self.group_size < 2:
            raise ConfigInvalid("group_size must be >= 2 for group-normalized advantages")
        if self.lam < 0 or self.beta < 0:
            raise ConfigInvalid("lam and beta must be non-negative")
        if not 0 < self.eps_clip < 1:
            raise ConfigInvalid("eps_clip must lie in (0, 1)")
        if self.hint_prior < 0 or self.init_scale < 0:
            raise ConfigInvalid("hint_prior and init_scale must be non-negative")
        if self.lr < 0:
            raise ConfigInvalid("lr must be non-negative")
        if self.selection_mode not in SELECTION_MODES:
            raise ConfigInvalid(f"selection_mode must be one of {SELECTION_MODES}")
        if self.condition_on not in ("active", "single"):
            raise ConfigInvalid("condition_on must be 'active' or 'single'")
        try:
            check_grid(self.compression_grid)
        except PolicyError as exc:
            raise ConfigInvalid(str(exc)) from None
        m = self.budget_override
        if m is not None:
            if len(m) != self.stages:
                raise ConfigInvalid(f"budget_override needs {self.stages} entries, got {len(m)}")
            if any(x < 0 for x in m) or any(b > a for a, b in zip(m, m[1:])):
                raise ConfigInvalid("budget_override must be non-negative and non-increasing")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    default = _FIELDS[name].default
    if name == "compression_grid":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if name == "budget_override":
        raw = raw.strip()
        if raw.lower() in ("", "none"):
            return None
        return tuple(int(v) for v in raw.replace("[", "").replace("]", "").split(",") if v.strip())
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigInvalid(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, base_dir: str | Path | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value'")
        if key not in _FIELDS:
            raise ConfigInvalid(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw.strip())
        except ValueError as exc:
            raise ConfigInvalid(f"line {lineno}: {exc}") from None
    if base_dir is not None:
        for key in ("skills_dir", "layout_path"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str(Path(base_dir) / values[key])
    return RunConfig(**values)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if name == "compression_grid":
            value = ",".join(repr(c) for c in value)
        elif name == "budget_override":
            value = "none" if value is None else ",".join(str(m) for m in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
