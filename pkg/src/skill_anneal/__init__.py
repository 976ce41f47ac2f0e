"""Skill-annealed in-context RL on a small text world.

A linear-softmax agent is trained with group-relative policy optimization
while a bank of rule files supplies action hints. A helpfulness-driven
curriculum withdraws the hints stage by stage until the agent acts
skill-free.
"""

from .config import RunConfig, load_config
from .curriculum import budget_schedule, filter_rank_select
from .harness import evaluate, train

__all__ = ["RunConfig", "budget_schedule", "evaluate", "filter_rank_select", "load_config", "train"]
__version__ = "0.1.0"
