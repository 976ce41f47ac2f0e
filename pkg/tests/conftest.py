import numpy as np
import pytest

from skill_anneal.config import packaged_skills_dir
from skill_anneal.encoder import ContextEncoder, feature_layout
from skill_anneal.mini_world import default_layout
from skill_anneal.policy import PolicyParams
from skill_anneal.skill_bank import load_bank


@pytest.fixture(scope="session")
def layout():
    return default_layout()


@pytest.fixture(scope="session")
def bank():
    return load_bank(packaged_skills_dir())


@pytest.fixture(scope="session")
def encoder(layout):
    return ContextEncoder(layout)


def hint_follower(layout, strength: float = 10.0) -> PolicyParams:
    """Params whose argmax copies the hint block; zero elsewhere."""
    blocks = feature_layout(layout)
    params = PolicyParams.zeros(blocks.dim, len(layout.actions))
    idx = np.arange(len(layout.actions))
    params.W_a[blocks.hint.start + idx, idx] = strength
    return params


@pytest.fixture(scope="session")
def follower(layout):
    return hint_follower(layout)


# acceptance criteria record one line each; printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
