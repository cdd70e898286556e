import numpy as np
import pytest
from hypothesis import settings

from erbtool.replay import Experience, ReplayBuffer

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_buffer(rng: np.random.Generator, n: int, obs_dim: int = 3, num_actions: int = 4, env_id: str = "e") -> ReplayBuffer:
    exps = []
    for _ in range(n):
        exps.append(
            Experience(
                rng.standard_normal(obs_dim),
                int(rng.integers(num_actions)),
                float(rng.standard_normal()),
                rng.standard_normal(obs_dim),
                bool(rng.random() < 0.2),
            )
        )
    return ReplayBuffer(obs_dim, num_actions, env_id, None, exps)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        # lines look like "[PASS] 3. title: detail"
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("] ", 1)[1].split(".", 1)[0])):
            terminalreporter.write_line(line)
