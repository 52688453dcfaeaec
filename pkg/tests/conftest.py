import numpy as np
import pytest

from cci_lab.data import generate_dataset
from cci_lab.mdp import epsilon_greedy, gridworld, optimal_q


@pytest.fixture(scope="session")
def grid_setup():
    mdp = gridworld(5, 5)
    behavior = epsilon_greedy(optimal_q(mdp), 0.2)
    data = generate_dataset(mdp, behavior, 20_000, 100, seed=0, mdp_id="gridworld:5x5",
                            behavior_id="eps-greedy:0.2")
    return mdp, behavior, data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda ln: int(ln.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
