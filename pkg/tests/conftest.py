import numpy as np
import pytest

from lmutree.core import Transition

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def make_records(X, q, actions=None, rewards=None, dones=None):
    """Transitions over observations X with labels q; next_obs is the following row."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    actions = np.zeros(n, dtype=int) if actions is None else actions
    out = []
    for i in range(n):
        nxt = X[i + 1] if i + 1 < n else X[i]
        out.append(Transition(X[i], int(actions[i]), 0.0 if rewards is None else rewards[i], nxt, float(q[i]),
                              bool(dones[i]) if dones is not None else False))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mc_teacher():
    from lmutree.teacher import default_config, train_teacher

    return train_teacher("mountain-car", default_config("mountain-car", seed=0))
