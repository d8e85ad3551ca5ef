import numpy as np
import pytest

from popkit.simulate import TruthSpec, simulate_dataset


@pytest.fixture(scope="session")
def reference_data():
    data, theta = simulate_dataset(TruthSpec.reference(), 12, seed=11)
    return data, theta


@pytest.fixture(scope="session")
def small_data():
    truth = TruthSpec.reference()
    data, theta = simulate_dataset(truth, 4, seed=5)
    return data, theta


def random_state(rng, n):
    from popkit.model import ChainState

    theta = np.column_stack([
        rng.normal(np.log(2.79), 0.3, n),
        rng.normal(np.log(31.61), 0.2, n),
        rng.normal(np.log(1.38), 0.4, n),
    ])
    return ChainState(theta, rng.normal(0, 1.5), rng.uniform(0.005, 0.2),
                      theta.mean(axis=0) + rng.normal(0, 0.1, 3), rng.uniform(0.02, 0.5, 3))


# acceptance results, printed as one PASS/FAIL line per criterion at the end of the run
ACCEPTANCE_LINES = {}


def record_criterion(number, title, passed, detail):
    ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
