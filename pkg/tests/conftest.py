import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aesthlab.tabular import LabeledDataset, LinearGenerator, ProductPairsGenerator, synth_dataset

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_dataset(X, y, names=None):
    X = np.asarray(X, dtype=float)
    names = names or tuple(f"f{j + 1}" for j in range(X.shape[1]))
    return LabeledDataset(tuple(names), X, np.asarray(y, dtype=float))


@pytest.fixture(scope="session")
def pp_small():
    return synth_dataset(200, 5, ProductPairsGenerator(((0, 1), (2, 3)), 0.05), seed=1)


@pytest.fixture(scope="session")
def linear_small():
    return synth_dataset(200, 3, LinearGenerator((2.0, 3.0, -1.0), 1.0, 0.0), seed=2)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
