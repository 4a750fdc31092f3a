import numpy as np
import pytest

from protorect.featurestore import normalize, synth

# Desk-scale stand-in for backbone features shared by the statistical tests:
# 20 classes in 64-d, class directions concentrated around a common axis.
BENCH = dict(num_classes=20, per_class=100, dim=64, spread=0.08, seed=1, concentration=3.0)


@pytest.fixture(scope="session")
def bench_fs():
    return synth(**BENCH)


@pytest.fixture(scope="session")
def bench_view(bench_fs):
    return normalize(bench_fs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from oracles import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
