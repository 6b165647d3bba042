import numpy as np
import pytest

from sfuda.data import shifted_blobs
from sfuda.model import pretrain_source


@pytest.fixture(scope="session")
def standard_task():
    """Seed-0 standard task: (frozen source model, target dataset)."""
    source, target = shifted_blobs(0)
    model = pretrain_source(source.inputs, source.labels, source.n_classes, epochs=100, seed=0)
    return model, target


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, passed, detail):
        lines.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
