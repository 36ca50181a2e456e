import pytest

from ditsched.packing import MicroBatch
from ditsched.workload import IMAGE, T2V, MediaSpec, WorkItem


def make_items(lengths, stage=0):
    """Synthetic work items with the given token counts; media is a placeholder."""
    return [WorkItem(i, IMAGE, T2V, stage, n, MediaSpec.image(16, 16)) for i, n in enumerate(lengths)]


def make_mbs(lengths, capacity=None):
    """One single-item micro-batch per length, ids 0..n-1."""
    cap = capacity or max(lengths)
    return [MicroBatch(i, (i,), (n,), cap) for i, n in enumerate(lengths)]


@pytest.fixture
def items_factory():
    return make_items


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
