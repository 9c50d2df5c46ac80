from __future__ import annotations

import pytest

from sotifreq.perception import Harness, SequenceConfig, generate_sequences


@pytest.fixture(scope="session")
def small_harness():
    """Two short sequences, enough for fast harness checks."""
    cfg = SequenceConfig(n_frames=30, n_objects=4)
    return Harness(generate_sequences(cfg, 2, seed=5))


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion and print it."""
    store = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        store[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE_KEY, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for n in sorted(store):
            terminalreporter.write_line(store[n])
