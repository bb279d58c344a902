import time

import numpy as np
import pytest

from captionkit.experiments import overfit_run


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def overfit(tmp_path_factory):
    """Toy-default model overfit on the 8-pair, seed-7 fixture, timed."""
    start = time.perf_counter()
    report = overfit_run(tmp_path_factory.mktemp("fx8"), pairs=8, seed=7)
    return report, time.perf_counter() - start


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def accept(request):
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def record(cid: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {cid:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
