from __future__ import annotations

import re

import pytest

from macfi.deskmodel import build_desk_dataset, build_desk_model, write_desk_bundle
from macfi.planner import plan_model

from helpers import make_cin4_model, make_dataset_for

_ACCEPT = re.compile(r"test_criterion_(\d+)_([a-z0-9_]+)")


def pytest_report_teststatus(report, config):
    """Replace the verbose-mode status word with an acceptance verdict line."""
    m = _ACCEPT.search(report.nodeid)
    if m is None:
        return None
    label = f"ACCEPTANCE {int(m.group(1))} {m.group(2)}"
    if report.when == "call":
        if report.passed:
            return "passed", ".", f"{label}: PASS"
        if report.failed:
            return "failed", "F", f"{label}: FAIL"
        return "skipped", "s", f"{label}: SKIP"
    if report.failed:  # fixture error counts as a failed criterion
        return "error", "E", f"{label}: FAIL"
    return None


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One ACCEPTANCE line per criterion, printed outside capture in any mode."""
    verdicts: dict[tuple[int, str], str] = {}
    for reports in terminalreporter.stats.values():
        for rep in reports:
            m = _ACCEPT.search(getattr(rep, "nodeid", ""))
            when = getattr(rep, "when", None)
            if m is None or when not in ("call", "setup"):
                continue
            outcome = getattr(rep, "outcome", "")
            if when == "setup" and outcome == "passed":
                continue
            key = (int(m.group(1)), m.group(2))
            verdicts[key] = "PASS" if outcome == "passed" else "FAIL"
    if verdicts:
        terminalreporter.write_sep("-", "acceptance criteria")
        for (n, name), verdict in sorted(verdicts.items()):
            terminalreporter.write_line(f"ACCEPTANCE {n} {name}: {verdict}")


@pytest.fixture(scope="session")
def desk_graph():
    return build_desk_model()


@pytest.fixture(scope="session")
def desk_dataset(desk_graph):
    return build_desk_dataset(desk_graph, 32)


@pytest.fixture(scope="session")
def desk_plan(desk_graph):
    return plan_model(desk_graph)


@pytest.fixture(scope="session")
def desk_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    return write_desk_bundle(str(out), 32)


@pytest.fixture(scope="session")
def cin4_graph():
    return make_cin4_model()


@pytest.fixture(scope="session")
def cin4_plan(cin4_graph):
    return plan_model(cin4_graph)


@pytest.fixture(scope="session")
def cin4_dataset(cin4_graph):
    return make_dataset_for(cin4_graph, 16, seed=99)
