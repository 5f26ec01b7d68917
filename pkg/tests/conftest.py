import re

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, with the measured value when recorded."""
    rows = {}
    for outcome in ("passed", "failed", "skipped", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = re.search(r"test_acceptance\.py::test_c(\d+)_(\w+)", getattr(rep, "nodeid", ""))
            if not m or (rep.when != "call" and outcome == "passed"):
                continue
            detail = dict(getattr(rep, "user_properties", [])).get("measured", "")
            if outcome == "skipped" and isinstance(rep.longrepr, tuple):
                detail = rep.longrepr[2]
            word = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
            rows[int(m.group(1))] = f"criterion {int(m.group(1)):2d} {word}  {m.group(2)}  {detail}".rstrip()
    if rows:
        terminalreporter.section("acceptance criteria")
        for key in sorted(rows):
            terminalreporter.write_line(rows[key])
