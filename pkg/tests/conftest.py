import os
import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


def _criterion_key(line):
    label = line.split("criterion ")[1].split(":")[0]
    return int(re.match(r"\d+", label).group()), label


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=_criterion_key):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion and assert on it.

    ``verdict(label, checks, detail)`` takes a mapping of named booleans.  A
    test that errors before reaching its verdict is still reported.
    """
    reported = []

    def report(label, checks, detail=""):
        failed = [name for name, ok in checks.items() if not ok]
        status = "FAIL" if failed else "PASS"
        line = f"{status} criterion {label}: {detail}"
        if failed:
            line += f" [failed: {', '.join(failed)}]"
        request.config.acceptance_lines.append(line)
        print(line)
        reported.append(label)
        assert not failed, line

    yield report
    if not reported:
        label = request.node.name.replace("test_criterion_", "").split("_")[0].lstrip("0")
        request.config.acceptance_lines.append(f"FAIL criterion {label}: did not reach a verdict")
