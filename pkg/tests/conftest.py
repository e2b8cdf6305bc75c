from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    from voxmap.tree import TreeConfig
    # small nodes so a few voxels already span several leaves and internal nodes
    return TreeConfig((2, 2, 2), 0.1)


# -- acceptance reporting: one PASS/FAIL/SKIP line per criterion ------------------

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = dict(report.user_properties).get("criterion")
    if name is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = dict(report.user_properties).get("detail", "")
        if report.skipped and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        _ACCEPTANCE[name] = (outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (outcome, detail) in _ACCEPTANCE.items():
        terminalreporter.write_line(f"{outcome:4s}  {name}" + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def criterion(request, record_property):
    """Tag a test as an acceptance criterion; returns a ``detail(text)`` setter."""
    m = request.node.get_closest_marker("acceptance")
    name = m.args[0] if m else request.node.name
    record_property("criterion", name)

    def detail(text: str) -> None:
        props = request.node.user_properties
        props[:] = [p for p in props if p[0] != "detail"] + [("detail", text)]
        print(f"{name}: {text}")
    return detail
